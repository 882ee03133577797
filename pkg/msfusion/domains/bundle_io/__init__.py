"""
Bundle I/O Domain

On-disk formats: keyframe bundle directories (PNG images, PFM inverse
depths, poses.txt, intrinsics.json, optional label maps and ground truth)
and ASCII PLY point clouds.
"""
