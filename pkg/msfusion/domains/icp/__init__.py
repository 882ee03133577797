"""
ICP Domain

Rigid registration of per-keyframe fused clouds (trimmed point-to-point
ICP over a k-d tree) and voxel-deduplicated merging into the global cloud.
"""
