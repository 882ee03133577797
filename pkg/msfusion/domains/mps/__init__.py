"""
MPS Domain

Multispectral photometric stereo: chromaticity segmentation, per-segment
mixing matrix estimation from depth-prior normals, and dense normal
recovery n = normalize(M^-1 C).
"""
