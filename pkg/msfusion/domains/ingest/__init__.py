"""
Ingest Domain

Turns SLAM-side keyframe bundles into depth maps, prior normals and point
clouds: inverse-depth extraction, scale restoration, hole filling,
depth-gradient normals and backprojection.
"""
