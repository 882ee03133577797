"""
Geometry Domain

Poses, quaternion conversion, camera intrinsics and the image / point
cloud containers shared by every stage of the pipeline.
"""
