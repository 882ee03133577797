"""
Synth Domain

Ground-truth oracle: analytic Lambertian scenes rendered under a
camera-fixed three-colour light rig along an orbit, with SLAM-like
semi-dense inverse depth and exact depth, normals and mixing matrices.
"""
