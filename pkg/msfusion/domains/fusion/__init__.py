"""
Fusion Domain

Merges the semi-dense SLAM cloud of a keyframe with its dense MPS normal
map: view conversion, normal association by reprojection, densification
from hole-filled depth, low-frequency normal correction and joint
position/normal optimisation.
"""
