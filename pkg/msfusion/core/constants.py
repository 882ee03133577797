"""Numeric constants shared across domains."""

# Quaternions further than this from unit norm are rejected
QUATERNION_RENORMALIZE_LIMIT = 1e-2

# Inverse depths at or below this are invalid
INVERSE_DEPTH_EPSILON = 1e-9

# Attached normals must be unit length within this
UNIT_NORMAL_TOLERANCE = 1e-6

# Below this a cross product / vector norm counts as degenerate
DEGENERATE_NORM = 1e-12

# Default resolution of synthetic keyframes
DEFAULT_IMAGE_SIZE = 512
