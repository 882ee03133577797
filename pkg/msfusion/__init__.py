"""
msfusion: dense reconstruction from semi-dense SLAM keyframes and
multispectral photometric stereo.
"""

__version__ = "1.0.0"
