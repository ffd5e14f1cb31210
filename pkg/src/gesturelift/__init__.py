"""Train 2D and 3D co-speech gesture generators, lift 2D output to 3D and score them."""

from gesturelift.errors import ParseError, StructuralError, UnsupportedFormatError
from gesturelift.pose import (
    DEFAULT_SKELETON,
    PoseSequence,
    SkeletonSpec,
    dirvec_to_joints,
    embed_zero_depth,
    joints_to_dirvec,
    mpjpe,
    project_to_2d,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_SKELETON",
    "ParseError",
    "PoseSequence",
    "SkeletonSpec",
    "StructuralError",
    "UnsupportedFormatError",
    "dirvec_to_joints",
    "embed_zero_depth",
    "joints_to_dirvec",
    "mpjpe",
    "project_to_2d",
]
