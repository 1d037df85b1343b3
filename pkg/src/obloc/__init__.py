"""Structureless visual localization on (optionally obfuscated) images."""

from .geometry import (
    CameraPose,
    Intrinsics,
    backproject,
    position_error,
    project,
    rotation_error_deg,
    triangulate_multiview,
    triangulate_two_view,
)
from .solvers import (
    SimilarityTransform,
    align_similarity,
    decompose_essential,
    essential_5pt,
    p3p,
    solve_scale_e5p1,
)

__all__ = [
    "CameraPose",
    "Intrinsics",
    "SimilarityTransform",
    "align_similarity",
    "backproject",
    "decompose_essential",
    "essential_5pt",
    "p3p",
    "position_error",
    "project",
    "rotation_error_deg",
    "solve_scale_e5p1",
    "triangulate_multiview",
    "triangulate_two_view",
]
