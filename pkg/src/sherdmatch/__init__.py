"""Partial-to-global curve pattern matching with composite (overstamped) sherds."""

from .chamfer_match import ChamferResult, SearchConfig, best_transform, chamfer_distance
from .composite_match import Component, MatchResult, completeness, disjointness, match_composite
from .distance_field import DistanceMap, build_distance_map
from .pattern_core import BoundingBox, PatternError, PointSet, RigidTransform, apply_transform, bounding_box

__all__ = [
    "BoundingBox",
    "ChamferResult",
    "Component",
    "DistanceMap",
    "MatchResult",
    "PatternError",
    "PointSet",
    "RigidTransform",
    "SearchConfig",
    "apply_transform",
    "best_transform",
    "bounding_box",
    "build_distance_map",
    "chamfer_distance",
    "completeness",
    "disjointness",
    "match_composite",
]

__version__ = "0.1.0"
