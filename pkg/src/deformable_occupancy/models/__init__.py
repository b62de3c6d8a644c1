"""Primitives gaussiennes, grilles, caméras et modules différentiables."""

from deformable_occupancy.models.gaussian import (
    CameraModel,
    FeatureVolume,
    GaussianPrimitive,
    GaussianSet,
    SemanticLabelGrid,
    VoxelGridSpec,
    make_grid_spec,
)

__all__ = [
    "CameraModel",
    "FeatureVolume",
    "GaussianPrimitive",
    "GaussianSet",
    "SemanticLabelGrid",
    "VoxelGridSpec",
    "make_grid_spec",
]
