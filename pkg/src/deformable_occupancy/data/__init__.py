"""Scènes synthétiques, formats binaires et répertoires de scène."""

from deformable_occupancy.data.formats import (
    CheckpointData,
    read_checkpoint,
    read_image,
    read_voxels,
    write_checkpoint,
    write_image,
    write_voxels,
)

__all__ = [
    "CheckpointData",
    "read_checkpoint",
    "read_image",
    "read_voxels",
    "write_checkpoint",
    "write_image",
    "write_voxels",
]
