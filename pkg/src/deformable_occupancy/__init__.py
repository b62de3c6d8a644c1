"""Deformable Occupancy - Occupation semantique 3D par gaussiennes deformables."""

from deformable_occupancy.config import Config, parse_config
from deformable_occupancy.errors import OccupancyError

__version__ = "0.1.0"

__all__ = [
    "Config",
    "OccupancyError",
    "parse_config",
]
