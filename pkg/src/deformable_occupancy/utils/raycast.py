"""
Traversée exacte de voxels (Amanatides-Woo), vectorisée sur les rayons.

Partagée par la génération des pseudo-étiquettes, le RayIoU et le masque de
visibilité, pour que tous voient le même premier voxel touché.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from deformable_occupancy.config import FREE
from deformable_occupancy.errors import NonUnitDirectionError, ShapeMismatchError
from deformable_occupancy.models.gaussian import VoxelGridSpec
from deformable_occupancy.utils.logger import get_logger

logger = get_logger(__name__)

UNIT_TOLERANCE = 1e-6


@dataclass
class RayHits:
    """
    Premiers impacts d'un lot de R rayons.

    Attributes:
        hit: (R,) booléen.
        voxel: (R, 3) indices du voxel touché, -1 sans impact.
        distance: (R,) distance le long du rayon jusqu'à la face d'entrée,
            0 sans impact.
        label: (R,) classe du voxel touché, FREE sans impact.
    """

    hit: np.ndarray
    voxel: np.ndarray
    distance: np.ndarray
    label: np.ndarray


def check_directions(directions: np.ndarray) -> None:
    """Lève NonUnitDirectionError si une direction n'est pas unitaire."""
    norms = np.linalg.norm(directions, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOLERANCE):
        logger.error("Direction de rayon non unitaire (norme max %.6f)", norms.max())
        raise NonUnitDirectionError("les directions de rayon doivent etre unitaires")


def grid_entry(
    spec: VoxelGridSpec, origins: np.ndarray, directions: np.ndarray
) -> np.ndarray:
    """
    Paramètre t d'entrée dans la boîte de la grille (méthode des dalles).

    Returns:
        np.ndarray: (R,) t >= 0 d'entrée, inf si le rayon manque la grille.
    """
    lo = np.asarray(spec.min_corner)
    hi = np.asarray(spec.max_corner)
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (lo - origins) / directions
        t1 = (hi - origins) / directions
    parallel = directions == 0
    inside = (origins >= lo) & (origins < hi)
    t_near = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t0, t1))
    t_far = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t0, t1))
    enter = np.max(t_near, axis=-1)
    leave = np.min(t_far, axis=-1)
    enter = np.maximum(enter, 0.0)
    return np.where(enter < leave, enter, np.inf)


def traverse(
    labels: np.ndarray,
    spec: VoxelGridSpec,
    origins: np.ndarray,
    directions: np.ndarray,
    visited: Optional[np.ndarray] = None,
) -> RayHits:
    """
    Marche chaque rayon jusqu'au premier voxel occupé (label != FREE).

    Args:
        labels: Grille d'étiquettes (X, Y, Z).
        spec: Discrétisation.
        origins: Origines (R, 3).
        directions: Directions unitaires (R, 3).
        visited: Masque booléen (X, Y, Z) optionnel; chaque voxel traversé
            jusqu'au premier impact inclus y est marqué.

    Returns:
        RayHits: Impacts.

    Raises:
        NonUnitDirectionError: Direction non unitaire.
    """
    labels = np.asarray(labels)
    if tuple(labels.shape) != tuple(spec.dims):
        raise ShapeMismatchError(f"grille {labels.shape} != dims {spec.dims}")
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    check_directions(directions)

    n = origins.shape[0]
    dims = np.asarray(spec.dims)
    lo = np.asarray(spec.min_corner)
    size = spec.voxel_size

    hit = np.zeros(n, dtype=bool)
    voxel = np.full((n, 3), -1, dtype=np.int64)
    distance = np.zeros(n)
    label = np.full(n, FREE, dtype=np.uint8)

    t_cur = grid_entry(spec, origins, directions)
    active = np.isfinite(t_cur)
    if not active.any():
        return RayHits(hit, voxel, distance, label)

    start = origins + np.where(active, t_cur, 0.0)[:, None] * directions
    idx = np.floor((start - lo) / size).astype(np.int64)
    idx = np.clip(idx, 0, dims - 1)

    step = np.sign(directions).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        boundary = lo + (idx + (step > 0)) * size
        t_max = np.where(step != 0, (boundary - origins) / directions, np.inf)
        t_delta = np.where(step != 0, size / np.abs(directions), np.inf)

    rows = np.arange(n)
    for _ in range(int(dims.sum()) + 3):
        if not active.any():
            break
        a = rows[active]
        current = labels[idx[a, 0], idx[a, 1], idx[a, 2]]
        if visited is not None:
            visited[idx[a, 0], idx[a, 1], idx[a, 2]] = True

        occupied = current != FREE
        found = a[occupied]
        hit[found] = True
        voxel[found] = idx[found]
        distance[found] = t_cur[found]
        label[found] = current[occupied]
        active[found] = False

        a = a[~occupied]
        axis = np.argmin(t_max[a], axis=-1)
        t_cur[a] = t_max[a, axis]
        idx[a, axis] += step[a, axis]
        t_max[a, axis] += t_delta[a, axis]
        outside = (idx[a, axis] < 0) | (idx[a, axis] >= dims[axis])
        active[a[outside]] = False

    return RayHits(hit, voxel, distance, label)


def cast_rays(
    labels: np.ndarray,
    spec: VoxelGridSpec,
    origins: np.ndarray,
    directions: np.ndarray,
) -> RayHits:
    """Premiers impacts de chaque rayon sur une grille d'étiquettes."""
    return traverse(labels, spec, origins, directions)
