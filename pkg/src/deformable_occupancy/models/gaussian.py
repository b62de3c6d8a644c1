"""
Types de base partagés par tous les modules.

Ce module définit la primitive gaussienne, l'ensemble batché de gaussiennes
manipulé par torch, la discrétisation de l'espace en voxels, le volume de
caractéristiques, le modèle de caméra sténopé et la grille d'étiquettes
sémantiques, ainsi que les conversions géométriques associées.

Conventions: quaternions (w, x, y, z) à w >= 0; extrinsèques monde -> caméra;
la caméra regarde selon +z, x vers la droite, y vers le bas.
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from deformable_occupancy.config import DTYPE, FREE, NUM_CLASSES
from deformable_occupancy.errors import (
    DegenerateQuaternionError,
    InvalidCameraError,
    InvalidLabelError,
    NonDivisibleExtentError,
    NonPositiveSizeError,
    ShapeMismatchError,
    SpecMismatchError,
)
from deformable_occupancy.utils.logger import get_logger

logger = get_logger(__name__)

QUATERNION_EPS = 1e-12
EXTENT_TOLERANCE = 1e-9
ArrayLike = Union[Sequence[float], np.ndarray]


# ---------------------------------------------------------------------------
# Grille de voxels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VoxelGridSpec:
    """
    Discrétisation alignée sur les axes d'une boîte de l'espace.

    Attributes:
        min_corner: Coin minimal (m, repère monde).
        max_corner: Coin maximal (m).
        voxel_size: Côté d'un voxel (m).
        dims: Nombre de voxels par axe, dérivé de l'étendue.

    Example:
        >>> spec = make_grid_spec((-40, -40, -1), (40, 40, 5.4), 0.4)
        >>> spec.dims
        (200, 200, 16)
    """

    min_corner: Tuple[float, float, float]
    max_corner: Tuple[float, float, float]
    voxel_size: float
    dims: Tuple[int, int, int]

    @property
    def num_voxels(self) -> int:
        return int(np.prod(self.dims))

    def voxel_center(self, index: Sequence[int]) -> np.ndarray:
        """Centre monde du voxel d'indice (i, j, k)."""
        return np.asarray(self.min_corner) + (np.asarray(index) + 0.5) * self.voxel_size

    def voxel_centers(self) -> np.ndarray:
        """Centres de tous les voxels, tableau (X, Y, Z, 3)."""
        axes = [
            self.min_corner[k] + (np.arange(self.dims[k]) + 0.5) * self.voxel_size
            for k in range(3)
        ]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack(grid, axis=-1)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "min_corner": list(self.min_corner),
            "max_corner": list(self.max_corner),
            "voxel_size": self.voxel_size,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "VoxelGridSpec":
        return make_grid_spec(data["min_corner"], data["max_corner"], data["voxel_size"])


def make_grid_spec(
    min_corner: ArrayLike, max_corner: ArrayLike, voxel_size: float
) -> VoxelGridSpec:
    """
    Construit une spécification de grille et calcule ses dimensions.

    Args:
        min_corner: Coin minimal (3 valeurs, m).
        max_corner: Coin maximal (3 valeurs, m).
        voxel_size: Taille de voxel (m), strictement positive.

    Returns:
        VoxelGridSpec: Spécification avec dims exactes.

    Raises:
        NonPositiveSizeError: voxel_size <= 0 ou étendue non positive.
        NonDivisibleExtentError: Étendue non multiple de voxel_size.
    """
    lo = tuple(float(v) for v in min_corner)
    hi = tuple(float(v) for v in max_corner)
    if len(lo) != 3 or len(hi) != 3:
        raise ShapeMismatchError("les coins de grille doivent avoir 3 composantes")
    if voxel_size <= 0:
        logger.error("Taille de voxel non positive: %s", voxel_size)
        raise NonPositiveSizeError(f"voxel_size doit etre > 0, recu {voxel_size}")

    dims = []
    for k in range(3):
        extent = hi[k] - lo[k]
        if extent <= 0:
            raise NonPositiveSizeError(f"etendue non positive sur l'axe {k}: {extent}")
        count = round(extent / voxel_size)
        if abs(count * voxel_size - extent) > EXTENT_TOLERANCE:
            logger.error("Etendue %s non multiple de %s (axe %d)", extent, voxel_size, k)
            raise NonDivisibleExtentError(
                f"etendue {extent} non multiple de {voxel_size} sur l'axe {k}"
            )
        dims.append(int(count))

    return VoxelGridSpec(lo, hi, float(voxel_size), (dims[0], dims[1], dims[2]))


def world_to_voxel(spec: VoxelGridSpec, point: ArrayLike) -> Optional[Tuple[int, int, int]]:
    """
    Indice du voxel contenant un point, ou None hors de la grille.

    La face maximale est exclue: un point doit vérifier min <= p < max sur
    chaque axe.
    """
    p = np.asarray(point, dtype=np.float64)
    lo = np.asarray(spec.min_corner)
    hi = np.asarray(spec.max_corner)
    if np.any(p < lo) or np.any(p >= hi):
        return None
    idx = np.floor((p - lo) / spec.voxel_size).astype(np.int64)
    idx = np.minimum(idx, np.asarray(spec.dims) - 1)
    return (int(idx[0]), int(idx[1]), int(idx[2]))


# ---------------------------------------------------------------------------
# Quaternions
# ---------------------------------------------------------------------------


def normalize_quaternion(q: Union[ArrayLike, torch.Tensor]) -> Union[np.ndarray, torch.Tensor]:
    """
    Normalise un ou plusieurs quaternions (..., 4) et impose w >= 0.

    Accepte un tableau numpy / une séquence (retourne numpy) ou un tenseur
    torch (retourne un tenseur différentiable).

    Raises:
        DegenerateQuaternionError: Norme <= 1e-12.
    """
    if isinstance(q, torch.Tensor):
        norm = torch.linalg.vector_norm(q, dim=-1, keepdim=True)
        if bool((norm <= QUATERNION_EPS).any()):
            logger.error("Quaternion degenere rencontre")
            raise DegenerateQuaternionError("norme de quaternion <= 1e-12")
        unit = q / norm
        return torch.where(unit[..., :1] < 0, -unit, unit)

    arr = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(arr, axis=-1, keepdims=True)
    if np.any(norm <= QUATERNION_EPS):
        logger.error("Quaternion degenere rencontre")
        raise DegenerateQuaternionError("norme de quaternion <= 1e-12")
    unit = arr / norm
    return np.where(unit[..., :1] < 0, -unit, unit)


def quaternion_to_matrix(q: torch.Tensor) -> torch.Tensor:
    """
    Matrices de rotation (..., 3, 3) à partir de quaternions unitaires (..., 4).
    """
    w, x, y, z = q.unbind(-1)
    rows = [
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ]
    return torch.stack(rows, dim=-1).reshape(q.shape[:-1] + (3, 3))


def rotate_vector(q: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Applique la rotation d'un quaternion unitaire à un vecteur."""
    return (quaternion_to_matrix(q) @ v.unsqueeze(-1)).squeeze(-1)


def build_covariance(rot: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    """Covariances monde Sigma = R diag(s^2) R^T, (N, 3, 3)."""
    R = quaternion_to_matrix(rot)
    M = R * scale.unsqueeze(-2)
    return M @ M.transpose(-1, -2)


# ---------------------------------------------------------------------------
# Gaussiennes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianPrimitive:
    """
    Une gaussienne anisotrope.

    Attributes:
        mu: Position (m, repère monde).
        rot: Quaternion unitaire (w, x, y, z).
        scale: Écarts-types par axe (m), strictement positifs.
        opacity: Opacité dans [0, 1].
        feat: Caractéristique latente (C_g valeurs).
        mask: Degré de rigidité dans [0, 1] (0 = rigide).
    """

    mu: np.ndarray
    rot: np.ndarray
    scale: np.ndarray
    opacity: float
    feat: np.ndarray
    mask: float = 0.5


def validate_gaussian(g: GaussianPrimitive, feature_dim: int = 32) -> List[str]:
    """
    Liste toutes les violations d'invariants d'une primitive.

    Args:
        g: Primitive à vérifier.
        feature_dim: Largeur attendue de la caractéristique (C_g).

    Returns:
        List[str]: Noms des invariants violés, vide si la primitive est valide.
    """
    report = []
    mu = np.asarray(g.mu, dtype=np.float64)
    rot = np.asarray(g.rot, dtype=np.float64)
    scale = np.asarray(g.scale, dtype=np.float64)
    feat = np.asarray(g.feat, dtype=np.float64)

    if mu.shape != (3,):
        report.append("position shape")
    if rot.shape != (4,) or abs(np.linalg.norm(rot) - 1.0) > 1e-6:
        report.append("rotation norm")
    if scale.shape != (3,) or np.any(scale <= 0):
        report.append("scale positivity")
    if not 0.0 <= g.opacity <= 1.0:
        report.append("opacity range")
    if not 0.0 <= g.mask <= 1.0:
        report.append("mask range")
    if feat.shape != (feature_dim,):
        report.append("feature width")
    values = np.concatenate([mu.ravel(), rot.ravel(), scale.ravel(), feat.ravel(),
                             [g.opacity, g.mask]])
    if not np.all(np.isfinite(values)):
        report.append("finite values")
    return report


@dataclass
class GaussianSet:
    """
    Ensemble de N gaussiennes stocké en tenseurs torch.

    Les champs sont des tenseurs déjà activés (quaternions unitaires,
    échelles positives, opacités dans [0, 1]) et peuvent porter un graphe
    de gradient.
    """

    mu: torch.Tensor
    rot: torch.Tensor
    scale: torch.Tensor
    opacity: torch.Tensor
    feat: torch.Tensor
    mask: torch.Tensor

    def __post_init__(self) -> None:
        n = self.mu.shape[0]
        expected = {
            "mu": (n, 3), "rot": (n, 4), "scale": (n, 3),
            "opacity": (n,), "mask": (n,),
        }
        for name, shape in expected.items():
            if tuple(getattr(self, name).shape) != shape:
                raise ShapeMismatchError(
                    f"{name}: forme {tuple(getattr(self, name).shape)} != {shape}"
                )
        if self.feat.ndim != 2 or self.feat.shape[0] != n:
            raise ShapeMismatchError(f"feat: forme {tuple(self.feat.shape)} invalide")

    def __len__(self) -> int:
        return self.mu.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.feat.shape[1]

    def primitive(self, i: int) -> GaussianPrimitive:
        """Extrait la i-ème gaussienne comme valeur numpy."""
        return GaussianPrimitive(
            mu=self.mu[i].detach().cpu().numpy().copy(),
            rot=self.rot[i].detach().cpu().numpy().copy(),
            scale=self.scale[i].detach().cpu().numpy().copy(),
            opacity=float(self.opacity[i]),
            feat=self.feat[i].detach().cpu().numpy().copy(),
            mask=float(self.mask[i]),
        )

    def select(self, index: torch.Tensor) -> "GaussianSet":
        """Sous-ensemble (ou permutation) selon un tenseur d'indices."""
        return GaussianSet(
            self.mu[index], self.rot[index], self.scale[index],
            self.opacity[index], self.feat[index], self.mask[index],
        )

    def detach(self) -> "GaussianSet":
        return GaussianSet(
            self.mu.detach(), self.rot.detach(), self.scale.detach(),
            self.opacity.detach(), self.feat.detach(), self.mask.detach(),
        )

    def covariance(self) -> torch.Tensor:
        return build_covariance(self.rot, self.scale)

    @classmethod
    def from_primitives(
        cls, primitives: Sequence[GaussianPrimitive], feature_dim: Optional[int] = None
    ) -> "GaussianSet":
        """Empile des primitives numpy en un ensemble torch."""
        if not primitives:
            width = feature_dim if feature_dim is not None else 32
            empty = torch.zeros((0, 3), dtype=DTYPE)
            return cls(
                empty, torch.zeros((0, 4), dtype=DTYPE), empty.clone(),
                torch.zeros(0, dtype=DTYPE), torch.zeros((0, width), dtype=DTYPE),
                torch.zeros(0, dtype=DTYPE),
            )

        def stack(name: str) -> torch.Tensor:
            values = np.stack([np.asarray(getattr(p, name), dtype=np.float64)
                               for p in primitives])
            return torch.as_tensor(values, dtype=DTYPE)

        return cls(
            mu=stack("mu"), rot=stack("rot"), scale=stack("scale"),
            opacity=stack("opacity"), feat=stack("feat"), mask=stack("mask"),
        )


# ---------------------------------------------------------------------------
# Volumes et grilles d'etiquettes
# ---------------------------------------------------------------------------


@dataclass
class FeatureVolume:
    """
    Champ latent par voxel.

    Attributes:
        spec: Discrétisation.
        data: Caractéristiques (X, Y, Z, C_f).
        weight: Poids de splatting accumulés (X, Y, Z), >= 0.
    """

    spec: VoxelGridSpec
    data: torch.Tensor
    weight: torch.Tensor

    def __post_init__(self) -> None:
        dims = tuple(self.spec.dims)
        if tuple(self.data.shape[:3]) != dims or tuple(self.weight.shape) != dims:
            raise ShapeMismatchError(
                f"volume {tuple(self.data.shape)} / poids {tuple(self.weight.shape)} "
                f"incompatibles avec dims {dims}"
            )

    @property
    def channels(self) -> int:
        return self.data.shape[-1]


@dataclass(frozen=True)
class SemanticLabelGrid:
    """
    Étiquette de classe par voxel, FREE (255) pour les voxels libres.

    Attributes:
        spec: Discrétisation.
        labels: Tableau uint8 (X, Y, Z).
        num_classes: Nombre de classes C.
    """

    spec: VoxelGridSpec
    labels: np.ndarray
    num_classes: int = NUM_CLASSES

    def __post_init__(self) -> None:
        if tuple(self.labels.shape) != tuple(self.spec.dims):
            raise ShapeMismatchError(
                f"etiquettes {self.labels.shape} incompatibles avec dims {self.spec.dims}"
            )
        occupied = self.labels[self.labels != FREE]
        if occupied.size and int(occupied.max()) >= self.num_classes:
            raise InvalidLabelError(
                f"classe {int(occupied.max())} >= {self.num_classes}"
            )

    @property
    def occupied(self) -> np.ndarray:
        return self.labels != FREE

    @classmethod
    def empty(cls, spec: VoxelGridSpec, num_classes: int = NUM_CLASSES) -> "SemanticLabelGrid":
        return cls(spec, np.full(spec.dims, FREE, dtype=np.uint8), num_classes)


def check_same_spec(a: VoxelGridSpec, b: VoxelGridSpec) -> None:
    """Lève SpecMismatchError si deux grilles diffèrent."""
    if a != b:
        logger.error("Specifications de grille differentes: %s / %s", a.dims, b.dims)
        raise SpecMismatchError(f"grilles incompatibles: {a} / {b}")


# ---------------------------------------------------------------------------
# Camera
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraModel:
    """
    Caméra sténopé.

    Attributes:
        K: Intrinsèques 3x3 (pixels).
        E: Transformation rigide monde -> caméra 4x4.
        width: Largeur d'image (pixels).
        height: Hauteur d'image (pixels).
    """

    K: np.ndarray
    E: np.ndarray
    width: int
    height: int

    def __post_init__(self) -> None:
        K = np.asarray(self.K, dtype=np.float64)
        E = np.asarray(self.E, dtype=np.float64)
        if K.shape != (3, 3) or E.shape != (4, 4):
            raise InvalidCameraError(f"formes K {K.shape} / E {E.shape} invalides")
        if abs(K[2, 2] - 1.0) > 1e-12:
            raise InvalidCameraError("K[2][2] doit valoir 1")
        R = E[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1) > 1e-6:
            logger.error("Rotation extrinseque non orthonormale")
            raise InvalidCameraError("bloc de rotation de E non orthonormal ou det != 1")
        if self.width < 1 or self.height < 1:
            raise InvalidCameraError("taille d'image non positive")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "E", E)

    @property
    def rotation(self) -> np.ndarray:
        return self.E[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.E[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Position monde du centre optique."""
        return -self.rotation.T @ self.translation

    def pixel_grid(self) -> np.ndarray:
        """Coordonnées (u, v) entières de chaque pixel, (H, W, 2)."""
        v, u = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
        return np.stack([u, v], axis=-1).astype(np.float64)

    def pixel_rays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Rayons monde passant par chaque pixel.

        Returns:
            Tuple: origines (H*W, 3), directions unitaires (H*W, 3) et
            cosinus entre chaque direction et l'axe optique (H*W,), qui
            convertit une distance le long du rayon en profondeur caméra.
        """
        pix = self.pixel_grid().reshape(-1, 2)
        homog = np.concatenate([pix, np.ones((pix.shape[0], 1))], axis=1)
        cam_dirs = homog @ np.linalg.inv(self.K).T
        cam_dirs /= np.linalg.norm(cam_dirs, axis=1, keepdims=True)
        world_dirs = cam_dirs @ self.rotation
        origins = np.broadcast_to(self.center, world_dirs.shape).copy()
        return origins, world_dirs, cam_dirs[:, 2].copy()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "K": self.K.tolist(),
            "E": self.E.tolist(),
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CameraModel":
        return cls(np.asarray(data["K"]), np.asarray(data["E"]),
                   int(data["width"]), int(data["height"]))


def pinhole_intrinsics(fx: float, fy: float, cx: float, cy: float) -> np.ndarray:
    """Matrice d'intrinsèques sans cisaillement."""
    return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])


def look_at(
    eye: ArrayLike,
    target: ArrayLike,
    K: np.ndarray,
    width: int,
    height: int,
    up: ArrayLike = (0.0, 0.0, 1.0),
) -> CameraModel:
    """
    Caméra placée en eye et visant target.

    Args:
        eye: Centre optique (m).
        target: Point visé (m).
        K: Intrinsèques.
        width: Largeur (pixels).
        height: Hauteur (pixels).
        up: Direction monde vers le haut.

    Returns:
        CameraModel: Caméra x droite, y bas, z avant.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        raise InvalidCameraError("direction de visee parallele a up")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)

    E = np.eye(4)
    E[:3, :3] = np.stack([right, down, forward])
    E[:3, 3] = -E[:3, :3] @ eye
    return CameraModel(K, E, width, height)


