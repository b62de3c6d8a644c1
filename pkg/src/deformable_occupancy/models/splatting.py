"""
Splatting différentiable gaussiennes -> voxels et têtes de prédiction.

Le noyau est la densité gaussienne anisotrope pondérée par l'opacité,
évaluée au centre des voxels et tronquée à `truncation_sigma` en distance
de Mahalanobis. Les paires (gaussienne, voxel) sont énumérées dans la boîte
englobante de l'ellipsoïde de troncature puis accumulées dans l'ordre des
gaussiennes.
"""

from typing import Optional, Tuple, Union

import numpy as np
import torch
from torch import nn

from deformable_occupancy.config import DTYPE, FREE, NUM_CLASSES, SplatConfig
from deformable_occupancy.errors import ShapeMismatchError, SpecMismatchError
from deformable_occupancy.models.encoding import init_linear
from deformable_occupancy.models.gaussian import (
    FeatureVolume,
    GaussianPrimitive,
    GaussianSet,
    SemanticLabelGrid,
    VoxelGridSpec,
    quaternion_to_matrix,
)
from deformable_occupancy.utils.logger import get_logger

logger = get_logger(__name__)


def mahalanobis_sq(
    mu: torch.Tensor, rot: torch.Tensor, scale: torch.Tensor, points: torch.Tensor
) -> torch.Tensor:
    """
    Carré de la distance de Mahalanobis, paire par paire.

    Sigma^-1 = R diag(1/s^2) R^T, donc d^T Sigma^-1 d = ||diag(1/s) R^T d||^2.

    Args:
        mu, rot, scale: Paramètres (M, 3), (M, 4), (M, 3).
        points: Points (M, 3).

    Returns:
        torch.Tensor: (M,).
    """
    R = quaternion_to_matrix(rot)
    local = (R.transpose(-1, -2) @ (points - mu).unsqueeze(-1)).squeeze(-1) / scale
    return local.pow(2).sum(-1)


def gaussian_density(
    g: Union[GaussianPrimitive, GaussianSet],
    point: Union[np.ndarray, torch.Tensor],
    truncation_sigma: float = 3.0,
) -> Union[float, torch.Tensor]:
    """
    Densité opacity * exp(-1/2 d^T Sigma^-1 d), nulle au-delà de la troncature.

    Args:
        g: Primitive isolée (retourne un float) ou ensemble (retourne (N,)).
        point: Point d'évaluation (3,).
        truncation_sigma: Distance de Mahalanobis maximale.

    Example:
        >>> gaussian_density(g, g.mu)  # egale a l'opacite
    """
    single = isinstance(g, GaussianPrimitive)
    gs = GaussianSet.from_primitives([g], feature_dim=len(g.feat)) if single else g
    p = torch.as_tensor(point, dtype=DTYPE).expand(len(gs), 3)
    m2 = mahalanobis_sq(gs.mu, gs.rot, gs.scale, p)
    w = gs.opacity * torch.exp(-0.5 * m2)
    w = torch.where(m2 <= truncation_sigma**2, w, torch.zeros_like(w))
    return float(w[0]) if single else w


def splat_pairs(
    gaussians: GaussianSet, spec: VoxelGridSpec, truncation_sigma: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Énumère les paires (gaussienne, voxel) candidates.

    Pour chaque gaussienne, les voxels dont le centre tombe dans la boîte
    englobante de l'ellipsoïde de troncature, de demi-étendue
    sigma * sqrt(Sigma_kk) par axe.

    Returns:
        Tuple[np.ndarray, np.ndarray]: Indices de gaussienne et indices plats
        de voxel, triés par gaussienne.
    """
    n = len(gaussians)
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)

    with torch.no_grad():
        cov = gaussians.covariance()
        half = truncation_sigma * torch.sqrt(torch.diagonal(cov, dim1=-2, dim2=-1))
        mu = gaussians.mu.detach().cpu().numpy()
        half = half.cpu().numpy()

    lo = np.asarray(spec.min_corner)
    dims = np.asarray(spec.dims)
    first = np.ceil((mu - half - lo) / spec.voxel_size - 0.5).astype(np.int64)
    last = np.floor((mu + half - lo) / spec.voxel_size - 0.5).astype(np.int64)
    first = np.clip(first, 0, dims)
    last = np.clip(last, -1, dims - 1)

    g_index = []
    v_index = []
    for i in range(n):
        if np.any(last[i] < first[i]):
            continue
        ix, iy, iz = (np.arange(first[i, k], last[i, k] + 1) for k in range(3))
        grid = np.stack(np.meshgrid(ix, iy, iz, indexing="ij"), axis=-1).reshape(-1, 3)
        flat = np.ravel_multi_index(grid.T, spec.dims)
        g_index.append(np.full(flat.shape[0], i, dtype=np.int64))
        v_index.append(flat.astype(np.int64))

    if not g_index:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(g_index), np.concatenate(v_index)


def splat_features(
    gaussians: GaussianSet, spec: VoxelGridSpec, config: Optional[SplatConfig] = None
) -> FeatureVolume:
    """
    Projette les gaussiennes sur la grille de voxels.

    weight(x) = sum_i w_i(x) et data(x) = sum_i w_i(x) feat_i / (weight(x) + eps),
    avec w_i(x) = gaussian_density(g_i, x).

    Args:
        gaussians: Ensemble de gaussiennes.
        spec: Discrétisation cible.
        config: Paramètres de splatting.

    Returns:
        FeatureVolume: Volume différentiable par rapport à toutes les
        grandeurs des gaussiennes.
    """
    config = config or SplatConfig()
    channels = gaussians.feature_dim
    num_voxels = spec.num_voxels

    g_idx, v_idx = splat_pairs(gaussians, spec, config.truncation_sigma)
    weight = torch.zeros(num_voxels, dtype=DTYPE)
    data = torch.zeros((num_voxels, channels), dtype=DTYPE)

    if g_idx.size:
        centers = torch.as_tensor(spec.voxel_centers().reshape(-1, 3), dtype=DTYPE)
        gi = torch.as_tensor(g_idx)
        vi = torch.as_tensor(v_idx)
        m2 = mahalanobis_sq(
            gaussians.mu[gi], gaussians.rot[gi], gaussians.scale[gi], centers[vi]
        )
        inside = m2 <= config.truncation_sigma**2
        w = gaussians.opacity[gi] * torch.exp(-0.5 * m2)
        w = torch.where(inside, w, torch.zeros_like(w))
        weight = weight.index_add(0, vi, w)
        data = data.index_add(0, vi, w.unsqueeze(-1) * gaussians.feat[gi])
        logger.debug("Splatting: %d paires gaussienne/voxel", int(inside.sum()))

    data = data / (weight + config.weight_epsilon).unsqueeze(-1)
    dims = tuple(spec.dims)
    return FeatureVolume(spec, data.reshape(dims + (channels,)), weight.reshape(dims))


class PredictionHeads(nn.Module):
    """
    Têtes d'occupation et de sémantique.

    Par défaut w_occ lit la caractéristique du voxel seule (C_f entrées) et
    p_occ = sigmoid(w_occ . f_x). Avec density_input, le poids de splatting
    accumulé est ajouté en dernière entrée (C_f + 1). w_sem lit la
    caractéristique seule et sert aussi à produire les logits sémantiques
    par gaussienne pour le rendu.
    """

    def __init__(
        self,
        feature_dim: int = 32,
        num_classes: int = NUM_CLASSES,
        generator: Optional[torch.Generator] = None,
        density_input: bool = False,
    ) -> None:
        super().__init__()
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.density_input = density_input
        occ_inputs = feature_dim + 1 if density_input else feature_dim
        self.w_occ = init_linear(nn.Linear(occ_inputs, 1, dtype=DTYPE), generator)
        self.w_sem = init_linear(nn.Linear(feature_dim, num_classes, dtype=DTYPE), generator)

    def density_gate(self, gain: float, threshold: float) -> None:
        """
        Règle w_occ en seuil de densité: sigmoid(gain * (weight - threshold)).

        Raises:
            ShapeMismatchError: Tête construite sans density_input.
        """
        if not self.density_input:
            logger.error("density_gate sur une tete sans entree de densite")
            raise ShapeMismatchError("density_gate exige density_input=True")
        with torch.no_grad():
            self.w_occ.weight.zero_()
            self.w_occ.weight[0, -1] = gain
            self.w_occ.bias.fill_(-gain * threshold)

    def semantic_logits(self, feat: torch.Tensor) -> torch.Tensor:
        """Logits sémantiques par gaussienne, (N, C)."""
        return self.w_sem(feat)


def _check_channels(volume: FeatureVolume, heads: PredictionHeads) -> None:
    if volume.channels != heads.feature_dim:
        logger.error(
            "Volume a %d canaux, tetes attendent %d", volume.channels, heads.feature_dim
        )
        raise ShapeMismatchError(
            f"volume de {volume.channels} canaux != {heads.feature_dim}"
        )


def occupancy_head(volume: FeatureVolume, heads: PredictionHeads) -> torch.Tensor:
    """
    Probabilités d'occupation p_occ = sigmoid(w_occ . f_x), (X, Y, Z).

    Avec density_input, w_occ lit [f_x, weight_x].
    """
    _check_channels(volume, heads)
    x = volume.data
    if heads.density_input:
        x = torch.cat([x, volume.weight.unsqueeze(-1)], dim=-1)
    return torch.sigmoid(heads.w_occ(x)).squeeze(-1)


def semantic_head(volume: FeatureVolume, heads: PredictionHeads) -> torch.Tensor:
    """Distributions de classes softmax(w_sem . f_x), (X, Y, Z, C)."""
    _check_channels(volume, heads)
    return torch.softmax(heads.w_sem(volume.data), dim=-1)


def extract_occupancy(
    p_occ: torch.Tensor,
    p_sem: torch.Tensor,
    spec: VoxelGridSpec,
    threshold: float = 0.5,
) -> SemanticLabelGrid:
    """
    Voxelisation finale: argmax de p_sem là où p_occ >= threshold, FREE ailleurs.

    Les égalités d'argmax sont résolues vers la plus petite classe.

    Raises:
        SpecMismatchError: Grilles de formes différentes de la spécification.
    """
    dims = tuple(spec.dims)
    if tuple(p_occ.shape) != dims or tuple(p_sem.shape[:3]) != dims:
        logger.error("Grilles p_occ %s / p_sem %s hors spec %s",
                     tuple(p_occ.shape), tuple(p_sem.shape), dims)
        raise SpecMismatchError(
            f"p_occ {tuple(p_occ.shape)} / p_sem {tuple(p_sem.shape)} != dims {dims}"
        )
    occ = p_occ.detach().cpu().numpy()
    sem = p_sem.detach().cpu().numpy()
    labels = np.argmax(sem, axis=-1).astype(np.uint8)
    labels[occ < threshold] = FREE
    return SemanticLabelGrid(spec, labels, num_classes=sem.shape[-1])
