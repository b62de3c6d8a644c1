"""
Rendu différentiable gaussiennes -> image.

Projection perspective de chaque gaussienne (centre, covariance 2D,
profondeur caméra), tri global par profondeur croissante puis composition
alpha d'avant en arrière de charges utiles arbitraires (logits
sémantiques, profondeur, caractéristiques de distillation).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from deformable_occupancy.config import DTYPE
from deformable_occupancy.errors import PayloadShapeMismatchError
from deformable_occupancy.models.gaussian import (
    CameraModel,
    GaussianPrimitive,
    GaussianSet,
)
from deformable_occupancy.utils.logger import get_logger

logger = get_logger(__name__)

NEAR_PLANE = 0.01
ALPHA_MAX = 0.999
COV2D_FLOOR = 0.3
MIN_VALID_ALPHA = 0.01
DEPTH_EPS = 1e-8


@dataclass
class Projected2D:
    """
    Gaussiennes projetées (seulement celles devant la caméra).

    Attributes:
        center: Centres (M, 2) en pixels (colonne, ligne).
        cov2d: Covariances (M, 2, 2) en pixels^2, plancher inclus.
        depth: Profondeurs caméra (M,).
        index: Indices (M,) dans l'ensemble d'origine.
    """

    center: torch.Tensor
    cov2d: torch.Tensor
    depth: torch.Tensor
    index: torch.Tensor

    def __len__(self) -> int:
        return self.depth.shape[0]


@dataclass
class RenderedMaps:
    """
    Résultat de composition.

    Attributes:
        payload: (H, W, P).
        alpha: Opacité accumulée (H, W) dans [0, 1].
    """

    payload: torch.Tensor
    alpha: torch.Tensor

    @property
    def valid(self) -> torch.Tensor:
        """Pixels avec suffisamment de surface (alpha >= 0.01)."""
        return self.alpha >= MIN_VALID_ALPHA

    def normalized(self) -> torch.Tensor:
        """Charge utile normalisée par alpha, utilisée pour la profondeur."""
        return self.payload / (self.alpha + DEPTH_EPS).unsqueeze(-1)


@dataclass
class RenderOutput:
    """Cartes produites par une passe de rendu partagée."""

    semantic: torch.Tensor
    depth: torch.Tensor
    features: Optional[torch.Tensor]
    alpha: torch.Tensor

    @property
    def valid(self) -> torch.Tensor:
        return self.alpha >= MIN_VALID_ALPHA


def _camera_tensors(camera: CameraModel):
    K = torch.as_tensor(camera.K, dtype=DTYPE)
    R = torch.as_tensor(camera.rotation, dtype=DTYPE)
    t = torch.as_tensor(camera.translation, dtype=DTYPE)
    return K, R, t


def camera_points(gaussians: GaussianSet, camera: CameraModel) -> torch.Tensor:
    """Positions en repère caméra, (N, 3)."""
    _, R, t = _camera_tensors(camera)
    return gaussians.mu @ R.T + t


def project_gaussians(gaussians: GaussianSet, camera: CameraModel) -> Projected2D:
    """
    Projette un ensemble de gaussiennes; celles avec z <= 0.01 m sont écartées.

    cov2d = J W Sigma W^T J^T + 0.3 I, J étant la jacobienne de la
    projection perspective au point caméra.
    """
    K, R, _ = _camera_tensors(camera)
    p_all = camera_points(gaussians, camera)
    keep = torch.nonzero(p_all[:, 2].detach() > NEAR_PLANE).squeeze(-1)
    p = p_all[keep]
    z = p[:, 2]

    uv = (p @ K[:2].T) / z.unsqueeze(-1)
    ez = torch.tensor([0.0, 0.0, 1.0], dtype=DTYPE)
    # d(u_i)/dp = (K_i - u_i e_z) / z
    J = (K[:2].unsqueeze(0) - uv.unsqueeze(-1) * ez) / z.reshape(-1, 1, 1)

    sigma = gaussians.covariance()[keep]
    T = J @ R
    cov2d = T @ sigma @ T.transpose(-1, -2)
    cov2d = cov2d + COV2D_FLOOR * torch.eye(2, dtype=DTYPE)
    return Projected2D(uv, cov2d, z, keep)


def project_gaussian(g: GaussianPrimitive, camera: CameraModel) -> Optional[Projected2D]:
    """Projection d'une primitive isolée; None si elle est culée."""
    projected = project_gaussians(GaussianSet.from_primitives([g], len(g.feat)), camera)
    return projected if len(projected) else None


def camera_depths(gaussians: GaussianSet, camera: CameraModel) -> torch.Tensor:
    """Profondeur caméra de chaque gaussienne, (N,)."""
    return camera_points(gaussians, camera)[:, 2]


def render_maps(
    gaussians: GaussianSet, payloads: torch.Tensor, camera: CameraModel
) -> RenderedMaps:
    """
    Compose des charges utiles par gaussienne en une image.

    Pour chaque pixel u, alpha_i = clamp(opacity_i g_i(u), 0, 0.999),
    payload(u) = sum_i T_i alpha_i payload_i avec T_i = prod_{j<i} (1 - alpha_j)
    dans l'ordre des profondeurs croissantes, alpha(u) = 1 - prod_i (1 - alpha_i).

    Args:
        gaussians: Ensemble de N gaussiennes.
        payloads: (N, P).
        camera: Caméra de rendu.

    Returns:
        RenderedMaps: Charge utile (H, W, P) et alpha (H, W).

    Raises:
        PayloadShapeMismatchError: payloads n'a pas N lignes.
    """
    if payloads.ndim != 2 or payloads.shape[0] != len(gaussians):
        logger.error("Payload %s pour %d gaussiennes", tuple(payloads.shape), len(gaussians))
        raise PayloadShapeMismatchError(
            f"payload {tuple(payloads.shape)} pour {len(gaussians)} gaussiennes"
        )

    H, W, P = camera.height, camera.width, payloads.shape[1]
    proj = project_gaussians(gaussians, camera)
    if len(proj) == 0:
        return RenderedMaps(
            torch.zeros((H, W, P), dtype=DTYPE), torch.zeros((H, W), dtype=DTYPE)
        )

    order = torch.argsort(proj.depth.detach(), stable=True)
    center = proj.center[order]
    conic = torch.linalg.inv(proj.cov2d[order])
    index = proj.index[order]
    opacity = gaussians.opacity[index]
    rows = payloads[index]

    pix = torch.as_tensor(camera.pixel_grid().reshape(-1, 2), dtype=DTYPE)
    delta = pix.unsqueeze(0) - center.unsqueeze(1)
    power = -0.5 * torch.einsum("npi,nij,npj->np", delta, conic, delta)
    alpha_i = torch.clamp(opacity.unsqueeze(-1) * torch.exp(power), 0.0, ALPHA_MAX)

    survive = torch.cumprod(1.0 - alpha_i, dim=0)
    transmittance = torch.cat([torch.ones_like(survive[:1]), survive[:-1]], dim=0)
    weights = transmittance * alpha_i

    payload = torch.einsum("np,nk->pk", weights, rows).reshape(H, W, P)
    alpha = (1.0 - survive[-1]).reshape(H, W)
    return RenderedMaps(payload, alpha)


def render_all(
    gaussians: GaussianSet,
    semantic_logits: torch.Tensor,
    camera: CameraModel,
    features: Optional[torch.Tensor] = None,
) -> RenderOutput:
    """
    Rend logits sémantiques, profondeur et caractéristiques en une seule passe.

    Args:
        gaussians: Ensemble de gaussiennes.
        semantic_logits: Logits par gaussienne (N, C).
        camera: Caméra.
        features: Caractéristiques projetées (N, C_a), optionnelles.

    Returns:
        RenderOutput: Logits (H, W, C), profondeur normalisée (H, W),
        caractéristiques (H, W, C_a) ou None, alpha (H, W).
    """
    C = semantic_logits.shape[-1]
    parts = [semantic_logits, camera_depths(gaussians, camera).unsqueeze(-1)]
    if features is not None:
        parts.append(features)
    maps = render_maps(gaussians, torch.cat(parts, dim=-1), camera)

    payload = maps.payload
    depth = payload[..., C] / (maps.alpha + DEPTH_EPS)
    feats = payload[..., C + 1:] if features is not None else None
    return RenderOutput(payload[..., :C], depth, feats, maps.alpha)


def argmax_image(logits: torch.Tensor) -> np.ndarray:
    """Classe prédite par pixel (H, W), plus petite classe en cas d'égalité."""
    return np.argmax(logits.detach().cpu().numpy(), axis=-1)
