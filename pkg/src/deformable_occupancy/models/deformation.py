"""
Déformation découplée des gaussiennes.

Chaque gaussienne canonique (t = 0) reçoit, pour un décalage de frame t,
une mise à jour composée d'une branche rigide (translation seule) et d'une
branche non rigide (position, rotation, échelle, opacité), pondérées par un
masque de rigidité m indépendant du temps:

    delta = (1 - m) * rigide + m * non_rigide

Les têtes de sortie sont initialisées à zéro, si bien qu'un réseau neuf
laisse toutes les frames identiques à la frame canonique.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import torch
from torch import nn

from deformable_occupancy.config import (
    DTYPE,
    DeformationConfig,
    DeformationLossWeights,
    EncodingConfig,
)
from deformable_occupancy.errors import ShapeMismatchError
from deformable_occupancy.models.encoding import (
    FeatureNet,
    TimeProjector,
    build_hidden,
    embed_time,
    encode_position,
    encode_time,
    zero_linear,
)
from deformable_occupancy.models.gaussian import (
    GaussianPrimitive,
    GaussianSet,
    normalize_quaternion,
)
from deformable_occupancy.utils.logger import get_logger

logger = get_logger(__name__)

OPACITY_CLAMP = 1e-6


@dataclass
class GaussianUpdate:
    """
    Mise à jour d'un lot de N gaussiennes.

    Attributes:
        d_mu: Déplacement (N, 3), mètres.
        d_rot: Delta de quaternion non contraint (N, 4).
        d_scale: Delta de log-échelle (N, 3).
        d_opacity: Delta de logit d'opacité (N,).
    """

    d_mu: torch.Tensor
    d_rot: torch.Tensor
    d_scale: torch.Tensor
    d_opacity: torch.Tensor

    @classmethod
    def zeros(cls, n: int) -> "GaussianUpdate":
        return cls(
            torch.zeros((n, 3), dtype=DTYPE),
            torch.zeros((n, 4), dtype=DTYPE),
            torch.zeros((n, 3), dtype=DTYPE),
            torch.zeros(n, dtype=DTYPE),
        )

    def components(self) -> Dict[str, torch.Tensor]:
        return {
            "mu": self.d_mu,
            "rot": self.d_rot,
            "scale": self.d_scale,
            "opacity": self.d_opacity,
        }

    def is_finite(self) -> bool:
        return all(bool(torch.isfinite(v).all()) for v in self.components().values())


class DeformationNetwork(nn.Module):
    """
    FeatureNet, projecteur temporel et têtes de déformation.

    Attributes:
        featurenet: Perceptron [feat, gamma_p, e_t] -> h.
        time_projector: gamma_t -> e_t.
        head_rigid_mu: h -> translation rigide.
        head_def_mu, head_def_rot, head_def_scale, head_def_opacity:
            h -> deltas non rigides.
        head_mask: [feat, gamma_p] -> logit du masque de rigidité.
        head_enable: Interrupteurs {rotation, scale, opacity, mask}.

    Example:
        >>> net = DeformationNetwork(feature_dim=32, encoding=EncodingConfig())
        >>> frames = deform_set(gaussians, [-2, 0, 2], net)
    """

    def __init__(
        self,
        feature_dim: int = 32,
        encoding: Optional[EncodingConfig] = None,
        hidden_dim: int = 256,
        depth: int = 6,
        switches: Optional[DeformationConfig] = None,
        generator: Optional[torch.Generator] = None,
    ) -> None:
        super().__init__()
        self.encoding = encoding or EncodingConfig()
        self.switches = switches or DeformationConfig()
        self.feature_dim = feature_dim

        self.time_projector = TimeProjector(self.encoding, generator)
        in_features = feature_dim + self.encoding.position_width + self.encoding.C_t
        self.featurenet = FeatureNet(in_features, hidden_dim, depth, generator)

        def head(out_features: int, in_features: int = hidden_dim) -> nn.Linear:
            return zero_linear(nn.Linear(in_features, out_features, dtype=DTYPE))

        self.head_rigid_mu = head(3)
        self.head_def_mu = head(3)
        self.head_def_rot = head(4)
        self.head_def_scale = head(3)
        self.head_def_opacity = head(1)
        self.head_mask = head(1, feature_dim + self.encoding.position_width)

        self.head_enable = {
            "rotation": self.switches.rotation,
            "scale": self.switches.scale,
            "opacity": self.switches.opacity,
            "mask": self.switches.mask,
        }

    @property
    def hidden_dim(self) -> int:
        return self.featurenet.hidden_dim

    def hidden(self, feat: torch.Tensor, gamma_p: torch.Tensor, offset: float) -> torch.Tensor:
        """Représentation cachée des gaussiennes pour un décalage donné."""
        e_t = embed_time(encode_time(offset, self.encoding.L_t), self.time_projector)
        return build_hidden(feat, gamma_p, e_t, self.featurenet)


def _check_width(x: torch.Tensor, layer: nn.Linear, what: str) -> None:
    if x.shape[-1] != layer.in_features:
        logger.error("%s de largeur %d, attendu %d", what, x.shape[-1], layer.in_features)
        raise ShapeMismatchError(f"{what} de largeur {x.shape[-1]} != {layer.in_features}")


def predict_rigidity_mask(
    feat: torch.Tensor, gamma_p: torch.Tensor, net: DeformationNetwork
) -> torch.Tensor:
    """
    Masque de rigidité m = sigmoid(head_mask([feat, gamma_p])).

    Indépendant du temps. Tête désactivée: m = 1 (champ non rigide unique).

    Returns:
        torch.Tensor: Masques (N,) dans [0, 1].
    """
    x = torch.cat([feat, gamma_p], dim=-1)
    _check_width(x, net.head_mask, "entree du masque")
    if not net.head_enable["mask"]:
        return torch.ones(x.shape[:-1], dtype=DTYPE)
    return torch.sigmoid(net.head_mask(x)).squeeze(-1)


def predict_rigid_offset(h: torch.Tensor, net: DeformationNetwork) -> GaussianUpdate:
    """Branche rigide: seule la position bouge."""
    _check_width(h, net.head_rigid_mu, "representation cachee")
    d_mu = net.head_rigid_mu(h)
    n = h.shape[0]
    zeros = GaussianUpdate.zeros(n)
    return GaussianUpdate(d_mu, zeros.d_rot, zeros.d_scale, zeros.d_opacity)


def predict_nonrigid_delta(h: torch.Tensor, net: DeformationNetwork) -> GaussianUpdate:
    """
    Branche non rigide: deltas de position, rotation, échelle et opacité.

    Une tête désactivée renvoie exactement zéro pour sa composante.
    """
    _check_width(h, net.head_def_mu, "representation cachee")
    n = h.shape[0]
    zeros = GaussianUpdate.zeros(n)
    enable = net.head_enable
    return GaussianUpdate(
        d_mu=net.head_def_mu(h),
        d_rot=net.head_def_rot(h) if enable["rotation"] else zeros.d_rot,
        d_scale=net.head_def_scale(h) if enable["scale"] else zeros.d_scale,
        d_opacity=net.head_def_opacity(h).squeeze(-1) if enable["opacity"] else zeros.d_opacity,
    )


def compose_update(
    m: torch.Tensor, rig: GaussianUpdate, deform: GaussianUpdate
) -> GaussianUpdate:
    """
    Combinaison convexe (1 - m) * rig + m * deform, composante par composante.

    Args:
        m: Masques (N,) dans [0, 1].
        rig: Mise à jour rigide.
        deform: Mise à jour non rigide.
    """
    m = torch.as_tensor(m, dtype=DTYPE)
    mv = m.unsqueeze(-1)
    return GaussianUpdate(
        d_mu=(1 - mv) * rig.d_mu + mv * deform.d_mu,
        d_rot=(1 - mv) * rig.d_rot + mv * deform.d_rot,
        d_scale=(1 - mv) * rig.d_scale + mv * deform.d_scale,
        d_opacity=(1 - m) * rig.d_opacity + m * deform.d_opacity,
    )


def _logit(p: torch.Tensor) -> torch.Tensor:
    p = p.clamp(OPACITY_CLAMP, 1 - OPACITY_CLAMP)
    return torch.log(p) - torch.log1p(-p)


def apply_update(
    g: Union[GaussianSet, GaussianPrimitive], upd: GaussianUpdate
) -> Union[GaussianSet, GaussianPrimitive]:
    """
    Applique une mise à jour à des gaussiennes.

    mu' = mu + d_mu; rot' = normalize(rot + d_rot);
    scale' = exp(log(scale) + d_scale);
    opacity' = sigmoid(logit(opacity) + d_opacity). feat et mask inchangés.

    Args:
        g: Ensemble torch ou primitive numpy isolée.
        upd: Mise à jour de même taille.

    Returns:
        Même type que g.

    Raises:
        DegenerateQuaternionError: ||rot + d_rot|| <= 1e-12.
    """
    if isinstance(g, GaussianPrimitive):
        updated = apply_update(GaussianSet.from_primitives([g]), upd)
        return updated.primitive(0)

    return GaussianSet(
        mu=g.mu + upd.d_mu,
        rot=normalize_quaternion(g.rot + upd.d_rot),
        scale=torch.exp(torch.log(g.scale) + upd.d_scale),
        opacity=torch.sigmoid(_logit(g.opacity) + upd.d_opacity),
        feat=g.feat,
        mask=g.mask,
    )


@dataclass
class DeformationOutput:
    """
    Résultat d'une déformation multi-frames.

    Attributes:
        frames: Décalage -> ensemble déformé.
        updates: Décalage -> mise à jour composée appliquée.
        masks: Masques de rigidité bruts (N,), utilisés par la perte.
    """

    frames: Dict[int, GaussianSet]
    updates: Dict[int, GaussianUpdate] = field(default_factory=dict)
    masks: Optional[torch.Tensor] = None


def deform_frames(
    gaussians: GaussianSet,
    frame_offsets: Sequence[int],
    net: DeformationNetwork,
) -> DeformationOutput:
    """
    Déforme l'ensemble canonique vers chaque décalage demandé.

    Pipeline par décalage: encodage -> représentation cachée -> têtes ->
    composition -> application. Les masques sous le seuil d'accrochage
    rigide sont composés comme exactement 0. Le décalage 0 suit le même
    chemin que les autres.

    Args:
        gaussians: Ensemble canonique (t = 0).
        frame_offsets: Décalages de frame dans [-8, 8].
        net: Réseau de déformation.

    Returns:
        DeformationOutput: Frames, mises à jour et masques.
    """
    offsets: List[int] = list(dict.fromkeys(int(o) for o in frame_offsets))
    n = len(gaussians)

    if not net.switches.enabled or n == 0:
        frames = {o: gaussians for o in offsets}
        updates = {o: GaussianUpdate.zeros(n) for o in offsets}
        return DeformationOutput(frames, updates, gaussians.mask)

    gamma_p = encode_position(gaussians.mu, net.encoding.L_p)
    m = predict_rigidity_mask(gaussians.feat, gamma_p, net)
    threshold = net.switches.rigid_snap_threshold
    m_used = torch.where(m < threshold, torch.zeros_like(m), m)
    canonical = GaussianSet(
        gaussians.mu, gaussians.rot, gaussians.scale, gaussians.opacity, gaussians.feat, m
    )

    frames: Dict[int, GaussianSet] = {}
    updates: Dict[int, GaussianUpdate] = {}
    for offset in offsets:
        h = net.hidden(gaussians.feat, gamma_p, offset)
        rig = predict_rigid_offset(h, net)
        deform = predict_nonrigid_delta(h, net)
        upd = compose_update(m_used, rig, deform)
        frames[offset] = apply_update(canonical, upd)
        updates[offset] = upd

    logger.debug("Deformation de %d gaussiennes vers %d frames", n, len(offsets))
    return DeformationOutput(frames, updates, m)


def deform_set(
    gaussians: GaussianSet,
    frame_offsets: Sequence[int],
    net: DeformationNetwork,
) -> Dict[int, GaussianSet]:
    """Décalage -> ensemble de gaussiennes déformé."""
    return deform_frames(gaussians, frame_offsets, net).frames


def deformation_loss(
    updates: Union[Sequence[GaussianUpdate], Dict[int, GaussianUpdate]],
    masks: torch.Tensor,
    weights: Optional[DeformationLossWeights] = None,
) -> torch.Tensor:
    """
    Régularisation de déformation et binarisation du masque.

    L_reg = moyenne (gaussiennes, décalages) de sum_p lambda_p ||delta_p||^2,
    L_mask = moyenne des m (1 - m); retourne
    lambda_reg * L_reg + lambda_mask * L_mask.

    Args:
        updates: Mises à jour composées, une par décalage.
        masks: Masques (N,).
        weights: Poids; valeurs par défaut si None.

    Returns:
        torch.Tensor: Scalaire >= 0.
    """
    weights = weights or DeformationLossWeights()
    if isinstance(updates, dict):
        updates = list(updates.values())
    masks = torch.as_tensor(masks, dtype=DTYPE)

    l_reg = torch.zeros((), dtype=DTYPE)
    if updates and updates[0].d_mu.shape[0] > 0:
        per_offset = []
        for upd in updates:
            per_offset.append(
                weights.lambda_mu * upd.d_mu.pow(2).sum(-1)
                + weights.lambda_rot * upd.d_rot.pow(2).sum(-1)
                + weights.lambda_scale * upd.d_scale.pow(2).sum(-1)
                + weights.lambda_opacity * upd.d_opacity.pow(2)
            )
        l_reg = torch.stack(per_offset).mean()

    l_mask = (masks * (1 - masks)).mean() if masks.numel() else torch.zeros((), dtype=DTYPE)
    return weights.lambda_reg * l_reg + weights.lambda_mask * l_mask
