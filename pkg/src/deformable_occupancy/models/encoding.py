"""
Encodages sinusoïdaux et perceptrons du réseau de déformation.

Les encodages suivent la disposition [x | sin(2^0 x) | cos(2^0 x) | ...],
sans facteur 2*pi, et le temps est le décalage de frame brut.
"""

import math
from typing import List, Optional, Union

import torch
from torch import nn

from deformable_occupancy.config import DTYPE, EncodingConfig
from deformable_occupancy.errors import ShapeMismatchError
from deformable_occupancy.utils.logger import get_logger

logger = get_logger(__name__)


def init_linear(layer: nn.Linear, generator: Optional[torch.Generator] = None) -> nn.Linear:
    """
    Initialise une couche: poids uniformes dans +-1/sqrt(fan_in), biais nuls.

    Args:
        layer: Couche à initialiser (modifiée en place).
        generator: Générateur torch optionnel pour la reproductibilité.

    Returns:
        nn.Linear: La même couche.
    """
    bound = 1.0 / math.sqrt(layer.in_features)
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound, generator=generator)
        layer.bias.zero_()
    return layer


def zero_linear(layer: nn.Linear) -> nn.Linear:
    """Met à zéro poids et biais d'une couche."""
    with torch.no_grad():
        layer.weight.zero_()
        layer.bias.zero_()
    return layer


def _sinusoids(x: torch.Tensor, levels: int) -> torch.Tensor:
    blocks = [x]
    for k in range(levels):
        freq = float(2**k)
        blocks.append(torch.sin(freq * x))
        blocks.append(torch.cos(freq * x))
    return torch.cat(blocks, dim=-1)


def encode_position(mu: torch.Tensor, L_p: int) -> torch.Tensor:
    """
    Encodage positionnel gamma_p.

    Args:
        mu: Positions (..., 3) en mètres, repère monde.
        L_p: Nombre de bandes spatiales (>= 1).

    Returns:
        torch.Tensor: (..., 3 * (2 * L_p + 1)), chaque bloc couvre les 3 axes.

    Example:
        >>> encode_position(torch.zeros(3, dtype=torch.float64), 1)
        tensor([0., 0., 0., 0., 0., 0., 1., 1., 1.], dtype=torch.float64)
    """
    if L_p < 1:
        raise ShapeMismatchError(f"L_p doit etre >= 1, recu {L_p}")
    mu = torch.as_tensor(mu, dtype=DTYPE)
    if mu.shape[-1] != 3:
        raise ShapeMismatchError(f"position de largeur {mu.shape[-1]} != 3")
    return _sinusoids(mu, L_p)


def encode_time(t: Union[float, torch.Tensor], L_t: int) -> torch.Tensor:
    """
    Encodage temporel gamma_t d'un décalage de frame.

    Args:
        t: Décalage de frame (scalaire, unités de frame).
        L_t: Nombre de bandes temporelles (>= 1).

    Returns:
        torch.Tensor: Vecteur de longueur 2 * L_t + 1.
    """
    if L_t < 1:
        raise ShapeMismatchError(f"L_t doit etre >= 1, recu {L_t}")
    t = torch.as_tensor(t, dtype=DTYPE).reshape(1)
    return _sinusoids(t, L_t)


class TimeProjector(nn.Module):
    """
    Perceptron à deux couches: gamma_t -> plongement temporel e_t.

    Attributes:
        layer1: Linéaire (2 L_t + 1) -> C_t.
        layer2: Linéaire C_t -> C_t.
    """

    def __init__(self, config: EncodingConfig, generator: Optional[torch.Generator] = None) -> None:
        super().__init__()
        self.in_features = config.time_width
        self.out_features = config.C_t
        self.layer1 = init_linear(
            nn.Linear(self.in_features, config.C_t, dtype=DTYPE), generator
        )
        self.layer2 = init_linear(nn.Linear(config.C_t, config.C_t, dtype=DTYPE), generator)

    def forward(self, gamma_t: torch.Tensor) -> torch.Tensor:
        return self.layer2(torch.relu(self.layer1(gamma_t)))


def embed_time(gamma_t: torch.Tensor, projector: TimeProjector) -> torch.Tensor:
    """
    Plongement temporel e_t = W2 relu(W1 gamma_t + b1) + b2.

    Raises:
        ShapeMismatchError: Largeur de gamma_t incompatible avec le projecteur.
    """
    if gamma_t.shape[-1] != projector.in_features:
        logger.error(
            "Encodage temporel de largeur %d, projecteur attend %d",
            gamma_t.shape[-1], projector.in_features,
        )
        raise ShapeMismatchError(
            f"gamma_t de largeur {gamma_t.shape[-1]} != {projector.in_features}"
        )
    return projector(gamma_t)


class FeatureNet(nn.Module):
    """
    Perceptron de profondeur `depth` produisant la représentation cachée h.

    Relu entre les couches, aucune activation après la dernière.
    """

    def __init__(
        self,
        in_features: int,
        hidden_dim: int = 256,
        depth: int = 6,
        generator: Optional[torch.Generator] = None,
    ) -> None:
        super().__init__()
        self.in_features = in_features
        self.hidden_dim = hidden_dim
        widths: List[int] = [in_features] + [hidden_dim] * depth
        self.layers = nn.ModuleList(
            init_linear(nn.Linear(widths[i], widths[i + 1], dtype=DTYPE), generator)
            for i in range(depth)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = torch.relu(x)
        return x


def build_hidden(
    feat: torch.Tensor,
    gamma_p: torch.Tensor,
    e_t: torch.Tensor,
    featurenet: FeatureNet,
) -> torch.Tensor:
    """
    Représentation cachée h = FeatureNet([feat, gamma_p, e_t]).

    Args:
        feat: Caractéristiques latentes (N, C_g) ou (C_g,).
        gamma_p: Encodages positionnels (N, 3(2L_p+1)) ou vecteur.
        e_t: Plongement temporel (C_t,), diffusé sur les N gaussiennes.
        featurenet: Réseau cible.

    Returns:
        torch.Tensor: (N, D_h) ou (D_h,).

    Raises:
        ShapeMismatchError: Largeur concaténée différente de l'entrée du réseau.
    """
    if e_t.ndim < feat.ndim:
        e_t = e_t.expand(feat.shape[:-1] + e_t.shape[-1:])
    x = torch.cat([feat, gamma_p, e_t], dim=-1)
    if x.shape[-1] != featurenet.in_features:
        logger.error(
            "Entree FeatureNet de largeur %d, attendu %d", x.shape[-1], featurenet.in_features
        )
        raise ShapeMismatchError(
            f"entree de largeur {x.shape[-1]} != {featurenet.in_features}"
        )
    return featurenet(x)
