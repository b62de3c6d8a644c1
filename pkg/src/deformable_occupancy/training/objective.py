"""
Pertes de supervision faible et perte totale.

    L_total = lambda_seg L_seg + lambda_dep L_dep
              + lambda_distill L_distill + lambda_def L_def
"""

from typing import Iterable, List, Optional

import torch
import torch.nn.functional as F
from torch import nn

from deformable_occupancy.config import DTYPE, IGNORE, LossWeights
from deformable_occupancy.errors import (
    NonFiniteGradientError,
    NonFiniteLossError,
    ShapeMismatchError,
)
from deformable_occupancy.utils.logger import get_logger

logger = get_logger(__name__)


def segmentation_loss(
    rendered_logits: torch.Tensor,
    alpha: Optional[torch.Tensor],
    pseudo_labels: torch.Tensor,
) -> torch.Tensor:
    """
    Entropie croisée moyenne sur les pixels non ignorés de toutes les vues.

    Les pixels de faible alpha sont inclus tels quels. alpha n'est lu que
    pour la vérification de forme.

    Args:
        rendered_logits: (..., H, W, C).
        alpha: (..., H, W) ou None.
        pseudo_labels: (..., H, W) entiers dans 0..C-1 ou IGNORE.

    Returns:
        torch.Tensor: Scalaire; 0 si tous les pixels sont ignorés.

    Raises:
        ShapeMismatchError: Formes incompatibles.
    """
    labels = torch.as_tensor(pseudo_labels).long()
    if labels.shape != rendered_logits.shape[:-1] or (
        alpha is not None and alpha.shape != labels.shape
    ):
        logger.error(
            "Logits %s / etiquettes %s incompatibles",
            tuple(rendered_logits.shape), tuple(labels.shape),
        )
        raise ShapeMismatchError(
            f"logits {tuple(rendered_logits.shape)} / etiquettes {tuple(labels.shape)}"
        )
    if not bool((labels != IGNORE).any()):
        return torch.zeros((), dtype=DTYPE)

    C = rendered_logits.shape[-1]
    return F.cross_entropy(
        rendered_logits.reshape(-1, C), labels.reshape(-1), ignore_index=IGNORE
    )


def depth_loss(
    rendered_depth: torch.Tensor,
    valid_mask: torch.Tensor,
    pseudo_depth: torch.Tensor,
) -> torch.Tensor:
    """
    Erreur L1 moyenne sur les pixels valides (alpha suffisant et profondeur
    pseudo-étiquetée > 0); 0 sans pixel valide.

    Raises:
        ShapeMismatchError: Formes incompatibles.
    """
    target = torch.as_tensor(pseudo_depth, dtype=DTYPE)
    if rendered_depth.shape != target.shape or valid_mask.shape != target.shape:
        logger.error(
            "Profondeur %s / masque %s / cible %s incompatibles",
            tuple(rendered_depth.shape), tuple(valid_mask.shape), tuple(target.shape),
        )
        raise ShapeMismatchError("profondeur rendue, masque et cible incompatibles")

    keep = valid_mask & (target > 0)
    if not bool(keep.any()):
        return torch.zeros((), dtype=DTYPE)
    return (rendered_depth[keep] - target[keep]).abs().mean()


def total_loss(
    seg: torch.Tensor,
    dep: torch.Tensor,
    distill: torch.Tensor,
    deform: torch.Tensor,
    weights: Optional[LossWeights] = None,
) -> torch.Tensor:
    """
    Somme pondérée des composantes.

    Raises:
        NonFiniteLossError: Composante non finie.

    Example:
        >>> one = torch.ones((), dtype=torch.float64)
        >>> total_loss(one, 2 * one, 3 * one, 4 * one, LossWeights(1, 1, 1, 1))
        tensor(10., dtype=torch.float64)
    """
    weights = weights or LossWeights()
    parts = {"seg": seg, "dep": dep, "distill": distill, "def": deform}
    for name, value in parts.items():
        if not bool(torch.isfinite(torch.as_tensor(value)).all()):
            logger.error("Composante de perte non finie: %s", name)
            raise NonFiniteLossError(f"composante {name} non finie")

    total = torch.zeros((), dtype=DTYPE)
    for w, value in zip(weights.as_tuple(), parts.values()):
        total = total + w * value
    return total


def backward(
    loss: torch.Tensor, parameters: Iterable[nn.Parameter]
) -> List[torch.Tensor]:
    """
    Rétropropagation de la perte vers les paramètres.

    Les gradients précédents sont remis à zéro; un paramètre qui ne reçoit
    aucun gradient obtient un gradient nul.

    Returns:
        List[torch.Tensor]: Gradient de chaque paramètre, dans l'ordre
        reçu; chacun est aussi placé dans `p.grad` pour l'optimiseur.

    Raises:
        NonFiniteLossError: Perte non finie.
        NonFiniteGradientError: Gradient non fini.
    """
    params = list(parameters)
    if not bool(torch.isfinite(loss).all()):
        logger.error("Perte non finie avant retropropagation")
        raise NonFiniteLossError("perte non finie")
    for p in params:
        p.grad = None
    if loss.requires_grad:
        loss.backward()
    for p in params:
        if p.grad is None:
            p.grad = torch.zeros_like(p)
        elif not bool(torch.isfinite(p.grad).all()):
            logger.error("Gradient non fini pour un parametre de forme %s", tuple(p.shape))
            raise NonFiniteGradientError(f"gradient non fini (forme {tuple(p.shape)})")
    return [p.grad for p in params]
