"""AdamW avec échauffement linéaire, décroissance cosinus et écrêtage global."""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import torch
from torch import nn

from deformable_occupancy.config import OptimizerConfig
from deformable_occupancy.errors import NonFiniteGradientError
from deformable_occupancy.utils.logger import get_logger

logger = get_logger(__name__)


def lr_at(step: int, config: OptimizerConfig, max_steps: int) -> float:
    """
    Taux d'apprentissage au pas donné.

    Avant warmup_iters: interpolation linéaire de base_lr * warmup_ratio à
    base_lr. Ensuite: min_lr + (base_lr - min_lr)(1 + cos(pi * progress)) / 2,
    progress étant borné à 1 au-delà de max_steps.

    Example:
        >>> lr_at(0, OptimizerConfig(), 2000)
        1e-07
    """
    base = config.base_lr
    warmup = config.warmup_iters
    if step < warmup:
        start = base * config.warmup_ratio
        return start + (base - start) * step / warmup

    min_lr = base * config.min_lr_ratio
    span = max_steps - warmup
    progress = min(1.0, (step - warmup) / span) if span > 0 else 1.0
    return min_lr + 0.5 * (base - min_lr) * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    """
    État de l'optimiseur: torch.optim.AdamW (moments par paramètre),
    compteur de pas et planning.

    Attributes:
        params: Paramètres optimisés.
        config: Hyperparamètres.
        max_steps: Longueur du planning cosinus.
        step: Nombre de pas déjà effectués.
    """

    params: List[nn.Parameter]
    config: OptimizerConfig = field(default_factory=OptimizerConfig)
    max_steps: int = 2000
    step: int = 0
    optimizer: Optional[torch.optim.AdamW] = None

    def __post_init__(self) -> None:
        self.params = list(self.params)
        c = self.config
        self.optimizer = torch.optim.AdamW(
            self.params,
            lr=lr_at(0, c, self.max_steps),
            betas=(c.beta1, c.beta2),
            eps=c.eps,
            weight_decay=c.weight_decay,
        )

    def moments(self, param: nn.Parameter):
        """Moments (m, v) d'un paramètre, None avant le premier pas."""
        state = self.optimizer.state.get(param, {})
        if "exp_avg" not in state:
            return None
        return state["exp_avg"], state["exp_avg_sq"]


def adam_step(state: OptimizerState) -> float:
    """
    Un pas AdamW sur les gradients déjà calculés.

    Écrêtage à grad_clip_norm sur la norme globale, décroissance de poids
    découplée, moments corrigés du biais.

    Returns:
        float: Taux d'apprentissage utilisé.

    Raises:
        NonFiniteGradientError: Gradient non fini.
    """
    for p in state.params:
        if p.grad is not None and not bool(torch.isfinite(p.grad).all()):
            logger.error("Gradient non fini au pas %d", state.step)
            raise NonFiniteGradientError(f"gradient non fini au pas {state.step}")

    norm = nn.utils.clip_grad_norm_(state.params, state.config.grad_clip_norm)
    lr = lr_at(state.step, state.config, state.max_steps)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.step()
    state.step += 1
    logger.debug("Pas %d: lr=%.3e, norme de gradient=%.4f", state.step, lr, float(norm))
    return lr
