"""Figures d'entraînement et d'évaluation (matplotlib, backend Agg)."""

from pathlib import Path
from typing import Dict, Optional, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from deformable_occupancy.utils.logger import get_logger  # noqa: E402

logger = get_logger(__name__)

LOSS_COMPONENTS = ("loss_total", "loss_seg", "loss_dep", "loss_distill", "loss_def")


def plot_loss_curve(history: pd.DataFrame, path: Union[str, Path]) -> Path:
    """
    Courbes des composantes de perte en fonction du pas (échelle log).

    Args:
        history: Journal de métriques (colonnes step, loss_*).
        path: Fichier PNG à écrire.

    Returns:
        Path: Fichier écrit.
    """
    path = Path(path)
    fig, ax = plt.subplots(figsize=(8, 5), facecolor="w")
    for column in LOSS_COMPONENTS:
        if column in history and (history[column] > 0).any():
            ax.plot(history["step"], history[column], label=column.replace("loss_", ""))
    ax.set_yscale("log")
    ax.set_xlabel("pas")
    ax.set_ylabel("perte")
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.info("Courbe de perte ecrite: %s", path)
    return path


def plot_class_iou(
    per_class: Dict[str, Optional[float]], path: Union[str, Path], title: str = ""
) -> Path:
    """Barres d'IoU par classe; les classes sans support sont grisées à 0."""
    path = Path(path)
    names = list(per_class)
    values = [per_class[n] if per_class[n] is not None else 0.0 for n in names]
    colors = ["tab:blue" if per_class[n] is not None else "lightgray" for n in names]

    fig, ax = plt.subplots(figsize=(10, 4), facecolor="w")
    ax.bar(range(len(names)), values, color=colors)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("IoU")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.info("IoU par classe ecrit: %s", path)
    return path
