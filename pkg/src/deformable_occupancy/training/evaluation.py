"""
Évaluation d'un modèle sur les grilles de vérité terrain d'une scène.

Le rapport contient exactement per_class, miou, insm, scnm, hcm, iou et
rayiou, plus une section frames quand plusieurs décalages sont évalués. La
durée d'inférence est retournée à part.
"""

import time
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from deformable_occupancy.config import EvalConfig
from deformable_occupancy.errors import MissingGroundTruthError
from deformable_occupancy.models.gaussian import SemanticLabelGrid
from deformable_occupancy.models.occupancy_model import OccupancyModel
from deformable_occupancy.utils.logger import get_logger
from deformable_occupancy.utils.metrics import (
    ClassTaxonomy,
    ConfusionCounts,
    RaySet,
    aggregate,
    confusion,
    ray_iou,
    visible_mask,
)

logger = get_logger(__name__)


@dataclass
class EvaluationResult:
    """Rapport JSON et durée d'inférence (secondes)."""

    report: Dict[str, object]
    timing: Dict[str, float]


def _check_offsets(scene, offsets: Sequence[int]) -> None:
    missing = [o for o in offsets if o not in scene.grids]
    if missing:
        logger.error("Verite terrain absente pour les decalages %s", missing)
        raise MissingGroundTruthError(f"verite terrain absente pour les decalages {missing}")


def evaluate_grids(
    predictions: Dict[int, SemanticLabelGrid],
    scene,
    config: Optional[EvalConfig] = None,
    taxonomy: Optional[ClassTaxonomy] = None,
) -> Dict[str, object]:
    """
    Compare des grilles prédites (décalage -> grille) à la vérité terrain.

    Args:
        predictions: Grilles prédites, une par décalage évalué.
        scene: Scène portant grids et cameras.
        config: Options (visible_only, rayiou, seuils).
        taxonomy: Taxonomie des classes.

    Returns:
        Dict: Rapport d'évaluation.

    Raises:
        MissingGroundTruthError: Décalage sans vérité terrain.
    """
    config = config or EvalConfig()
    taxonomy = taxonomy or ClassTaxonomy()
    offsets = sorted(predictions)
    _check_offsets(scene, offsets)
    rays = RaySet.from_cameras(scene.cameras) if config.rayiou else None

    total: Optional[ConfusionCounts] = None
    frames: Dict[str, Dict[str, object]] = {}
    ray_scores = []
    for offset in offsets:
        gt = scene.grids[offset]
        mask = visible_mask(gt, scene.cameras) if config.visible_only else None
        counts = confusion(predictions[offset], gt, taxonomy, mask=mask)
        total = counts if total is None else total + counts

        frame_report = aggregate(counts, taxonomy)
        if rays is not None:
            scores = ray_iou(predictions[offset], gt, rays, config.thresholds,
                             taxonomy.num_classes)
            ray_scores.append(scores)
            frame_report["rayiou"] = scores
        else:
            frame_report["rayiou"] = None
        frames[str(offset)] = frame_report

    report = aggregate(total, taxonomy)
    if ray_scores:
        report["rayiou"] = {
            key: float(np.mean([s[key] for s in ray_scores])) for key in ray_scores[0]
        }
    else:
        report["rayiou"] = None
    if len(offsets) > 1:
        report["frames"] = frames

    logger.info(
        "Evaluation (%d decalage(s)): mIoU=%s IoU=%.4f",
        len(offsets), _fmt(report["miou"]), report["iou"],
    )
    return report


def evaluate_model(
    model: OccupancyModel,
    scene,
    config: Optional[EvalConfig] = None,
    taxonomy: Optional[ClassTaxonomy] = None,
) -> EvaluationResult:
    """Prédit chaque décalage évalué puis compare à la vérité terrain."""
    config = config or EvalConfig()
    offsets = list(dict.fromkeys(int(o) for o in config.frame_offsets))
    _check_offsets(scene, offsets)

    start = time.perf_counter()
    predictions = {o: model.predict_occupancy(o) for o in offsets}
    elapsed = time.perf_counter() - start
    logger.info("Inference: %.3f s pour %d decalage(s)", elapsed, len(offsets))

    report = evaluate_grids(predictions, scene, config, taxonomy)
    return EvaluationResult(report, {"inference_seconds": elapsed, "frames": len(offsets)})


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"
