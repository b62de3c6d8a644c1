"""
Métriques d'évaluation de l'occupation sémantique.

IoU géométrique, IoU par classe, mIoU, moyennes de groupes (InsM, ScnM,
HCM) et RayIoU le long des rayons caméra. Les classes absentes des deux
grilles (union nulle) sont exclues des moyennes.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.metrics import confusion_matrix

from deformable_occupancy.config import FREE, RAYIOU_THRESHOLDS
from deformable_occupancy.errors import InvalidLabelError, MissingFileError
from deformable_occupancy.models.gaussian import (
    CameraModel,
    SemanticLabelGrid,
    check_same_spec,
)
from deformable_occupancy.utils.logger import get_logger
from deformable_occupancy.utils.raycast import traverse

logger = get_logger(__name__)

CLASS_NAMES = (
    "bicycle",
    "motorcycle",
    "pedestrian",
    "bus",
    "car",
    "construction_vehicle",
    "trailer",
    "truck",
    "barrier",
    "traffic_cone",
    "driveable_surface",
    "sidewalk",
    "terrain",
    "manmade",
    "vegetation",
)


@dataclass(frozen=True)
class ClassTaxonomy:
    """
    Noms de classes ordonnés et groupes d'agrégation.

    Attributes:
        names: Noms des C classes, dans l'ordre des identifiants.
        human: Groupe HCM.
        instance: Groupe InsM.
        scene: Groupe ScnM.
    """

    names: Tuple[str, ...] = CLASS_NAMES
    human: Tuple[str, ...] = ("bicycle", "motorcycle", "pedestrian")
    instance: Tuple[str, ...] = CLASS_NAMES[:10]
    scene: Tuple[str, ...] = CLASS_NAMES[10:]

    def __post_init__(self) -> None:
        all_names = set(self.names)
        for group in (self.human, self.instance, self.scene):
            if not set(group) <= all_names:
                raise InvalidLabelError(f"groupe hors taxonomie: {sorted(set(group) - all_names)}")
        if not set(self.human) <= set(self.instance):
            raise InvalidLabelError("le groupe humain doit etre inclus dans instance")
        if set(self.instance) & set(self.scene):
            raise InvalidLabelError("instance et scene doivent etre disjoints")

    @property
    def num_classes(self) -> int:
        return len(self.names)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ClassTaxonomy":
        """
        Lit une taxonomie JSON {"names": [...], "human": [...], "instance": [...],
        "scene": [...]}; les clés absentes prennent les valeurs par défaut.
        """
        path = Path(path)
        if not path.exists():
            logger.error("Taxonomie introuvable: %s", path)
            raise MissingFileError(f"taxonomie introuvable: {path}")
        data = json.loads(path.read_text(encoding="utf-8"))
        return cls(**{k: tuple(v) for k, v in data.items()})


@dataclass
class ConfusionCounts:
    """
    Décomptes de voxels.

    Attributes:
        intersection: (C,) |pred = gt = c|.
        union: (C,) |pred = c ou gt = c|.
        geo_intersection: Voxels occupés dans les deux grilles.
        geo_union: Voxels occupés dans au moins une grille.
    """

    intersection: np.ndarray
    union: np.ndarray
    geo_intersection: int = 0
    geo_union: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.intersection + other.intersection,
            self.union + other.union,
            self.geo_intersection + other.geo_intersection,
            self.geo_union + other.geo_union,
        )


def confusion(
    pred_grid: SemanticLabelGrid,
    gt_grid: SemanticLabelGrid,
    taxonomy: Optional[ClassTaxonomy] = None,
    mask: Optional[np.ndarray] = None,
) -> ConfusionCounts:
    """
    Décomptes d'intersection et d'union par classe.

    Args:
        pred_grid: Prédiction.
        gt_grid: Vérité terrain.
        taxonomy: Taxonomie (15 classes par défaut).
        mask: Voxels évalués (tous par défaut), par exemple le masque visible.

    Raises:
        SpecMismatchError: Grilles sur des spécifications différentes.
    """
    taxonomy = taxonomy or ClassTaxonomy()
    check_same_spec(pred_grid.spec, gt_grid.spec)
    num_classes = taxonomy.num_classes

    pred = pred_grid.labels
    gt = gt_grid.labels
    if mask is not None:
        pred, gt = pred[mask], gt[mask]
    pred = pred.ravel().astype(np.int64)
    gt = gt.ravel().astype(np.int64)

    labels = list(range(num_classes)) + [FREE]
    cm = confusion_matrix(gt, pred, labels=labels)
    diag = np.diag(cm)[:num_classes]
    gt_count = cm.sum(axis=1)[:num_classes]
    pred_count = cm.sum(axis=0)[:num_classes]

    occ_pred = pred != FREE
    occ_gt = gt != FREE
    return ConfusionCounts(
        intersection=diag.astype(np.int64),
        union=(gt_count + pred_count - diag).astype(np.int64),
        geo_intersection=int(np.sum(occ_pred & occ_gt)),
        geo_union=int(np.sum(occ_pred | occ_gt)),
    )


def _mean(values: List[Optional[float]]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


def aggregate_ious(
    per_class: Dict[str, Optional[float]], taxonomy: Optional[ClassTaxonomy] = None
) -> Dict[str, Optional[float]]:
    """
    Moyennes de groupes à partir d'IoU par classe (None = classe exclue).

    Returns:
        Dict: miou, insm, scnm, hcm.

    Example:
        >>> aggregate_ious({"bicycle": 10.68, "motorcycle": 12.88,
        ...                 "pedestrian": 9.56})["hcm"]
        11.04
    """
    taxonomy = taxonomy or ClassTaxonomy()

    def group(names: Sequence[str]) -> Optional[float]:
        return _mean([per_class.get(name) for name in names])

    return {
        "miou": group(taxonomy.names),
        "insm": group(taxonomy.instance),
        "scnm": group(taxonomy.scene),
        "hcm": group(taxonomy.human),
    }


def aggregate(
    counts: ConfusionCounts, taxonomy: Optional[ClassTaxonomy] = None
) -> Dict[str, object]:
    """
    IoU par classe, mIoU, InsM, ScnM, HCM et IoU géométrique.

    Returns:
        Dict: {"per_class", "miou", "insm", "scnm", "hcm", "iou"}; les IoU
        sont dans [0, 1], None pour une classe ou un groupe sans support.
    """
    taxonomy = taxonomy or ClassTaxonomy()
    per_class: Dict[str, Optional[float]] = {}
    for c, name in enumerate(taxonomy.names):
        union = int(counts.union[c])
        per_class[name] = counts.intersection[c] / union if union else None

    report: Dict[str, object] = {"per_class": per_class}
    report.update(aggregate_ious(per_class, taxonomy))
    report["iou"] = counts.geo_intersection / counts.geo_union if counts.geo_union else 0.0
    return report


@dataclass
class RaySet:
    """Rayons unitaires (origines (R, 3), directions (R, 3))."""

    origins: np.ndarray
    directions: np.ndarray

    @classmethod
    def from_cameras(cls, cameras: Sequence[CameraModel]) -> "RaySet":
        origins, directions = [], []
        for camera in cameras:
            o, d, _ = camera.pixel_rays()
            origins.append(o)
            directions.append(d)
        return cls(np.concatenate(origins), np.concatenate(directions))


def ray_iou(
    pred_grid: SemanticLabelGrid,
    gt_grid: SemanticLabelGrid,
    rays: RaySet,
    thresholds: Sequence[float] = RAYIOU_THRESHOLDS,
    num_classes: Optional[int] = None,
) -> Dict[str, float]:
    """
    RayIoU: appariement des premiers impacts le long des rayons.

    Un rayon est TP au seuil tau si les deux grilles sont touchées, avec la
    même classe et un écart de distance <= tau. Sinon: impact prédit seul
    -> FP de la classe prédite; impact réel seul -> FN de la classe réelle;
    deux impacts non appariés -> FP prédit et FN réel; aucun impact -> rien.
    IoU par classe = TP / (TP + FP + FN), moyennée sur les classes présentes.

    Returns:
        Dict: {"1.0": ..., "2.0": ..., "4.0": ..., "mean": ...}.

    Raises:
        NonUnitDirectionError: Direction de rayon non unitaire.
    """
    check_same_spec(pred_grid.spec, gt_grid.spec)
    num_classes = num_classes or gt_grid.num_classes
    pred = traverse(pred_grid.labels, pred_grid.spec, rays.origins, rays.directions)
    gt = traverse(gt_grid.labels, gt_grid.spec, rays.origins, rays.directions)

    both = pred.hit & gt.hit
    same = both & (pred.label == gt.label)
    error = np.abs(pred.distance - gt.distance)

    result: Dict[str, float] = {}
    scores = []
    for tau in thresholds:
        tp_ray = same & (error <= tau)
        fp_ray = pred.hit & ~tp_ray
        fn_ray = gt.hit & ~tp_ray
        tp = np.bincount(gt.label[tp_ray], minlength=num_classes)[:num_classes]
        fp = np.bincount(pred.label[fp_ray], minlength=num_classes)[:num_classes]
        fn = np.bincount(gt.label[fn_ray], minlength=num_classes)[:num_classes]
        denom = tp + fp + fn
        present = denom > 0
        score = float(np.mean(tp[present] / denom[present])) if present.any() else 0.0
        result[str(float(tau))] = score
        scores.append(score)

    result["mean"] = float(np.mean(scores))
    logger.debug("RayIoU sur %d rayons: %s", rays.origins.shape[0], result)
    return result


def visible_mask(gt_grid: SemanticLabelGrid, cameras: Sequence[CameraModel]) -> np.ndarray:
    """
    Voxels vus par au moins un rayon caméra: voxels libres traversés avant le
    premier impact et le voxel du premier impact.

    Returns:
        np.ndarray: Masque booléen (X, Y, Z).
    """
    visited = np.zeros(gt_grid.spec.dims, dtype=bool)
    for camera in cameras:
        origins, directions, _ = camera.pixel_rays()
        traverse(gt_grid.labels, gt_grid.spec, origins, directions, visited=visited)
    logger.debug("Voxels visibles: %d / %d", int(visited.sum()), visited.size)
    return visited
