"""
Boucle d'entraînement par supervision faible.

Un pas: déformation vers tous les décalages configurés, rendu sémantique et
profondeur par décalage et par caméra, distillation au décalage 0,
régularisation de déformation, perte totale, rétropropagation, pas AdamW.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch

from deformable_occupancy.config import DTYPE, Config, EvalConfig
from deformable_occupancy.errors import IndexOutOfRangeError, MissingGroundTruthError
from deformable_occupancy.models.deformation import deformation_loss
from deformable_occupancy.models.distillation import (
    TeacherFeatureStack,
    distillation_loss,
    load_teacher_features,
    project_student,
    project_teacher,
    synth_teacher,
)
from deformable_occupancy.models.occupancy_model import OccupancyModel
from deformable_occupancy.models.rendering import render_all
from deformable_occupancy.training.evaluation import evaluate_model
from deformable_occupancy.training.objective import (
    backward,
    depth_loss,
    segmentation_loss,
    total_loss,
)
from deformable_occupancy.training.optimizer import OptimizerState, adam_step
from deformable_occupancy.utils.checkpoint_manager import CheckpointManager
from deformable_occupancy.utils.logger import get_logger

logger = get_logger(__name__)

METRIC_COLUMNS = ["step", "loss_total", "loss_seg", "loss_dep", "loss_distill", "loss_def", "lr"]
METRICS_FILE = "metrics.csv"
EVAL_HISTORY_FILE = "eval_history.csv"
FINAL_CHECKPOINT = "final"


@dataclass
class StepLosses:
    """Composantes de la perte d'un pas."""

    total: torch.Tensor
    seg: torch.Tensor
    dep: torch.Tensor
    distill: torch.Tensor
    deform: torch.Tensor


@dataclass
class TrainResult:
    """
    Résultat d'un entraînement.

    Attributes:
        model: Modèle entraîné.
        history: Une ligne par pas (colonnes METRIC_COLUMNS).
        evaluations: Une ligne par évaluation périodique (step, miou, iou).
        checkpoint_path: Checkpoint final, None sans répertoire de sortie.
    """

    model: OccupancyModel
    history: pd.DataFrame
    evaluations: pd.DataFrame = field(default_factory=pd.DataFrame)
    checkpoint_path: Optional[Path] = None


def resolve_cameras(scene, cameras: Optional[Sequence[int]]) -> List[int]:
    """Indices de caméras utilisés; toutes par défaut."""
    views = list(range(len(scene.cameras))) if cameras is None else [int(c) for c in cameras]
    bad = [v for v in views if not 0 <= v < len(scene.cameras)]
    if bad:
        logger.error("Cameras hors plage: %s (%d disponibles)", bad, len(scene.cameras))
        raise IndexOutOfRangeError(f"cameras hors plage: {bad}")
    return views


def resolve_teacher(
    scene, config: Config, views: Sequence[int], teacher: Optional[TeacherFeatureStack] = None
) -> TeacherFeatureStack:
    """
    Pile enseignant des vues entraînées, moitiés sélectionnées.

    Sans pile fournie: fichier DEGO-TF1 en mode file, enseignant synthétique
    sinon.
    """
    dc = config.distillation
    if teacher is None:
        if dc.teacher_mode == "file":
            teacher = load_teacher_features(dc.teacher_path)
        else:
            teacher = synth_teacher(
                scene,
                patch_size=dc.patch_size,
                teacher_dim=dc.teacher_dim,
                block_index=dc.block_index,
                num_classes=config.model.num_classes,
            )
    if teacher.num_views != len(scene.cameras):
        logger.error("Pile enseignant: %d vues, %d cameras", teacher.num_views, len(scene.cameras))
        raise IndexOutOfRangeError(
            f"pile enseignant de {teacher.num_views} vues pour {len(scene.cameras)} cameras"
        )
    selected = TeacherFeatureStack(
        np.ascontiguousarray(teacher.features[list(views)]), teacher.block_index, teacher.frame
    )
    return selected.select_halves(dc.teacher_halves)


def compute_losses(
    model: OccupancyModel,
    scene,
    offsets: Sequence[int],
    views: Sequence[int],
    teacher: TeacherFeatureStack,
    config: Config,
) -> StepLosses:
    """Perte totale et composantes pour un pas, sur tous les décalages et vues."""
    out = model.frames(offsets)
    H, W = scene.image_size

    logits, alphas, labels = [], [], []
    depths, valids, targets = [], [], []
    student_maps, student_valid = [], []
    for offset in out.frames:
        gaussians = out.frames[offset]
        sem = model.semantic_logits(gaussians)
        feats = project_student(gaussians.feat, model.projectors) if offset == 0 else None
        for v in views:
            render = render_all(gaussians, sem, scene.cameras[v], feats)
            logits.append(render.semantic)
            alphas.append(render.alpha)
            labels.append(torch.as_tensor(scene.seg[offset][v].astype(np.int64)))
            depths.append(render.depth)
            valids.append(render.valid)
            targets.append(torch.as_tensor(scene.depth[offset][v], dtype=DTYPE))
            if feats is not None:
                student_maps.append(render.features)
                student_valid.append(render.valid)

    seg = segmentation_loss(torch.stack(logits), torch.stack(alphas), torch.stack(labels))
    dep = depth_loss(torch.stack(depths), torch.stack(valids), torch.stack(targets))

    if student_maps:
        teacher_maps = project_teacher(teacher, model.projectors, H, W)
        distill = distillation_loss(
            teacher_maps, torch.stack(student_maps), torch.stack(student_valid)
        )
    else:
        distill = torch.zeros((), dtype=DTYPE)

    deform = deformation_loss(out.updates, out.masks, config.deformation_loss)
    total = total_loss(seg, dep, distill, deform, config.loss_weights)
    return StepLosses(total, seg, dep, distill, deform)


def train(
    scene,
    config: Config,
    teacher: Optional[TeacherFeatureStack] = None,
    output_dir: Optional[str] = None,
    on_step: Optional[Callable[[Dict[str, float]], None]] = None,
) -> TrainResult:
    """
    Entraîne un modèle sur une scène.

    Args:
        scene: SyntheticScene couvrant les décalages configurés.
        config: Configuration complète.
        teacher: Pile enseignant; résolue depuis la configuration si None.
        output_dir: Répertoire du journal de métriques et du checkpoint
            final; rien n'est écrit si None.
        on_step: Rappel optionnel recevant la ligne de métriques du pas.

    Returns:
        TrainResult: Modèle, historique, évaluations, checkpoint.

    Raises:
        MissingGroundTruthError: Décalage absent de la scène.
        IndexOutOfRangeError: Caméra hors plage.
        NonFiniteLossError, NonFiniteGradientError: Divergence.
    """
    tc = config.train
    offsets = list(dict.fromkeys(int(o) for o in tc.frame_offsets))
    missing = [o for o in offsets if o not in scene.grids]
    if missing:
        logger.error("Decalages absents de la scene: %s", missing)
        raise MissingGroundTruthError(f"decalages absents de la scene: {missing}")
    if 0 not in offsets:
        logger.warning("Decalage 0 absent: pas de distillation")

    views = resolve_cameras(scene, tc.cameras)
    teacher = resolve_teacher(scene, config, views, teacher)

    torch.manual_seed(config.seed)
    model = OccupancyModel.from_config(config, scene.spec, teacher.channels)
    params = list(model.parameters())
    state = OptimizerState(params, config.optimizer, max_steps=tc.steps)
    frozen = all(w == 0 for w in config.loss_weights.as_tuple())
    if frozen:
        logger.warning("Tous les poids de perte sont nuls: parametres figes")

    eval_config = EvalConfig(rayiou=False, frame_offsets=(0,)) if 0 in scene.grids else None
    rows: List[Dict[str, float]] = []
    evaluations: List[Dict[str, float]] = []

    logger.info(
        "Entrainement: %d pas, decalages %s, cameras %s", tc.steps, offsets, views
    )
    for step in range(1, tc.steps + 1):
        losses = compute_losses(model, scene, offsets, views, teacher, config)
        if frozen:
            lr = 0.0
        else:
            backward(losses.total, params)
            lr = adam_step(state)

        row = {
            "step": step,
            "loss_total": float(losses.total),
            "loss_seg": float(losses.seg),
            "loss_dep": float(losses.dep),
            "loss_distill": float(losses.distill),
            "loss_def": float(losses.deform),
            "lr": lr,
        }
        rows.append(row)
        if on_step is not None:
            on_step(row)
        if step % tc.log_every == 0 or step == tc.steps:
            logger.info(
                "Pas %d/%d: total=%.4f seg=%.4f dep=%.4f distill=%.4f def=%.5f lr=%.2e",
                step, tc.steps, row["loss_total"], row["loss_seg"], row["loss_dep"],
                row["loss_distill"], row["loss_def"], lr,
            )
        if eval_config is not None and tc.eval_every and step % tc.eval_every == 0:
            report = evaluate_model(model, scene, eval_config).report
            evaluations.append({"step": step, "miou": report["miou"], "iou": report["iou"]})

    history = pd.DataFrame(rows, columns=METRIC_COLUMNS)
    eval_frame = pd.DataFrame(evaluations, columns=["step", "miou", "iou"])
    result = TrainResult(model, history, eval_frame)

    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        history.to_csv(out / METRICS_FILE, index=False, header=False)
        if len(eval_frame):
            eval_frame.to_csv(out / EVAL_HISTORY_FILE, index=False)
        manager = CheckpointManager(str(out))
        ckpt = model.checkpoint(
            tc.steps, {"scene_digest": scene.digest(), "parameter_digest": model.digest()}
        )
        result.checkpoint_path = manager.save_checkpoint(FINAL_CHECKPOINT, ckpt)

    logger.info("Entrainement termine: perte finale %.4f", rows[-1]["loss_total"])
    return result
