"""Tests pour la boucle d'entraînement."""

import math

import numpy as np
import pandas as pd
import pytest
import torch
from torch import nn

from deformable_occupancy.config import (
    DTYPE,
    DeformationLossWeights,
    DistillationConfig,
    LossWeights,
    OptimizerConfig,
    TrainConfig,
)
from deformable_occupancy.data.formats import read_checkpoint
from deformable_occupancy.errors import IndexOutOfRangeError, MissingGroundTruthError
from deformable_occupancy.models.deformation import deformation_loss
from deformable_occupancy.models.distillation import (
    TeacherFeatureStack,
    distillation_loss,
    project_student,
    project_teacher,
    save_teacher_features,
    synth_teacher,
)
from deformable_occupancy.models.occupancy_model import OccupancyModel
from deformable_occupancy.models.rendering import render_maps
from deformable_occupancy.training.objective import backward
from deformable_occupancy.training.optimizer import OptimizerState, adam_step
from deformable_occupancy.training.trainer import (
    EVAL_HISTORY_FILE,
    METRIC_COLUMNS,
    METRICS_FILE,
    resolve_cameras,
    resolve_teacher,
    train,
)

from tests.conftest import TINY_OFFSETS, make_tiny_config


@pytest.fixture
def single_thread():
    """Exécution sur un seul thread, restauré ensuite."""
    previous = torch.get_num_threads()
    torch.set_num_threads(1)
    yield
    torch.set_num_threads(previous)


def test_train_history(tiny_scene, tiny_config):
    """Une ligne finie par pas, colonnes fixes."""
    result = train(tiny_scene, tiny_config)
    assert list(result.history.columns) == METRIC_COLUMNS
    assert result.history["step"].tolist() == [1, 2, 3]
    assert np.isfinite(result.history.drop(columns="step").to_numpy()).all()
    assert (result.history["lr"] > 0).all()
    assert (result.history["loss_distill"] > 0).all()
    assert result.checkpoint_path is None
    assert result.evaluations.empty


def test_train_changes_parameters(tiny_scene, tiny_config):
    """Les paramètres s'éloignent de l'initialisation."""
    result = train(tiny_scene, tiny_config)
    fresh = OccupancyModel.from_config(tiny_config, tiny_scene.spec, result.model.teacher_channels)
    assert result.model.digest() != fresh.digest()


def test_train_writes_outputs(tmp_path, tiny_scene):
    """Journal CSV, historique d'évaluation et checkpoint final."""
    config = make_tiny_config(train=TrainConfig(steps=2, frame_offsets=TINY_OFFSETS,
                                                log_every=1, eval_every=2))
    result = train(tiny_scene, config, output_dir=str(tmp_path / "run"))
    metrics = pd.read_csv(tmp_path / "run" / METRICS_FILE, header=None, names=METRIC_COLUMNS)
    assert len(metrics) == 2
    assert metrics["step"].tolist() == [1, 2]
    np.testing.assert_allclose(metrics["loss_total"], result.history["loss_total"])
    assert (tmp_path / "run" / EVAL_HISTORY_FILE).exists()
    assert result.evaluations["step"].tolist() == [2]
    ckpt = read_checkpoint(result.checkpoint_path)
    assert ckpt.step == 2
    assert ckpt.metadata["scene_digest"] == tiny_scene.digest()
    assert ckpt.metadata["parameter_digest"] == result.model.digest()


def test_train_deterministic(tmp_path, tiny_scene, tiny_config, single_thread):
    """Même graine: checkpoints identiques octet par octet."""
    a = train(tiny_scene, tiny_config, output_dir=str(tmp_path / "a"))
    b = train(tiny_scene, tiny_config, output_dir=str(tmp_path / "b"))
    assert a.checkpoint_path.read_bytes() == b.checkpoint_path.read_bytes()
    pd.testing.assert_frame_equal(a.history, b.history)


def test_zero_weights_freeze_parameters(tiny_scene):
    """Tous les poids nuls: aucun pas d'optimisation."""
    config = make_tiny_config(loss_weights=LossWeights(0.0, 0.0, 0.0, 0.0))
    result = train(tiny_scene, config)
    fresh = OccupancyModel.from_config(config, tiny_scene.spec, result.model.teacher_channels)
    assert result.model.digest() == fresh.digest()
    assert (result.history["lr"] == 0).all()
    assert (result.history["loss_total"] == 0).all()


def test_on_step_callback(tiny_scene, tiny_config):
    """Le rappel reçoit la ligne de chaque pas."""
    rows = []
    train(tiny_scene, tiny_config, on_step=rows.append)
    assert [r["step"] for r in rows] == [1, 2, 3]
    assert set(rows[0]) == set(METRIC_COLUMNS)


def test_without_offset_zero_no_distillation(tiny_scene):
    """Sans décalage 0, la perte de distillation reste nulle."""
    config = make_tiny_config(train=TrainConfig(steps=1, frame_offsets=(-2, 2), log_every=1,
                                                eval_every=0))
    result = train(tiny_scene, config)
    assert result.history["loss_distill"].tolist() == [0.0]


def test_missing_offset(tiny_scene):
    """Décalage absent de la scène: MissingGroundTruthError."""
    config = make_tiny_config(train=TrainConfig(steps=1, frame_offsets=(0, 4), log_every=1,
                                                eval_every=0))
    with pytest.raises(MissingGroundTruthError):
        train(tiny_scene, config)


def test_camera_out_of_range(tiny_scene):
    """Caméra inexistante: IndexOutOfRangeError."""
    assert resolve_cameras(tiny_scene, None) == [0, 1]
    assert resolve_cameras(tiny_scene, [1]) == [1]
    with pytest.raises(IndexOutOfRangeError):
        resolve_cameras(tiny_scene, [2])
    config = make_tiny_config(train=TrainConfig(steps=1, frame_offsets=(0,), cameras=(0, 3),
                                                log_every=1, eval_every=0))
    with pytest.raises(IndexOutOfRangeError):
        train(tiny_scene, config)


def test_resolve_teacher_halves_and_views(tiny_scene):
    """Sélection des vues puis de la moitié spatiale."""
    config = make_tiny_config(distillation=DistillationConfig(
        aligned_dim=4, patch_size=4, teacher_dim=8, teacher_halves="spatial"))
    teacher = resolve_teacher(tiny_scene, config, [1])
    assert teacher.num_views == 1
    assert teacher.channels == 8


def test_teacher_view_mismatch(tiny_scene, tiny_config):
    """Pile enseignant d'un autre nombre de vues refusée."""
    stack = TeacherFeatureStack(np.zeros((3, 2, 3, 16), dtype=np.float32))
    with pytest.raises(IndexOutOfRangeError):
        train(tiny_scene, tiny_config, teacher=stack)


def test_teacher_from_file(tmp_path, tiny_scene):
    """Mode file: la pile est lue depuis un fichier DEGO-TF1."""
    path = save_teacher_features(tmp_path / "teacher.tf",
                                 synth_teacher(tiny_scene, patch_size=4, teacher_dim=8))
    config = make_tiny_config(
        distillation=DistillationConfig(aligned_dim=4, patch_size=4, teacher_dim=8,
                                        teacher_mode="file", teacher_path=str(path)),
        train=TrainConfig(steps=1, frame_offsets=(0,), log_every=1, eval_every=0),
    )
    result = train(tiny_scene, config)
    assert result.model.teacher_channels == 16


def test_rigid_gaussians_invariant_after_training(tiny_scene, tiny_config):
    """Masque sous le seuil: rotation, échelle et opacité identiques à toutes les frames."""
    model = train(tiny_scene, tiny_config).model
    net = model.deformation
    g = torch.Generator().manual_seed(3)
    with torch.no_grad():
        net.head_mask.weight.zero_()
        net.head_mask.bias.fill_(-4.0)
        for head in (net.head_def_rot, net.head_def_scale, net.head_def_opacity):
            head.weight.uniform_(-0.5, 0.5, generator=g)
        out = model.frames(TINY_OFFSETS)
        canonical = model.canonical()
    assert bool((out.masks < 0.1).all())
    for frame in out.frames.values():
        assert torch.allclose(frame.rot, canonical.rot, rtol=0, atol=1e-9)
        assert torch.allclose(frame.scale, canonical.scale, rtol=0, atol=1e-9)
        assert torch.allclose(frame.opacity, canonical.opacity, rtol=0, atol=1e-9)


@pytest.mark.parametrize("m0", [0.1, 0.3, 0.7, 0.9])
def test_mask_binarizes_under_mask_loss(m0):
    """L_mask seule pousse le masque vers l'extrémité la plus proche."""
    logit = nn.Parameter(torch.tensor([math.log(m0 / (1 - m0))], dtype=DTYPE))
    config = OptimizerConfig(base_lr=0.1, weight_decay=0.0, warmup_iters=0, min_lr_ratio=1.0)
    state = OptimizerState([logit], config, max_steps=500)
    weights = DeformationLossWeights(lambda_reg=0.0, lambda_mask=1.0)
    for _ in range(500):
        backward(deformation_loss([], torch.sigmoid(logit), weights), [logit])
        adam_step(state)
    m = float(torch.sigmoid(logit))
    assert m * (1 - m) < 1e-3
    assert (m < 0.5) == (m0 < 0.5)


def test_distillation_alone_converges(tiny_scene, tiny_config):
    """Géométrie figée, L_distill seule: la perte passe sous 0.1."""
    views = [0, 1]
    teacher = resolve_teacher(tiny_scene, tiny_config, views)
    model = OccupancyModel.from_config(tiny_config, tiny_scene.spec, teacher.channels)
    optimizer = torch.optim.Adam([model.feat, *model.projectors.parameters()], lr=0.01)
    H, W = tiny_scene.image_size

    def loss_value():
        gaussians = model.canonical()
        feats = project_student(gaussians.feat, model.projectors)
        maps = [render_maps(gaussians, feats, tiny_scene.cameras[v]) for v in views]
        student = torch.stack([m.payload for m in maps])
        valid = torch.stack([m.valid for m in maps])
        assert bool(valid.any())
        teacher_maps = project_teacher(teacher, model.projectors, H, W)
        return distillation_loss(teacher_maps, student, valid)

    initial = float(loss_value())
    assert initial > 0.1
    for _ in range(2000):
        optimizer.zero_grad()
        loss = loss_value()
        if float(loss) < 0.1:
            break
        loss.backward()
        optimizer.step()
    assert float(loss) < 0.1
