"""Tests pour le modèle d'occupation complet."""

import numpy as np
import pytest
import torch

from deformable_occupancy.config import NUM_CLASSES, ModelConfig
from deformable_occupancy.data.formats import CheckpointData, read_checkpoint, write_checkpoint
from deformable_occupancy.errors import ShapeMismatchError
from deformable_occupancy.models.occupancy_model import CANONICAL_MASK, OccupancyModel

from tests.conftest import make_tiny_config, make_tiny_recipe

TEACHER_CHANNELS = 16


@pytest.fixture
def spec():
    """Grille de la scène minimale."""
    return make_tiny_recipe().spec()


@pytest.fixture
def model(spec):
    """Modèle réduit."""
    return OccupancyModel.from_config(make_tiny_config(), spec, TEACHER_CHANNELS)


def test_init_deterministic(spec):
    """Même graine, mêmes paramètres; autre graine, autres paramètres."""
    a = OccupancyModel(make_tiny_config(), spec, TEACHER_CHANNELS)
    b = OccupancyModel(make_tiny_config(), spec, TEACHER_CHANNELS)
    c = OccupancyModel(make_tiny_config().with_overrides(seed=1), spec, TEACHER_CHANNELS)
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()


def test_init_inside_grid(model, spec):
    """Positions initiales tirées dans l'étendue de la grille."""
    mu = model.raw_mu.detach().numpy()
    assert model.num_gaussians == 16
    assert (mu >= np.asarray(spec.min_corner)).all()
    assert (mu <= np.asarray(spec.max_corner)).all()


def test_canonical_activation(model, spec):
    """Quaternions unitaires, échelles positives, opacités dans ]0,1[."""
    gaussians = model.canonical()
    norms = torch.linalg.norm(gaussians.rot, dim=1)
    assert torch.allclose(norms, torch.ones_like(norms))
    scale = spec.voxel_size * ModelConfig().init_scale_multiplier
    assert torch.allclose(gaussians.scale, torch.full_like(gaussians.scale, scale))
    assert bool(((gaussians.opacity > 0) & (gaussians.opacity < 1)).all())
    assert bool((gaussians.mask == CANONICAL_MASK).all())
    assert gaussians.feature_dim == 4


def test_frames_start_at_canonical(model):
    """Têtes de déformation nulles à l'initialisation: frames = canonique."""
    output = model.frames([-2, 0, 2])
    canonical = model.canonical()
    for offset in (-2, 0, 2):
        frame = output.frames[offset]
        assert torch.allclose(frame.mu, canonical.mu)
        assert torch.allclose(frame.scale, canonical.scale)


def test_predict_shapes(model, spec):
    """Probabilités (X, Y, Z) et (X, Y, Z, C) dans [0, 1]."""
    p_occ, p_sem = model.predict(model.canonical())
    assert p_occ.shape == spec.dims
    assert p_sem.shape == spec.dims + (NUM_CLASSES,)
    assert bool(((p_occ >= 0) & (p_occ <= 1)).all())
    assert torch.allclose(p_sem.sum(-1), torch.ones_like(p_occ))


def test_predict_occupancy_grid(model, spec):
    """Grille prédite sur la spécification du modèle, sans gradient."""
    grid = model.predict_occupancy(0)
    assert grid.spec == spec
    assert grid.labels.dtype == np.uint8
    assert grid.labels.shape == spec.dims


def test_semantic_logits_shape(model):
    """Un vecteur de logits par gaussienne."""
    assert model.semantic_logits(model.canonical()).shape == (16, NUM_CLASSES)


def test_load_arrays_errors(model):
    """Nom manquant, nom inattendu ou forme différente refusés."""
    arrays = model.named_arrays()
    missing = dict(arrays)
    missing.pop("raw_mu")
    with pytest.raises(ShapeMismatchError):
        model.load_arrays(missing)
    with pytest.raises(ShapeMismatchError):
        model.load_arrays({**arrays, "extra": np.zeros(1)})
    with pytest.raises(ShapeMismatchError):
        model.load_arrays({**arrays, "raw_mu": np.zeros((3, 3))})


def test_load_arrays_replaces_values(model):
    """Les valeurs chargées remplacent les paramètres."""
    arrays = model.named_arrays()
    arrays["raw_mu"] = np.zeros_like(arrays["raw_mu"])
    model.load_arrays(arrays)
    assert torch.count_nonzero(model.raw_mu) == 0


def test_checkpoint_metadata(model):
    """Configuration, grille et canaux enseignant dans les métadonnées."""
    ckpt = model.checkpoint(4, {"scene_digest": "abc"})
    assert ckpt.step == 4
    assert ckpt.metadata["teacher_channels"] == TEACHER_CHANNELS
    assert ckpt.metadata["config_digest"] == model.config.digest()
    assert ckpt.metadata["scene_digest"] == "abc"


def test_checkpoint_roundtrip(tmp_path, model):
    """Écriture puis reconstruction: mêmes paramètres et même prédiction."""
    path = write_checkpoint(tmp_path / "model.ckpt", model.checkpoint(7))
    restored = OccupancyModel.from_checkpoint(read_checkpoint(path))
    assert restored.digest() == model.digest()
    np.testing.assert_array_equal(
        restored.predict_occupancy(0).labels, model.predict_occupancy(0).labels
    )


def test_from_checkpoint_missing_metadata(model):
    """Métadonnées absentes: ShapeMismatchError."""
    with pytest.raises(ShapeMismatchError):
        OccupancyModel.from_checkpoint(CheckpointData(model.named_arrays(), 0, {}))
