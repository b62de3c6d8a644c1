"""Configuration pytest et fixtures globales."""

from typing import Callable

import numpy as np
import pytest
import torch

from deformable_occupancy.config import (
    Config,
    DistillationConfig,
    EncodingConfig,
    EvalConfig,
    ModelConfig,
    OptimizerConfig,
    TrainConfig,
)
from deformable_occupancy.data.synthetic_scene import (
    Mover,
    SceneObject,
    SceneRecipe,
    generate_scene,
)

TINY_GRID = {
    "min_corner": (-2.0, -2.0, -1.0),
    "max_corner": (2.0, 2.0, 1.0),
    "voxel_size": 0.5,
}
TINY_OFFSETS = (-2, 0, 2)


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="lance les tests longs"
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: test long, lance avec --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="test long: utiliser --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_tiny_recipe(seed: int = 0, **overrides) -> SceneRecipe:
    """Recette minimale: sol, un bloc de bâtiment et un piéton oscillant."""
    fields = {
        "seed": seed,
        "grid": dict(TINY_GRID),
        "frame_offsets": TINY_OFFSETS,
        "objects": (
            SceneObject("box", 10, (0.0, 0.0, -0.75), (2.0, 2.0, 0.25)),
            SceneObject("box", 13, (-1.25, 1.25, 0.25), (0.5, 0.5, 0.5)),
        ),
        "movers": (
            Mover(
                SceneObject("cylinder", 2, (0.5, 0.0, 0.0), (0.5, 0.5)),
                trajectory="sinusoidal",
                velocity=(0.5, 0.0, 0.0),
                period=8.0,
                pulse=0.2,
            ),
        ),
        "num_cameras": 2,
        "image_size": (8, 12),
    }
    fields.update(overrides)
    return SceneRecipe(**fields)


def make_tiny_config(**sections) -> Config:
    """Configuration réduite pour des entraînements de quelques pas."""
    config = Config(
        seed=0,
        encoding=EncodingConfig(L_p=2, L_t=2, C_t=4),
        model=ModelConfig(num_gaussians=16, feature_dim=4, hidden_dim=8, depth=2),
        optimizer=OptimizerConfig(base_lr=1e-2, warmup_iters=0),
        distillation=DistillationConfig(aligned_dim=4, patch_size=4, teacher_dim=8),
        train=TrainConfig(steps=3, frame_offsets=TINY_OFFSETS, log_every=1, eval_every=0),
        eval=EvalConfig(frame_offsets=(0,)),
    )
    return config.with_overrides(**sections) if sections else config


@pytest.fixture
def tiny_recipe():
    """Recette de scène minimale."""
    return make_tiny_recipe()


@pytest.fixture(scope="session")
def tiny_scene():
    """Scène minimale générée une fois par session."""
    return generate_scene(make_tiny_recipe())


@pytest.fixture
def tiny_config():
    """Configuration réduite."""
    return make_tiny_config()


@pytest.fixture
def rng():
    """Générateur numpy graine fixe."""
    return np.random.default_rng(1234)


@pytest.fixture
def generator():
    """Générateur torch graine fixe."""
    return torch.Generator().manual_seed(1234)


@pytest.fixture
def fd_check() -> Callable:
    """
    Compare un gradient autograd à des différences finies centrées.

    La fonction retournée prend (fn, tensor) où fn() recalcule un scalaire
    dépendant de tensor, et vérifie `samples` coordonnées tirées au hasard.
    """

    def check(fn, tensor, samples=6, h=1e-5, rtol=1e-4, atol=1e-6, seed=0):
        tensor.grad = None
        value = fn()
        (grad,) = torch.autograd.grad(value, tensor)
        flat = tensor.data.view(-1)
        picks = np.random.default_rng(seed).choice(
            flat.numel(), size=min(samples, flat.numel()), replace=False
        )
        for i in picks:
            original = flat[i].item()
            with torch.no_grad():
                flat[i] = original + h
                plus = fn().item()
                flat[i] = original - h
                minus = fn().item()
                flat[i] = original
            numeric = (plus - minus) / (2 * h)
            analytic = grad.view(-1)[i].item()
            assert abs(numeric - analytic) <= atol + rtol * abs(numeric), (
                f"indice {i}: numerique {numeric} != autograd {analytic}"
            )

    return check
