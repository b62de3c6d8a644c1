"""Tests pour le rendu différentiable."""

import numpy as np
import pytest
import torch

from deformable_occupancy.config import DTYPE
from deformable_occupancy.errors import PayloadShapeMismatchError
from deformable_occupancy.models.gaussian import (
    GaussianPrimitive,
    GaussianSet,
    look_at,
    normalize_quaternion,
    pinhole_intrinsics,
)
from deformable_occupancy.models.rendering import (
    COV2D_FLOOR,
    argmax_image,
    camera_depths,
    project_gaussian,
    project_gaussians,
    render_all,
    render_maps,
)

FOCAL = 10.0
CAMERA = look_at((-5.0, 0.0, 0.0), (0.0, 0.0, 0.0),
                 pinhole_intrinsics(FOCAL, FOCAL, 6.0, 4.0), 12, 8)
CENTER_PIXEL = (4, 6)


def gaussian(mu, scale=0.2, opacity=0.8, feat_dim=2):
    return GaussianPrimitive(np.asarray(mu, dtype=np.float64), np.array([1.0, 0.0, 0.0, 0.0]),
                             np.full(3, scale), opacity, np.zeros(feat_dim))


def random_set(n=5, seed=0):
    g = torch.Generator().manual_seed(seed)
    return GaussianSet(
        mu=torch.rand(n, 3, dtype=DTYPE, generator=g) - 0.5,
        rot=normalize_quaternion(torch.randn(n, 4, dtype=DTYPE, generator=g)),
        scale=torch.rand(n, 3, dtype=DTYPE, generator=g) * 0.2 + 0.1,
        opacity=torch.rand(n, dtype=DTYPE, generator=g) * 0.6 + 0.2,
        feat=torch.randn(n, 2, dtype=DTYPE, generator=g),
        mask=torch.full((n,), 0.5, dtype=DTYPE),
    )


def test_projection_center_and_depth():
    """Le centre monde se projette au point principal, à la profondeur 5."""
    proj = project_gaussian(gaussian((0.0, 0.0, 0.0)), CAMERA)
    assert torch.allclose(proj.center[0], torch.tensor([6.0, 4.0], dtype=DTYPE))
    assert float(proj.depth[0]) == pytest.approx(5.0)


def test_projection_covariance_isotropic():
    """Gaussienne isotrope sur l'axe: cov2d = (f s / z)^2 I + plancher."""
    proj = project_gaussian(gaussian((0.0, 0.0, 0.0), scale=0.5), CAMERA)
    expected = (FOCAL * 0.5 / 5.0) ** 2 + COV2D_FLOOR
    assert torch.allclose(proj.cov2d[0], expected * torch.eye(2, dtype=DTYPE))


def test_projection_culls_behind_camera():
    """Les gaussiennes derrière la caméra sont écartées."""
    assert project_gaussian(gaussian((-6.0, 0.0, 0.0)), CAMERA) is None
    gs = GaussianSet.from_primitives([gaussian((-6.0, 0.0, 0.0)), gaussian((1.0, 0.0, 0.0))])
    proj = project_gaussians(gs, CAMERA)
    assert proj.index.tolist() == [1]


def test_camera_depths():
    """Profondeur caméra par gaussienne."""
    gs = GaussianSet.from_primitives([gaussian((0.0, 0.0, 0.0)), gaussian((2.0, 1.0, 0.0))])
    assert torch.allclose(camera_depths(gs, CAMERA), torch.tensor([5.0, 7.0], dtype=DTYPE))


def test_single_gaussian_peak():
    """Au pixel central, alpha = opacité et la charge utile est pondérée par alpha."""
    gs = GaussianSet.from_primitives([gaussian((0.0, 0.0, 0.0), opacity=0.6)])
    maps = render_maps(gs, torch.tensor([[2.0, -1.0]], dtype=DTYPE), CAMERA)
    v, u = CENTER_PIXEL
    assert maps.payload.shape == (8, 12, 2)
    assert float(maps.alpha[v, u]) == pytest.approx(0.6)
    assert torch.allclose(maps.payload[v, u], torch.tensor([1.2, -0.6], dtype=DTYPE))
    assert float(maps.alpha[v, u]) >= float(maps.alpha.max()) - 1e-12


def test_alpha_clamped():
    """alpha_i est plafonné à 0.999."""
    gs = GaussianSet.from_primitives([gaussian((0.0, 0.0, 0.0), opacity=1.0)])
    maps = render_maps(gs, torch.ones(1, 1, dtype=DTYPE), CAMERA)
    assert float(maps.alpha.max()) == pytest.approx(0.999)


def test_front_gaussian_occludes():
    """La gaussienne la plus proche domine, quel que soit l'ordre d'entrée."""
    front = gaussian((-1.0, 0.0, 0.0), scale=0.5, opacity=0.99)
    back = gaussian((2.0, 0.0, 0.0), scale=0.5, opacity=0.99)
    payloads = torch.tensor([[1.0], [0.0]], dtype=DTYPE)
    v, u = CENTER_PIXEL
    a = render_maps(GaussianSet.from_primitives([front, back]), payloads, CAMERA)
    b = render_maps(GaussianSet.from_primitives([back, front]), payloads.flip(0), CAMERA)
    assert float(a.payload[v, u, 0]) == pytest.approx(0.99)
    assert torch.allclose(a.payload, b.payload)
    assert torch.allclose(a.alpha, b.alpha)
    assert float(a.alpha[v, u]) == pytest.approx(1 - 0.01**2)


def test_render_order_invariant():
    """Permuter l'ensemble ne change pas le rendu."""
    gs = random_set(n=6)
    payloads = torch.randn(6, 3, dtype=DTYPE, generator=torch.Generator().manual_seed(1))
    perm = torch.tensor([3, 0, 5, 1, 4, 2])
    a = render_maps(gs, payloads, CAMERA)
    b = render_maps(gs.select(perm), payloads[perm], CAMERA)
    assert torch.allclose(a.payload, b.payload, atol=1e-12)
    assert bool(((a.alpha >= 0) & (a.alpha <= 1)).all())


def test_render_empty_view():
    """Aucune gaussienne visible: images nulles."""
    gs = GaussianSet.from_primitives([gaussian((-8.0, 0.0, 0.0))])
    maps = render_maps(gs, torch.ones(1, 4, dtype=DTYPE), CAMERA)
    assert maps.payload.shape == (8, 12, 4)
    assert torch.count_nonzero(maps.payload) == 0
    assert not bool(maps.valid.any())


def test_payload_mismatch():
    """Nombre de lignes différent de N: PayloadShapeMismatchError."""
    gs = random_set(n=3)
    with pytest.raises(PayloadShapeMismatchError):
        render_maps(gs, torch.zeros(2, 1, dtype=DTYPE), CAMERA)
    with pytest.raises(PayloadShapeMismatchError):
        render_maps(gs, torch.zeros(3, dtype=DTYPE), CAMERA)


def test_render_all_depth_and_features():
    """Profondeur normalisée par alpha et caractéristiques optionnelles."""
    gs = GaussianSet.from_primitives([gaussian((0.0, 0.0, 0.0), opacity=0.5)])
    logits = torch.tensor([[0.0, 3.0, 1.0]], dtype=DTYPE)
    out = render_all(gs, logits, CAMERA, features=torch.ones(1, 4, dtype=DTYPE))
    v, u = CENTER_PIXEL
    assert out.semantic.shape == (8, 12, 3)
    assert out.features.shape == (8, 12, 4)
    assert float(out.depth[v, u]) == pytest.approx(5.0, rel=1e-6)
    assert bool(out.valid[v, u])
    assert argmax_image(out.semantic)[v, u] == 1
    assert render_all(gs, logits, CAMERA).features is None


def test_argmax_ties_to_smallest():
    """Égalité d'argmax résolue vers la plus petite classe."""
    logits = torch.zeros(2, 2, 3, dtype=DTYPE)
    assert argmax_image(logits).tolist() == [[0, 0], [0, 0]]


def test_render_gradient(fd_check):
    """Gradient de l'image rendue par rapport aux positions et opacités."""
    gs = random_set(n=4, seed=3)
    gs.mu.requires_grad_(True)
    gs.opacity.requires_grad_(True)
    payloads = torch.randn(4, 2, dtype=DTYPE, generator=torch.Generator().manual_seed(2))
    target = torch.linspace(-1, 1, 8 * 12 * 2, dtype=DTYPE).reshape(8, 12, 2)

    def loss():
        maps = render_maps(gs, payloads, CAMERA)
        return (maps.payload * target).sum() + maps.alpha.sum()

    fd_check(loss, gs.mu, samples=4)
    fd_check(loss, gs.opacity, samples=2)
