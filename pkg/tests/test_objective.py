"""Tests pour les pertes de supervision et la rétropropagation."""

import math

import pytest
import torch
from torch import nn

from deformable_occupancy.config import DTYPE, IGNORE, LossWeights
from deformable_occupancy.errors import (
    NonFiniteGradientError,
    NonFiniteLossError,
    ShapeMismatchError,
)
from deformable_occupancy.training.objective import (
    backward,
    depth_loss,
    segmentation_loss,
    total_loss,
)


def scalar(value):
    return torch.tensor(value, dtype=DTYPE)


def test_segmentation_uniform_logits():
    """Logits uniformes: entropie croisée = log C."""
    logits = torch.zeros(2, 3, 4, 5, dtype=DTYPE)
    labels = torch.randint(0, 5, (2, 3, 4), generator=torch.Generator().manual_seed(0))
    loss = segmentation_loss(logits, torch.ones(2, 3, 4, dtype=DTYPE), labels)
    assert float(loss) == pytest.approx(math.log(5))


def test_segmentation_ignores_pixels():
    """Les pixels IGNORE ne comptent pas."""
    logits = torch.tensor([[[5.0, 0.0], [0.0, 0.0]]], dtype=DTYPE)
    labels = torch.tensor([[0, IGNORE]])
    expected = -torch.log_softmax(logits[0, 0], dim=0)[0]
    assert float(segmentation_loss(logits, None, labels)) == pytest.approx(float(expected))


def test_segmentation_all_ignored():
    """Tous les pixels ignorés: perte nulle."""
    labels = torch.full((1, 2, 2), IGNORE)
    loss = segmentation_loss(torch.randn(1, 2, 2, 3, dtype=DTYPE), None, labels)
    assert float(loss) == 0.0


def test_segmentation_shape_mismatch():
    """Formes incompatibles refusées."""
    with pytest.raises(ShapeMismatchError):
        segmentation_loss(torch.zeros(2, 2, 3, dtype=DTYPE), None, torch.zeros(2, 3))
    with pytest.raises(ShapeMismatchError):
        segmentation_loss(torch.zeros(2, 2, 3, dtype=DTYPE), torch.zeros(3, 2),
                          torch.zeros(2, 2))


def test_segmentation_gradient(fd_check):
    """Gradient de l'entropie croisée par rapport aux logits."""
    logits = torch.randn(2, 3, 4, dtype=DTYPE, generator=torch.Generator().manual_seed(1),
                         requires_grad=True)
    labels = torch.tensor([[0, 1, IGNORE], [3, 2, 1]])
    fd_check(lambda: segmentation_loss(logits, None, labels), logits)


def test_depth_loss_valid_pixels():
    """L1 moyenne sur les pixels valides à profondeur cible positive."""
    rendered = torch.tensor([[1.0, 2.0], [3.0, 4.0]], dtype=DTYPE)
    target = torch.tensor([[1.5, 0.0], [2.0, 9.0]], dtype=DTYPE)
    valid = torch.tensor([[True, True], [True, False]])
    assert float(depth_loss(rendered, valid, target)) == pytest.approx((0.5 + 1.0) / 2)


def test_depth_loss_no_valid_pixel():
    """Aucun pixel valide: perte nulle."""
    rendered = torch.ones(2, 2, dtype=DTYPE)
    assert float(depth_loss(rendered, torch.zeros(2, 2, dtype=torch.bool), rendered)) == 0.0
    assert float(depth_loss(rendered, torch.ones(2, 2, dtype=torch.bool),
                            torch.zeros(2, 2))) == 0.0


def test_depth_loss_shape_mismatch():
    """Formes incompatibles refusées."""
    with pytest.raises(ShapeMismatchError):
        depth_loss(torch.zeros(2, 2, dtype=DTYPE), torch.ones(2, 2, dtype=torch.bool),
                   torch.zeros(2, 3))


def test_total_loss_weighted_sum():
    """Somme pondérée des quatre composantes."""
    total = total_loss(scalar(1.0), scalar(2.0), scalar(3.0), scalar(4.0),
                       LossWeights(1.0, 0.5, 2.0, 0.0))
    assert float(total) == pytest.approx(1.0 + 1.0 + 6.0)
    default = total_loss(scalar(1.0), scalar(1.0), scalar(1.0), scalar(1.0))
    assert float(default) == pytest.approx(3.05)


def test_total_loss_non_finite():
    """Composante non finie: NonFiniteLossError, même à poids nul."""
    with pytest.raises(NonFiniteLossError):
        total_loss(scalar(1.0), scalar(float("nan")), scalar(0.0), scalar(0.0),
                   LossWeights(1.0, 0.0, 0.0, 0.0))


def test_backward_zero_fills_unused():
    """Paramètre inutilisé: gradient nul; anciens gradients remplacés."""
    used = nn.Parameter(torch.tensor([2.0], dtype=DTYPE))
    unused = nn.Parameter(torch.tensor([1.0], dtype=DTYPE))
    used.grad = torch.tensor([100.0], dtype=DTYPE)
    grads = backward((used**2).sum(), [used, unused])
    assert [g.tolist() for g in grads] == [[4.0], [0.0]]
    assert used.grad.tolist() == [4.0]
    assert unused.grad.tolist() == [0.0]


def test_backward_constant_loss():
    """Perte sans graphe: tous les gradients sont nuls."""
    p = nn.Parameter(torch.ones(3, dtype=DTYPE))
    (grad,) = backward(scalar(0.0), [p])
    assert grad is p.grad
    assert torch.count_nonzero(p.grad) == 0


def test_backward_non_finite_loss():
    """Perte non finie refusée avant la rétropropagation."""
    p = nn.Parameter(torch.ones(1, dtype=DTYPE))
    with pytest.raises(NonFiniteLossError):
        backward((p * float("inf")).sum(), [p])


def test_backward_non_finite_gradient():
    """Gradient infini (racine en 0): NonFiniteGradientError."""
    p = nn.Parameter(torch.zeros(1, dtype=DTYPE))
    with pytest.raises(NonFiniteGradientError):
        backward(torch.sqrt(p).sum(), [p])
