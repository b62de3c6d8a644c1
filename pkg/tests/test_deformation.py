"""Tests pour la déformation découplée."""

import numpy as np
import pytest
import torch

from deformable_occupancy.config import (
    DTYPE,
    DeformationConfig,
    DeformationLossWeights,
    EncodingConfig,
)
from deformable_occupancy.errors import DegenerateQuaternionError, ShapeMismatchError
from deformable_occupancy.models.deformation import (
    DeformationNetwork,
    GaussianUpdate,
    apply_update,
    compose_update,
    deform_frames,
    deform_set,
    deformation_loss,
    predict_nonrigid_delta,
    predict_rigid_offset,
    predict_rigidity_mask,
)
from deformable_occupancy.models.encoding import encode_position
from deformable_occupancy.models.gaussian import (
    GaussianPrimitive,
    GaussianSet,
    normalize_quaternion,
)

ENCODING = EncodingConfig(L_p=2, L_t=2, C_t=4)
FEATURE_DIM = 4


def make_set(n=6, seed=0):
    g = torch.Generator().manual_seed(seed)
    return GaussianSet(
        mu=torch.rand(n, 3, dtype=DTYPE, generator=g) * 2 - 1,
        rot=normalize_quaternion(torch.randn(n, 4, dtype=DTYPE, generator=g)),
        scale=torch.full((n, 3), 0.3, dtype=DTYPE),
        opacity=torch.full((n,), 0.5, dtype=DTYPE),
        feat=torch.randn(n, FEATURE_DIM, dtype=DTYPE, generator=g),
        mask=torch.full((n,), 0.5, dtype=DTYPE),
    )


def make_net(switches=None, seed=0, randomize_heads=True):
    g = torch.Generator().manual_seed(seed)
    net = DeformationNetwork(FEATURE_DIM, ENCODING, hidden_dim=16, depth=2,
                             switches=switches, generator=g)
    if randomize_heads:
        with torch.no_grad():
            for name in ("head_rigid_mu", "head_def_mu", "head_def_rot", "head_def_scale",
                         "head_def_opacity", "head_mask"):
                layer = getattr(net, name)
                layer.weight.uniform_(-0.3, 0.3, generator=g)
                layer.bias.uniform_(-0.1, 0.1, generator=g)
    return net


def test_fresh_network_is_identity():
    """Têtes nulles: toutes les frames égalent la frame canonique."""
    gs = make_set()
    net = make_net(randomize_heads=False)
    frames = deform_set(gs, [-2, 0, 2], net)
    for frame in frames.values():
        assert torch.allclose(frame.mu, gs.mu)
        assert torch.allclose(frame.rot, gs.rot)
        assert torch.allclose(frame.scale, gs.scale)
        assert torch.allclose(frame.opacity, gs.opacity)


def test_head_shapes():
    """Têtes aux formes attendues, masque dans [0, 1]."""
    gs = make_set()
    net = make_net()
    gamma_p = encode_position(gs.mu, ENCODING.L_p)
    h = net.hidden(gs.feat, gamma_p, 3)
    assert h.shape == (6, 16)
    rig = predict_rigid_offset(h, net)
    deform = predict_nonrigid_delta(h, net)
    assert rig.d_mu.shape == (6, 3)
    assert torch.count_nonzero(rig.d_rot) == 0
    assert torch.count_nonzero(rig.d_scale) == 0
    assert torch.count_nonzero(rig.d_opacity) == 0
    assert deform.d_rot.shape == (6, 4)
    assert deform.d_opacity.shape == (6,)
    m = predict_rigidity_mask(gs.feat, gamma_p, net)
    assert m.shape == (6,)
    assert bool(((m >= 0) & (m <= 1)).all())


def test_head_width_mismatch():
    """Représentation cachée de mauvaise largeur: ShapeMismatchError."""
    net = make_net()
    with pytest.raises(ShapeMismatchError):
        predict_rigid_offset(torch.zeros(2, 5, dtype=DTYPE), net)
    with pytest.raises(ShapeMismatchError):
        predict_rigidity_mask(torch.zeros(2, 3, dtype=DTYPE), torch.zeros(2, 15, dtype=DTYPE),
                              net)


def test_mask_is_time_independent():
    """Le masque ne dépend que de la caractéristique et de la position."""
    gs = make_set()
    net = make_net()
    out = deform_frames(gs, [-4, 4], net)
    gamma_p = encode_position(gs.mu, ENCODING.L_p)
    assert torch.allclose(out.masks, predict_rigidity_mask(gs.feat, gamma_p, net))
    assert torch.equal(out.frames[-4].mask, out.frames[4].mask)


@pytest.mark.parametrize("switch, component", [
    ("rotation", "d_rot"),
    ("scale", "d_scale"),
    ("opacity", "d_opacity"),
])
def test_disabled_head_returns_zero(switch, component):
    """Une tête désactivée renvoie exactement zéro."""
    switches = DeformationConfig(**{switch: False})
    net = make_net(switches)
    gs = make_set()
    h = net.hidden(gs.feat, encode_position(gs.mu, ENCODING.L_p), 2)
    deform = predict_nonrigid_delta(h, net)
    assert torch.count_nonzero(getattr(deform, component)) == 0
    assert torch.count_nonzero(deform.d_mu) > 0


def test_disabled_mask_is_one():
    """Masque désactivé: m = 1 partout."""
    net = make_net(DeformationConfig(mask=False))
    gs = make_set()
    m = predict_rigidity_mask(gs.feat, encode_position(gs.mu, ENCODING.L_p), net)
    assert torch.equal(m, torch.ones(6, dtype=DTYPE))


def test_compose_update_extremes():
    """m = 0 donne la branche rigide, m = 1 la branche non rigide."""
    n = 3
    rig = GaussianUpdate(torch.ones(n, 3, dtype=DTYPE), torch.zeros(n, 4, dtype=DTYPE),
                         torch.zeros(n, 3, dtype=DTYPE), torch.zeros(n, dtype=DTYPE))
    deform = GaussianUpdate(torch.full((n, 3), 2.0, dtype=DTYPE),
                            torch.full((n, 4), 0.1, dtype=DTYPE),
                            torch.full((n, 3), 0.2, dtype=DTYPE),
                            torch.full((n,), 0.3, dtype=DTYPE))
    m = torch.tensor([0.0, 1.0, 0.25], dtype=DTYPE)
    upd = compose_update(m, rig, deform)
    assert torch.equal(upd.d_mu[0], rig.d_mu[0])
    assert torch.equal(upd.d_rot[1], deform.d_rot[1])
    assert torch.allclose(upd.d_mu[2], torch.full((3,), 1.25, dtype=DTYPE))
    assert upd.d_opacity[2] == pytest.approx(0.075)


def test_rigid_gaussians_keep_shape():
    """Masque sous le seuil: seule la position change, rotation/échelle/opacité intactes."""
    net = make_net()
    with torch.no_grad():
        net.head_mask.weight.zero_()
        net.head_mask.bias.fill_(-10.0)
    gs = make_set()
    out = deform_frames(gs, [3], net)
    frame = out.frames[3]
    assert bool((out.masks < 0.1).all())
    assert torch.allclose(frame.rot, gs.rot, atol=1e-12)
    assert torch.allclose(frame.scale, gs.scale, atol=1e-12)
    assert torch.allclose(frame.opacity, gs.opacity, atol=1e-12)
    assert not torch.allclose(frame.mu, gs.mu)
    assert torch.allclose(out.updates[3].d_mu, frame.mu - gs.mu)


def test_rotation_stays_unit():
    """Les quaternions déformés restent unitaires à w >= 0."""
    out = deform_frames(make_set(), [-8, 8], make_net())
    for frame in out.frames.values():
        assert torch.allclose(frame.rot.norm(dim=-1), torch.ones(6, dtype=DTYPE))
        assert bool((frame.rot[:, 0] >= 0).all())


def test_deformation_disabled():
    """deformation.enabled = False: toutes les frames sont l'ensemble canonique."""
    gs = make_set()
    net = make_net(DeformationConfig(enabled=False))
    out = deform_frames(gs, [-2, 0, 2], net)
    for offset in (-2, 0, 2):
        assert out.frames[offset] is gs
        assert not out.updates[offset].d_mu.any()


def test_deform_frames_deduplicates_offsets():
    """Décalages répétés calculés une seule fois."""
    out = deform_frames(make_set(), [2, 2, 0], make_net())
    assert list(out.frames) == [2, 0]


def test_apply_update_formulas():
    """Formules de mise à jour sur une primitive isolée."""
    g = GaussianPrimitive(
        mu=np.zeros(3), rot=np.array([1.0, 0.0, 0.0, 0.0]), scale=np.ones(3),
        opacity=0.5, feat=np.zeros(4), mask=0.2,
    )
    upd = GaussianUpdate(
        torch.tensor([[1.0, 2.0, 3.0]], dtype=DTYPE),
        torch.tensor([[0.0, 1.0, 0.0, 0.0]], dtype=DTYPE),
        torch.tensor([[np.log(2.0), 0.0, 0.0]], dtype=DTYPE),
        torch.tensor([np.log(3.0)], dtype=DTYPE),
    )
    out = apply_update(g, upd)
    np.testing.assert_allclose(out.mu, [1.0, 2.0, 3.0])
    np.testing.assert_allclose(out.rot, [np.sqrt(0.5), np.sqrt(0.5), 0.0, 0.0])
    np.testing.assert_allclose(out.scale, [2.0, 1.0, 1.0])
    assert out.opacity == pytest.approx(0.75)
    assert out.mask == pytest.approx(0.2)


def test_apply_update_degenerate_rotation():
    """rot + d_rot nul: DegenerateQuaternionError."""
    gs = make_set(n=1)
    upd = GaussianUpdate.zeros(1)
    upd.d_rot = -gs.rot.clone()
    with pytest.raises(DegenerateQuaternionError):
        apply_update(gs, upd)


def test_update_is_finite():
    """is_finite détecte une valeur non finie."""
    upd = GaussianUpdate.zeros(2)
    assert upd.is_finite()
    upd.d_mu[0, 0] = float("nan")
    assert not upd.is_finite()


def test_deformation_loss_value():
    """L = lambda_reg * moyenne des normes pondérées + lambda_mask * moyenne m(1 - m)."""
    upd = GaussianUpdate(
        torch.tensor([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]], dtype=DTYPE),
        torch.tensor([[0.0, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 0.0]], dtype=DTYPE),
        torch.zeros(2, 3, dtype=DTYPE),
        torch.tensor([0.0, 1.0], dtype=DTYPE),
    )
    masks = torch.tensor([0.5, 1.0], dtype=DTYPE)
    weights = DeformationLossWeights(lambda_mu=1.0, lambda_rot=0.5, lambda_scale=1.0,
                                     lambda_opacity=2.0, lambda_reg=0.1, lambda_mask=0.01)
    loss = deformation_loss([upd, GaussianUpdate.zeros(2)], masks, weights)
    # reg: gaussienne 0 -> 1, gaussienne 1 -> 0.5 * 4 + 2 * 1 = 4, moyenne sur 4 entrées
    expected = 0.1 * (5.0 / 4) + 0.01 * (0.25 / 2)
    assert float(loss) == pytest.approx(expected)


def test_deformation_loss_zero_for_identity():
    """Mises à jour nulles et masques binaires: perte nulle."""
    masks = torch.tensor([0.0, 1.0], dtype=DTYPE)
    loss = deformation_loss({0: GaussianUpdate.zeros(2)}, masks)
    assert float(loss) == 0.0


def test_deformation_gradient(fd_check):
    """Gradient du réseau de déformation vérifié par différences finies."""
    gs = make_set(n=4)
    net = make_net(seed=3)
    weight = net.featurenet.layers[0].weight
    target = torch.linspace(-1, 1, 12, dtype=DTYPE).reshape(4, 3)

    def loss():
        frame = deform_frames(gs, [2], net).frames[2]
        return (frame.mu * target).sum() + frame.scale.sum() + frame.opacity.sum()

    fd_check(loss, weight, samples=5)


def test_mask_gradient(fd_check):
    """Gradient du masque de rigidité vérifié par différences finies."""
    gs = make_set(n=4)
    net = make_net(seed=4, switches=DeformationConfig(rigid_snap_threshold=0.0))
    bias = net.head_mask.bias

    def loss():
        out = deform_frames(gs, [-3], net)
        return out.frames[-3].mu.sum() + out.masks.sum()

    fd_check(loss, bias, samples=1)
