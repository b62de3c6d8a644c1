"""Tests pour les encodages et perceptrons."""

import math

import pytest
import torch

from deformable_occupancy.config import DTYPE, EncodingConfig
from deformable_occupancy.errors import ShapeMismatchError
from deformable_occupancy.models.encoding import (
    FeatureNet,
    TimeProjector,
    build_hidden,
    embed_time,
    encode_position,
    encode_time,
    init_linear,
    zero_linear,
)


def test_encode_position_width():
    """Largeur 3(2 L_p + 1) et batch conservé."""
    mu = torch.zeros(5, 3, dtype=DTYPE)
    assert encode_position(mu, 6).shape == (5, 39)
    assert encode_position(mu, 1).shape == (5, 9)


def test_encode_position_values():
    """Disposition [x | sin(2^k x) | cos(2^k x)], sans facteur 2 pi."""
    mu = torch.tensor([0.5, -1.0, 2.0], dtype=DTYPE)
    out = encode_position(mu, 2)
    expected = [0.5, -1.0, 2.0]
    for k in range(2):
        expected += [math.sin(2**k * v) for v in (0.5, -1.0, 2.0)]
        expected += [math.cos(2**k * v) for v in (0.5, -1.0, 2.0)]
    assert torch.allclose(out, torch.tensor(expected, dtype=DTYPE))


def test_encode_position_origin():
    """À l'origine: zéros pour x et sinus, uns pour cosinus."""
    out = encode_position(torch.zeros(3, dtype=DTYPE), 1)
    assert out.tolist() == [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]


def test_encode_position_errors():
    """L_p < 1 ou largeur != 3: ShapeMismatchError."""
    with pytest.raises(ShapeMismatchError):
        encode_position(torch.zeros(3, dtype=DTYPE), 0)
    with pytest.raises(ShapeMismatchError):
        encode_position(torch.zeros(4, dtype=DTYPE), 2)


def test_encode_time():
    """Le temps est le décalage brut; largeur 2 L_t + 1."""
    out = encode_time(3, 4)
    assert out.shape == (9,)
    assert out[0] == 3.0
    assert out[1] == pytest.approx(math.sin(3.0))
    assert out[8] == pytest.approx(math.cos(8 * 3.0))
    with pytest.raises(ShapeMismatchError):
        encode_time(0, 0)


def test_time_projector_shapes(generator):
    """Projection temporelle vers C_t."""
    config = EncodingConfig(L_t=3, C_t=5)
    projector = TimeProjector(config, generator)
    e_t = embed_time(encode_time(1.0, 3), projector)
    assert e_t.shape == (5,)
    with pytest.raises(ShapeMismatchError):
        embed_time(encode_time(1.0, 4), projector)


def test_time_projector_formula(generator):
    """e_t = W2 relu(W1 gamma + b1) + b2."""
    projector = TimeProjector(EncodingConfig(L_t=2, C_t=3), generator)
    with torch.no_grad():
        projector.layer1.bias.fill_(0.1)
        projector.layer2.bias.fill_(-0.2)
    gamma = encode_time(2.0, 2)
    hidden = torch.relu(projector.layer1.weight @ gamma + projector.layer1.bias)
    expected = projector.layer2.weight @ hidden + projector.layer2.bias
    assert torch.allclose(embed_time(gamma, projector), expected)


def test_init_linear_bounds(generator):
    """Poids dans +-1/sqrt(fan_in), biais nuls."""
    layer = init_linear(torch.nn.Linear(16, 4, dtype=DTYPE), generator)
    assert layer.weight.abs().max() <= 0.25
    assert torch.count_nonzero(layer.bias) == 0
    zero_linear(layer)
    assert torch.count_nonzero(layer.weight) == 0


def test_init_linear_reproducible():
    """Même graine, mêmes poids."""
    a = init_linear(torch.nn.Linear(8, 4, dtype=DTYPE), torch.Generator().manual_seed(5))
    b = init_linear(torch.nn.Linear(8, 4, dtype=DTYPE), torch.Generator().manual_seed(5))
    assert torch.equal(a.weight, b.weight)


def test_featurenet_depth_and_output(generator):
    """Profondeur respectée et sortie sans activation finale."""
    net = FeatureNet(7, hidden_dim=6, depth=3, generator=generator)
    assert len(net.layers) == 3
    with torch.no_grad():
        net.layers[-1].bias.fill_(-100.0)
    out = net(torch.randn(4, 7, dtype=DTYPE, generator=generator))
    assert out.shape == (4, 6)
    assert bool((out < 0).all())


def test_build_hidden_broadcast(generator):
    """e_t est diffusé sur les N gaussiennes."""
    config = EncodingConfig(L_p=2, L_t=2, C_t=4)
    feat = torch.randn(3, 5, dtype=DTYPE, generator=generator)
    gamma_p = encode_position(torch.zeros(3, 3, dtype=DTYPE), config.L_p)
    e_t = torch.randn(4, dtype=DTYPE, generator=generator)
    net = FeatureNet(5 + config.position_width + 4, 8, 2, generator)
    h = build_hidden(feat, gamma_p, e_t, net)
    assert h.shape == (3, 8)
    # Gaussiennes identiques -> représentations identiques
    h_same = build_hidden(feat[:1].expand(3, 5), gamma_p, e_t, net)
    assert torch.allclose(h_same[0], h_same[2])


def test_build_hidden_width_mismatch(generator):
    """Largeur concaténée incorrecte: ShapeMismatchError."""
    net = FeatureNet(10, 4, 2, generator)
    with pytest.raises(ShapeMismatchError):
        build_hidden(torch.zeros(2, 3, dtype=DTYPE), torch.zeros(2, 9, dtype=DTYPE),
                     torch.zeros(4, dtype=DTYPE), net)


def test_encode_position_gradient(fd_check):
    """Gradient de l'encodage positionnel vérifié par différences finies."""
    mu = torch.tensor([[0.3, -0.7, 1.1]], dtype=DTYPE, requires_grad=True)
    weights = torch.linspace(-1.0, 1.0, 15, dtype=DTYPE)
    fd_check(lambda: (encode_position(mu, 2) * weights).sum(), mu, samples=3)
