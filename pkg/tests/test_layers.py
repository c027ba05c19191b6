import pytest
import torch

from auglearn import (
    AugmenterNet,
    ClassifierNet,
    ContractViolation,
    NumericError,
    cross_entropy,
    forward,
    init_params,
    parameter_count,
)
from auglearn.layers import LayerSpec, apply_layer


def test_conv_spec_param_shapes():
    spec = LayerSpec("conv2d", in_channels=3, out_channels=8, kernel=3, padding=1)
    shapes = dict(spec.param_shapes())
    assert shapes["weight"] == (8, 3, 3, 3)
    assert shapes["bias"] == (8,)
    assert spec.fan_in() == 27


def test_transpose_conv_weight_layout():
    spec = LayerSpec("transpose_conv2d", in_channels=4, out_channels=6, kernel=2, stride=2)
    shapes = dict(spec.param_shapes())
    assert shapes["weight"] == (4, 6, 2, 2)


def test_conv_matches_torch_functional():
    spec = LayerSpec("conv2d", in_channels=2, out_channels=3, kernel=3, padding=1)
    g = torch.Generator().manual_seed(0)
    w = torch.randn(3, 2, 3, 3, generator=g, dtype=torch.float64)
    b = torch.randn(3, generator=g, dtype=torch.float64)
    x = torch.randn(4, 2, 8, 8, generator=g, dtype=torch.float64)
    out = apply_layer(spec, x, weight=w, bias=b, where="t")
    ref = torch.nn.functional.conv2d(x, w, b, padding=1)
    assert torch.equal(out, ref)


def test_maxpool_downsamples():
    spec = LayerSpec("maxpool2d", kernel=2)
    x = torch.arange(16.0).reshape(1, 1, 4, 4)
    out = apply_layer(spec, x, where="t")
    assert out.shape == (1, 1, 2, 2)
    assert out[0, 0, 0, 0] == 5.0  # max of the top-left 2x2 block


def test_apply_layer_flags_nonfinite_output():
    spec = LayerSpec("linear", in_features=2, out_features=2)
    w = torch.tensor([[1e308, 1e308], [1.0, 1.0]], dtype=torch.float64)
    b = torch.zeros(2, dtype=torch.float64)
    with pytest.raises(NumericError, match="t"):
        apply_layer(spec, torch.full((1, 2), 1e40, dtype=torch.float64), weight=w, bias=b, where="t")


def test_cross_entropy_matches_torch():
    g = torch.Generator().manual_seed(1)
    logits = torch.randn(5, 7, generator=g, dtype=torch.float64)
    y = torch.tensor([0, 6, 3, 3, 1])
    ours = cross_entropy(logits, y)
    ref = torch.nn.functional.cross_entropy(logits, y)
    assert torch.allclose(ours, ref, atol=1e-12)


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(ContractViolation):
        cross_entropy(torch.zeros(2, 3), torch.tensor([0, 3]))


def test_augmenter_preserves_shape():
    net = AugmenterNet(in_channels=3)
    phi = init_params(net, 0)
    x = torch.rand(2, 3, 16, 16, dtype=torch.float64)
    assert forward(net, phi, x).shape == x.shape


def test_augmenter_rejects_odd_size():
    net = AugmenterNet(in_channels=3)
    phi = init_params(net, 0)
    with pytest.raises(ContractViolation):
        forward(net, phi, torch.rand(1, 3, 15, 15, dtype=torch.float64))


def test_augmenter_identity_flag_returns_input():
    net = AugmenterNet(in_channels=3, identity=True)
    phi = init_params(net, 0)
    x = torch.rand(2, 3, 16, 16, dtype=torch.float64)
    assert forward(net, phi, x) is x


def test_augmenter_residual_adds_input():
    plain = AugmenterNet(in_channels=3, residual=False)
    res = AugmenterNet(in_channels=3, residual=True)
    phi = init_params(plain, 0)
    x = torch.rand(2, 3, 16, 16, dtype=torch.float64)
    assert torch.allclose(forward(res, phi, x), x + forward(plain, phi, x))


def test_classifier_output_shape_and_count():
    net = ClassifierNet(in_channels=3, classes=10, image_hw=(32, 32))
    theta = init_params(net, 0)
    x = torch.rand(4, 3, 32, 32, dtype=torch.float64)
    assert forward(net, theta, x).shape == (4, 10)
    # conv stacks: (20,40,80) channels, 3x3 kernels, then linear 80*4*4 -> 10
    expected = (20 * 3 * 9 + 20) + (40 * 20 * 9 + 40) + (80 * 40 * 9 + 80) + (10 * 1280 + 10)
    assert parameter_count(net) == expected


def test_classifier_rejects_indivisible_size():
    net = ClassifierNet(in_channels=3, classes=10, image_hw=(32, 32))
    theta = init_params(net, 0)
    with pytest.raises(ContractViolation):
        forward(net, theta, torch.rand(1, 3, 20, 20, dtype=torch.float64))


def test_init_params_deterministic_and_seed_sensitive():
    net = AugmenterNet(in_channels=3)
    a, b, c = init_params(net, 5), init_params(net, 5), init_params(net, 6)
    assert a.distance(b) == 0.0
    assert a.distance(c) > 0.0


def test_init_biases_zero_weights_scaled():
    net = ClassifierNet(in_channels=3, classes=10, image_hw=(32, 32))
    theta = init_params(net, 0)
    for name, t in theta:
        if name.endswith(".bias"):
            assert t.abs().max() == 0.0
