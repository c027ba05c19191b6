"""Minimal layer set: convolutions, pooling, linear, relu, cross-entropy.

Networks are immutable specs (dataclasses describing architecture); their
weights live in a separate ParamSet, so forward passes are pure functions
of (spec, params, input). That split keeps second-order differentiation
and functional inner-loop unrolling straightforward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F

from .errors import ContractViolation
from .params import DEFAULT_DTYPE, ParamSet, Tensor, check_finite

LAYER_KINDS = ("conv2d", "transpose_conv2d", "linear", "relu", "maxpool2d", "softmax_ce")


@dataclass(frozen=True)
class LayerSpec:
    """One layer: a kind plus the hyperparameters that kind needs."""

    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    in_features: int = 0
    out_features: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ContractViolation(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv2d", "transpose_conv2d"):
            if self.in_channels <= 0 or self.out_channels <= 0 or self.kernel <= 0:
                raise ContractViolation(f"{self.kind}: channels and kernel must be positive")
            if self.stride <= 0 or self.padding < 0:
                raise ContractViolation(f"{self.kind}: bad stride/padding")
        elif self.kind == "linear":
            if self.in_features <= 0 or self.out_features <= 0:
                raise ContractViolation("linear: feature sizes must be positive")
        elif self.kind == "maxpool2d":
            if self.kernel <= 0:
                raise ContractViolation("maxpool2d: kernel must be positive")

    def param_shapes(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        if self.kind == "conv2d":
            return (
                ("weight", (self.out_channels, self.in_channels, self.kernel, self.kernel)),
                ("bias", (self.out_channels,)),
            )
        if self.kind == "transpose_conv2d":
            # torch layout: (in_channels, out_channels, kH, kW)
            return (
                ("weight", (self.in_channels, self.out_channels, self.kernel, self.kernel)),
                ("bias", (self.out_channels,)),
            )
        if self.kind == "linear":
            return (
                ("weight", (self.out_features, self.in_features)),
                ("bias", (self.out_features,)),
            )
        return ()

    def fan_in(self) -> int:
        if self.kind in ("conv2d", "transpose_conv2d"):
            return self.in_channels * self.kernel * self.kernel
        if self.kind == "linear":
            return self.in_features
        return 0

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Output shape for a (C, H, W) or (F,) input shape; validates input."""
        if self.kind == "conv2d":
            c, h, w = in_shape
            if c != self.in_channels:
                raise ContractViolation(f"conv2d: expected {self.in_channels} channels, got {c}")
            oh = (h + 2 * self.padding - self.kernel) // self.stride + 1
            ow = (w + 2 * self.padding - self.kernel) // self.stride + 1
            if oh <= 0 or ow <= 0:
                raise ContractViolation("conv2d: kernel larger than padded input")
            return (self.out_channels, oh, ow)
        if self.kind == "transpose_conv2d":
            c, h, w = in_shape
            if c != self.in_channels:
                raise ContractViolation(
                    f"transpose_conv2d: expected {self.in_channels} channels, got {c}"
                )
            oh = (h - 1) * self.stride + self.kernel - 2 * self.padding
            ow = (w - 1) * self.stride + self.kernel - 2 * self.padding
            return (self.out_channels, oh, ow)
        if self.kind == "maxpool2d":
            c, h, w = in_shape
            if h % self.kernel or w % self.kernel:
                raise ContractViolation(
                    f"maxpool2d: input {h}x{w} not divisible by window {self.kernel}"
                )
            return (c, h // self.kernel, w // self.kernel)
        if self.kind == "linear":
            (f,) = in_shape
            if f != self.in_features:
                raise ContractViolation(f"linear: expected {self.in_features} features, got {f}")
            return (self.out_features,)
        if self.kind == "relu":
            return tuple(in_shape)
        return ()  # softmax_ce reduces to a scalar


def _expect_4d(x: Tensor, where: str) -> None:
    if x.dim() != 4:
        raise ContractViolation(f"{where}: expected a (batch, C, H, W) tensor, got {tuple(x.shape)}")


def apply_layer(
    spec: LayerSpec,
    x: Tensor,
    weight: Optional[Tensor] = None,
    bias: Optional[Tensor] = None,
    labels: Optional[Tensor] = None,
    where: str = "",
) -> Tensor:
    """Run one layer forward; checks shapes and finiteness."""
    name = where or spec.kind
    if spec.kind == "conv2d":
        _expect_4d(x, name)
        spec.out_shape(tuple(x.shape[1:]))
        out = F.conv2d(x, weight, bias, stride=spec.stride, padding=spec.padding)
    elif spec.kind == "transpose_conv2d":
        _expect_4d(x, name)
        spec.out_shape(tuple(x.shape[1:]))
        out = F.conv_transpose2d(x, weight, bias, stride=spec.stride, padding=spec.padding)
    elif spec.kind == "linear":
        out = F.linear(x, weight, bias)
    elif spec.kind == "relu":
        out = F.relu(x)
    elif spec.kind == "maxpool2d":
        _expect_4d(x, name)
        spec.out_shape(tuple(x.shape[1:]))
        out = F.max_pool2d(x, spec.kernel)
    elif spec.kind == "softmax_ce":
        return cross_entropy(x, labels)
    else:  # pragma: no cover - guarded in __post_init__
        raise ContractViolation(f"unknown layer kind {spec.kind!r}")
    return check_finite(out, name)


def cross_entropy(logits: Tensor, labels: Tensor) -> Tensor:
    """Mean negative log softmax probability of the true class.

    Stable via log-sum-exp; labels must be integer indices in [0, K).
    """
    if logits.dim() != 2:
        raise ContractViolation(f"cross_entropy: logits must be (batch, K), got {tuple(logits.shape)}")
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.dim() != 1 or labels.shape[0] != logits.shape[0]:
        raise ContractViolation("cross_entropy: labels must be one index per row")
    k = logits.shape[1]
    if bool((labels < 0).any()) or bool((labels >= k).any()):
        raise ContractViolation(f"cross_entropy: label out of range [0, {k})")
    logp = logits - torch.logsumexp(logits, dim=1, keepdim=True)
    loss = -logp[torch.arange(logits.shape[0]), labels].mean()
    return check_finite(loss, "cross_entropy")


class _LayeredNet:
    """Shared machinery for nets defined as an ordered (name, LayerSpec) list."""

    def layer_list(self) -> tuple[tuple[str, LayerSpec], ...]:
        raise NotImplementedError

    def param_shapes(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        out = []
        for lname, spec in self.layer_list():
            for pname, shape in spec.param_shapes():
                out.append((f"{lname}.{pname}", shape))
        return tuple(out)

    def _run(self, params: ParamSet, x: Tensor, tag: str) -> Tensor:
        d = params.as_dict()
        h = x
        for lname, spec in self.layer_list():
            w = d.get(f"{lname}.weight")
            b = d.get(f"{lname}.bias")
            h = apply_layer(spec, h, w, b, where=f"{tag}.{lname}")
        return h


@dataclass(frozen=True)
class AugmenterNet(_LayeredNet):
    """Image-to-image augmentation network.

    Encoder-decoder layout: three convolutional blocks (two convolutions
    each, relu after every convolution, a max-pool attached to the first
    block), then a stride-2 transpose convolution that undoes the pooling,
    then a final convolution back to the input channel count. Output shape
    equals input shape for H, W divisible by the pool factor.

    ``residual`` adds the input back onto the output (off by default: the
    plain image-to-image map is the reference behavior). ``identity`` makes
    the forward pass return its input untouched, for baseline comparisons.
    """

    in_channels: int = 3
    channels: tuple[int, int, int] = (9, 9, 9)
    kernel: int = 3
    tconv_kernel: int = 2
    pool: int = 2
    residual: bool = False
    identity: bool = False

    def layer_list(self):
        c1, c2, c3 = self.channels
        pad = self.kernel // 2
        conv = lambda ci, co: LayerSpec(
            "conv2d", in_channels=ci, out_channels=co, kernel=self.kernel, padding=pad
        )
        return (
            ("block1.conv1", conv(self.in_channels, c1)),
            ("block1.relu1", LayerSpec("relu")),
            ("block1.conv2", conv(c1, c1)),
            ("block1.relu2", LayerSpec("relu")),
            ("block1.pool", LayerSpec("maxpool2d", kernel=self.pool)),
            ("block2.conv1", conv(c1, c2)),
            ("block2.relu1", LayerSpec("relu")),
            ("block2.conv2", conv(c2, c2)),
            ("block2.relu2", LayerSpec("relu")),
            ("block3.conv1", conv(c2, c3)),
            ("block3.relu1", LayerSpec("relu")),
            ("block3.conv2", conv(c3, c3)),
            ("block3.relu2", LayerSpec("relu")),
            (
                "up",
                LayerSpec(
                    "transpose_conv2d",
                    in_channels=c3,
                    out_channels=c3,
                    kernel=self.tconv_kernel,
                    stride=self.pool,
                ),
            ),
            ("out", conv(c3, self.in_channels)),
        )

    def forward(self, params: ParamSet, x: Tensor) -> Tensor:
        if self.identity:
            return x
        _expect_4d(x, "augmenter")
        if x.shape[2] % self.pool or x.shape[3] % self.pool:
            raise ContractViolation(
                f"augmenter: H and W must be divisible by {self.pool}, got {tuple(x.shape[2:])}"
            )
        out = self._run(params, x, "augmenter")
        return x + out if self.residual else out


@dataclass(frozen=True)
class ClassifierNet(_LayeredNet):
    """Small from-scratch convolutional classifier.

    Three conv/relu/pool blocks followed by a linear head over the flattened
    feature map. Input H and W must be divisible by pool**3.
    """

    in_channels: int = 3
    channels: tuple[int, int, int] = (20, 40, 80)
    classes: int = 10
    kernel: int = 3
    pool: int = 2
    image_hw: tuple[int, int] = (32, 32)

    def __post_init__(self):
        h, w = self.image_hw
        d = self.pool**3
        if h % d or w % d:
            raise ContractViolation(f"classifier: image {h}x{w} not divisible by {d}")

    def head_features(self) -> int:
        h, w = self.image_hw
        d = self.pool**3
        return self.channels[2] * (h // d) * (w // d)

    def layer_list(self):
        c1, c2, c3 = self.channels
        pad = self.kernel // 2
        conv = lambda ci, co: LayerSpec(
            "conv2d", in_channels=ci, out_channels=co, kernel=self.kernel, padding=pad
        )
        return (
            ("conv1", conv(self.in_channels, c1)),
            ("relu1", LayerSpec("relu")),
            ("pool1", LayerSpec("maxpool2d", kernel=self.pool)),
            ("conv2", conv(c1, c2)),
            ("relu2", LayerSpec("relu")),
            ("pool2", LayerSpec("maxpool2d", kernel=self.pool)),
            ("conv3", conv(c2, c3)),
            ("relu3", LayerSpec("relu")),
            ("pool3", LayerSpec("maxpool2d", kernel=self.pool)),
            ("head", LayerSpec("linear", in_features=self.head_features(), out_features=self.classes)),
        )

    def forward(self, params: ParamSet, x: Tensor) -> Tensor:
        _expect_4d(x, "classifier")
        if tuple(x.shape[2:]) != self.image_hw:
            raise ContractViolation(
                f"classifier: expected {self.image_hw} images, got {tuple(x.shape[2:])}"
            )
        d = params.as_dict()
        h = x
        for lname, spec in self.layer_list():
            if spec.kind == "linear":
                h = h.reshape(h.shape[0], -1)
            h = apply_layer(spec, h, d.get(f"{lname}.weight"), d.get(f"{lname}.bias"), where=f"classifier.{lname}")
        return h


def forward(net, params: ParamSet, x: Tensor) -> Tensor:
    """Run a net forward; differentiable end to end."""
    return net.forward(params, x)


def parameter_count(net) -> int:
    """Exact number of trainable scalars in ``net``."""
    return sum(math.prod(shape) for _, shape in net.param_shapes())


def init_params(net, seed: int, dtype: torch.dtype = DEFAULT_DTYPE) -> ParamSet:
    """Deterministic fan-in-scaled normal weights, zero biases.

    Weight std is sqrt(2 / fan_in). Draws happen in float64 in layer order,
    then cast, so float32 and float64 runs start from the same values.
    """
    gen = torch.Generator().manual_seed(int(seed))
    items = []
    for lname, spec in net.layer_list():
        for pname, shape in spec.param_shapes():
            full = f"{lname}.{pname}"
            if pname == "bias":
                t = torch.zeros(shape, dtype=torch.float64)
            else:
                std = (2.0 / spec.fan_in()) ** 0.5
                t = torch.randn(shape, generator=gen, dtype=torch.float64) * std
            items.append((full, t.to(dtype)))
    return ParamSet(tuple(items))
