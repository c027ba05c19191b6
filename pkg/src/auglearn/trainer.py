"""Episodic bilevel training loop and its single-step primitives.

Every step splits the source domains into a pseudo-source set and one
held-out pseudo-target domain. The classifier trains on augmented
pseudo-source batches (inner loop); the augmenter trains on the raw
pseudo-target batch through the implicit hypergradient (outer loop).
``erm`` skips splitting and augmentation entirely; ``no_ml`` replaces the
hypergradient with a direct first-order gradient; ``auglearn_f`` applies
the augmenter to the DCT spectrum instead of pixels.

Step primitives (erm_step, inner_step, outer_step) are pure: they take a
TrainState and return a new one, so tests can drive them with
hand-constructed batch schedules.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import torch

from .autodiff import grad
from .data import DomainDataset
from .errors import ContractViolation, NumericError, SplitError, TrainingError
from .freq import dct2, idct2
from .hypergrad import HypergradConfig, hypergradient
from .layers import AugmenterNet, ClassifierNet, cross_entropy, forward, init_params
from .params import ParamSet, Tensor

MODES = ("erm", "auglearn", "auglearn_f", "no_ml")

# rng stream tags for seed derivation
TAG_SPLIT = 21
TAG_BATCH = 22
TAG_THETA_INIT = 23
TAG_PHI_INIT = 24

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


def derive_seed(*parts: int) -> int:
    """Fold integers into one well-mixed non-negative seed."""
    ss = np.random.SeedSequence([int(p) for p in parts])
    return int(ss.generate_state(1, np.uint64)[0] >> 1)


@dataclass(frozen=True)
class TrainConfig:
    """Everything a run needs besides the data.

    ``batch_size`` is the per-domain batch: each source domain contributes
    that many samples per step. Learning rates decay once, by the given
    factor, from the given (0-based) epoch onward; the classifier and the
    augmenter have separate schedules.
    """

    mode: str = "auglearn"
    inner_lr: float = 1e-3
    outer_lr: float = 1e-3
    inner_iters: int = 1
    batch_size: int = 16
    epochs: int = 1
    weight_decay: float = 5e-4
    inner_decay: tuple[float, int] = (0.1, 30)
    outer_decay: tuple[float, int] = (0.1, 20)
    seed: int = 0
    hypergrad: HypergradConfig = field(default_factory=HypergradConfig)
    clf_channels: tuple[int, int, int] = (20, 40, 80)
    aug_channels: tuple[int, int, int] = (9, 9, 9)
    aug_residual: bool = False
    aug_identity: bool = False
    augmented_outer: bool = False
    dtype: str = "float64"
    verbose: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractViolation(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (self.inner_lr > 0):
            raise ContractViolation(f"inner_lr must be positive, got {self.inner_lr}")
        if self.outer_lr < 0:
            raise ContractViolation(f"outer_lr must be >= 0, got {self.outer_lr}")
        if self.inner_iters < 1:
            raise ContractViolation(f"inner_iters must be >= 1, got {self.inner_iters}")
        if self.batch_size < 1:
            raise ContractViolation(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ContractViolation(f"epochs must be >= 0, got {self.epochs}")
        if self.weight_decay < 0:
            raise ContractViolation(f"weight_decay must be >= 0, got {self.weight_decay}")
        for nm, (factor, epoch) in (("inner_decay", self.inner_decay), ("outer_decay", self.outer_decay)):
            if not (0 < factor <= 1):
                raise ContractViolation(f"{nm} factor must be in (0, 1], got {factor}")
            if epoch < 0:
                raise ContractViolation(f"{nm} epoch must be >= 0, got {epoch}")
        if self.dtype not in _DTYPES:
            raise ContractViolation(f"dtype must be one of {tuple(_DTYPES)}, got {self.dtype!r}")

    def torch_dtype(self) -> torch.dtype:
        return _DTYPES[self.dtype]

    def inner_lr_at(self, epoch: int) -> float:
        f, e = self.inner_decay
        return self.inner_lr * (f if epoch >= e else 1.0)

    def outer_lr_at(self, epoch: int) -> float:
        f, e = self.outer_decay
        return self.outer_lr * (f if epoch >= e else 1.0)


Batch = tuple[str, Tensor, Tensor]  # domain id, images, labels


@dataclass(frozen=True)
class EpisodeSplit:
    """Per-step partition of domain batches simulating domain shift."""

    psrc: tuple[Batch, ...]
    ptrg: tuple[Batch, ...]

    def __post_init__(self):
        if not self.psrc or not self.ptrg:
            raise SplitError("pseudo-source and pseudo-target must both be non-empty")
        src_ids = {b[0] for b in self.psrc}
        trg_ids = {b[0] for b in self.ptrg}
        if src_ids & trg_ids:
            raise SplitError(f"domains {sorted(src_ids & trg_ids)} appear on both sides of the split")


@dataclass(frozen=True)
class MetricRow:
    epoch: int
    step: int
    mode: str
    l_inner: float
    l_outer: Optional[float]
    psrc_acc: Optional[float]
    ptrg_acc: Optional[float]


@dataclass(frozen=True)
class TrainState:
    """Parameters plus progress counters; history is append-only."""

    classifier: ClassifierNet
    augmenter: AugmenterNet
    theta: ParamSet
    phi: ParamSet
    step: int = 0
    epoch: int = 0
    history: tuple[MetricRow, ...] = ()
    last_inner_loss: float = math.nan
    last_diag: Optional[dict] = None


def init_state(cfg: TrainConfig, classes: int, in_channels: int, image_hw: tuple[int, int]) -> TrainState:
    clf = ClassifierNet(
        in_channels=in_channels, channels=cfg.clf_channels, classes=classes, image_hw=image_hw
    )
    aug = AugmenterNet(
        in_channels=in_channels,
        channels=cfg.aug_channels,
        residual=cfg.aug_residual,
        identity=cfg.aug_identity,
    )
    dt = cfg.torch_dtype()
    theta = init_params(clf, derive_seed(cfg.seed, TAG_THETA_INIT), dtype=dt)
    phi = init_params(aug, derive_seed(cfg.seed, TAG_PHI_INIT), dtype=dt)
    return TrainState(clf, aug, theta, phi)


def make_split(batches: list[Batch], seed: int, step: int) -> EpisodeSplit:
    """Hold out one domain as pseudo-target, uniformly by (seed, step)."""
    if len(batches) < 2:
        raise SplitError(f"need >= 2 source domains to split, got {len(batches)}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, TAG_SPLIT, step]))
    pick = int(rng.integers(len(batches)))
    ptrg = (batches[pick],)
    psrc = tuple(b for i, b in enumerate(batches) if i != pick)
    return EpisodeSplit(psrc, ptrg)


def _pool(batches: tuple[Batch, ...]) -> tuple[Tensor, Tensor]:
    xs = torch.cat([b[1] for b in batches])
    ys = torch.cat([b[2] for b in batches])
    return xs, ys


def augment(state: TrainState, phi: ParamSet, x: Tensor, mode: str) -> Tensor:
    """The augmentation path for a mode; differentiable in phi."""
    if mode == "erm":
        return x
    if mode == "auglearn_f":
        return idct2(forward(state.augmenter, phi, dct2(x)))
    return forward(state.augmenter, phi, x)


def _inner_loss(state: TrainState, theta: ParamSet, phi: ParamSet, x: Tensor, y: Tensor, cfg: TrainConfig) -> Tensor:
    aug_x = augment(state, phi, x, cfg.mode)
    loss = cross_entropy(forward(state.classifier, theta, aug_x), y)
    if cfg.weight_decay > 0:
        loss = loss + 0.5 * cfg.weight_decay * sum((t * t).sum() for t in theta.tensors)
    return loss


def _sgd(theta: ParamSet, g: ParamSet, lr: float) -> ParamSet:
    return theta.add(g, scale=-lr)


def erm_step(state: TrainState, batch: tuple[Tensor, Tensor], cfg: TrainConfig) -> TrainState:
    """One plain pooled-batch SGD update of theta: the erm baseline."""
    x, y = batch
    ce_val = [math.nan]

    def loss_fn(theta: ParamSet) -> Tensor:
        ce = cross_entropy(forward(state.classifier, theta, x), y)
        ce_val[0] = float(ce.detach())
        if cfg.weight_decay > 0:
            return ce + 0.5 * cfg.weight_decay * sum((t * t).sum() for t in theta.tensors)
        return ce

    try:
        g = grad(loss_fn, state.theta)
        theta = _sgd(state.theta, g, cfg.inner_lr_at(state.epoch))
        theta.check_finite("erm_step.theta")
    except NumericError as e:
        raise TrainingError(str(e), step=state.step, where="erm_step") from e
    acc = batch_accuracy(state.classifier, theta, x, y)
    row = MetricRow(state.epoch, state.step, cfg.mode, ce_val[0], None, acc, None)
    return replace(
        state,
        theta=theta,
        step=state.step + 1,
        history=state.history + (row,),
        last_inner_loss=ce_val[0],
    )


def inner_step(state: TrainState, split: EpisodeSplit, cfg: TrainConfig) -> TrainState:
    """cfg.inner_iters SGD updates of theta on the augmented pseudo-source.

    phi is never touched; the augmented forward treats it as a constant.
    """
    x, y = _pool(split.psrc)
    aug_x = augment(state, state.phi, x, cfg.mode).detach()
    theta = state.theta
    lr = cfg.inner_lr_at(state.epoch)
    ce_val = [math.nan]
    for it in range(cfg.inner_iters):

        def loss_fn(th: ParamSet) -> Tensor:
            ce = cross_entropy(forward(state.classifier, th, aug_x), y)
            ce_val[0] = float(ce.detach())
            if cfg.weight_decay > 0:
                return ce + 0.5 * cfg.weight_decay * sum((t * t).sum() for t in th.tensors)
            return ce

        try:
            g = grad(loss_fn, theta)
            theta = _sgd(theta, g, lr)
            theta.check_finite(f"inner_step.theta[{it}]")
        except NumericError as e:
            raise TrainingError(str(e), step=state.step, where="inner_step") from e
    return replace(state, theta=theta, last_inner_loss=ce_val[0])


def outer_step(state: TrainState, split: EpisodeSplit, cfg: TrainConfig) -> TrainState:
    """One update of phi against the pseudo-target batch; theta untouched.

    In the bilevel modes the gradient flows through the best response of
    the inner loop (implicit hypergradient); in no_ml mode it is the plain
    first-order gradient through the augmenter applied to the
    pseudo-target inputs.
    """
    if cfg.mode == "erm":
        raise ContractViolation("outer_step is undefined for erm mode")
    xs, ys = _pool(split.psrc)
    xt, yt = _pool(split.ptrg)
    lr = cfg.outer_lr_at(state.epoch)
    diag = None

    def outer_ce(theta: ParamSet) -> Tensor:
        return cross_entropy(forward(state.classifier, theta, xt), yt)

    try:
        if cfg.mode == "no_ml":
            def direct_fn(phi: ParamSet) -> Tensor:
                return cross_entropy(
                    forward(state.classifier, state.theta, augment(state, phi, xt, "auglearn")), yt
                )

            g_phi = grad(direct_fn, state.phi)
            diag = {"step": state.step, "estimator": "first_order", "g_phi": g_phi.norm()}
            l_outer = float(outer_ce(state.theta).detach())
        else:
            if cfg.augmented_outer:
                x_eval = augment(state, state.phi, xt, cfg.mode).detach()

                def outer_fn(theta: ParamSet) -> Tensor:
                    return cross_entropy(forward(state.classifier, theta, x_eval), yt)

            else:
                outer_fn = outer_ce

            def inner_fn(theta: ParamSet, phi: ParamSet) -> Tensor:
                return _inner_loss(state, theta, phi, xs, ys, cfg)

            res = hypergradient(inner_fn, outer_fn, state.theta, state.phi, cfg.hypergrad)
            g_phi = res.grad_phi
            if cfg.augmented_outer:
                def direct_fn(phi: ParamSet) -> Tensor:
                    x_aug = augment(state, phi, xt, cfg.mode)
                    return cross_entropy(forward(state.classifier, state.theta, x_aug), yt)

                g_phi = g_phi.add(grad(direct_fn, state.phi))
            diag = {
                "step": state.step,
                "estimator": cfg.hypergrad.estimator,
                "k": cfg.hypergrad.k,
                "v1": res.v1_norm,
                "v2": res.v2_norm,
                "residual": res.residual,
            }
            l_outer = float(outer_ce(state.theta).detach())
        phi = state.phi.add(g_phi, scale=-lr)
        phi.check_finite("outer_step.phi")
    except NumericError as e:
        raise TrainingError(str(e), step=state.step, where="outer_step") from e

    psrc_acc = batch_accuracy(state.classifier, state.theta, xs, ys)
    ptrg_acc = batch_accuracy(state.classifier, state.theta, xt, yt)
    row = MetricRow(state.epoch, state.step, cfg.mode, state.last_inner_loss, l_outer, psrc_acc, ptrg_acc)
    return replace(
        state,
        phi=phi,
        step=state.step + 1,
        history=state.history + (row,),
        last_diag=diag,
    )


def predict(net: ClassifierNet, theta: ParamSet, x: Tensor) -> Tensor:
    """Class indices by argmax over logits; ties break to the lowest index."""
    with torch.no_grad():
        logits = forward(net, theta, x)
    return torch.argmax(logits, dim=1)


def batch_accuracy(net: ClassifierNet, theta: ParamSet, x: Tensor, y: Tensor) -> float:
    pred = predict(net, theta, x)
    return float((pred == torch.as_tensor(y, dtype=torch.long)).double().mean()) * 100.0


def _epoch_batches(
    datasets: list[DomainDataset], cfg: TrainConfig, epoch: int, dtype: torch.dtype
) -> list[list[Batch]]:
    """Deterministic per-epoch batch schedule: one shuffled pass per domain,
    equal per-domain batch sizes, remainder dropped."""
    steps = min(len(ds) // cfg.batch_size for ds in datasets)
    if steps == 0:
        raise ContractViolation(
            f"batch_size {cfg.batch_size} exceeds the smallest domain "
            f"({min(len(ds) for ds in datasets)} samples)"
        )
    perms = []
    for d_idx, ds in enumerate(datasets):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, TAG_BATCH, epoch, d_idx]))
        perms.append(rng.permutation(len(ds)))
    out = []
    for s in range(steps):
        step_batches = []
        for ds, perm in zip(datasets, perms):
            idx = torch.from_numpy(perm[s * cfg.batch_size : (s + 1) * cfg.batch_size].copy())
            step_batches.append((ds.domain_id, ds.images[idx].to(dtype), ds.labels[idx]))
        out.append(step_batches)
    return out


def train(datasets: list[DomainDataset], cfg: TrainConfig) -> TrainState:
    """Run the configured mode over the given source domains.

    Returns the final TrainState; per-step metrics are in state.history.
    """
    if not datasets:
        raise ContractViolation("no source domains given")
    if cfg.mode != "erm" and len(datasets) < 2:
        raise SplitError(f"mode {cfg.mode} needs >= 2 source domains, got {len(datasets)}")
    classes = datasets[0].classes
    shape = tuple(datasets[0].images.shape[1:])
    for ds in datasets:
        if ds.classes != classes or tuple(ds.images.shape[1:]) != shape:
            raise ContractViolation("source domains must share class count and image shape")
    dtype = cfg.torch_dtype()
    state = init_state(cfg, classes, shape[0], (shape[1], shape[2]))
    for epoch in range(cfg.epochs):
        state = replace(state, epoch=epoch)
        for step_batches in _epoch_batches(datasets, cfg, epoch, dtype):
            if cfg.mode == "erm":
                state = erm_step(state, _pool(tuple(step_batches)), cfg)
            else:
                split = make_split(step_batches, cfg.seed, state.step)
                state = inner_step(state, split, cfg)
                state = outer_step(state, split, cfg)
                if cfg.verbose and state.last_diag is not None:
                    print(json.dumps(state.last_diag))
    return state


def write_metrics_csv(history: tuple[MetricRow, ...], path) -> None:
    """Metrics as CSV; floats via repr so identical runs give identical bytes."""

    def cell(v) -> str:
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    lines = ["epoch,step,mode,L_inner,L_outer,psrc_acc,ptrg_acc"]
    for r in history:
        lines.append(
            ",".join(
                [cell(r.epoch), cell(r.step), cell(r.mode), cell(r.l_inner), cell(r.l_outer), cell(r.psrc_acc), cell(r.ptrg_acc)]
            )
        )
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write("\n".join(lines) + "\n")
    os.replace(tmp, path)
