"""Leave-one-domain-out evaluation, reporting arithmetic, and FGSM probing.

Reported tables round to one decimal at display time only. The displayed
average is computed from the displayed (rounded) per-domain values with
exact decimal arithmetic and half-up rounding, matching how benchmark
tables are conventionally built; binary-float averaging gets edge cases like
(78.5 + 75.2 + 96.2 + 67.9) / 4 wrong in the last digit.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import torch

from .data import DomainDataset
from .errors import ContractViolation, UndefinedRateError
from .layers import ClassifierNet, cross_entropy, forward
from .params import ParamSet, Tensor
from .trainer import predict

_EVAL_CHUNK = 512


def evaluate(net: ClassifierNet, theta: ParamSet, dataset: DomainDataset) -> float:
    """Top-1 accuracy percent of argmax predictions; full float precision."""
    n = len(dataset)
    if n == 0:
        raise ContractViolation("cannot evaluate on an empty dataset")
    dtype = theta.tensors[0].dtype
    correct = 0
    for lo in range(0, n, _EVAL_CHUNK):
        x = dataset.images[lo : lo + _EVAL_CHUNK].to(dtype)
        y = dataset.labels[lo : lo + _EVAL_CHUNK]
        pred = predict(net, theta, x)
        correct += int((pred == y).sum())
    return 100.0 * correct / n


def _round1(v: float) -> Decimal:
    return Decimal(repr(float(v))).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)


@dataclass(frozen=True)
class EvalReport:
    """Per-domain accuracies and their average; optionally per-seed values.

    ``per_domain`` and ``average`` keep full precision; ``display`` gives
    the one-decimal table form.
    """

    domain_ids: tuple[str, ...]
    per_domain: tuple[float, ...]
    average: float
    per_seed: tuple[tuple[float, ...], ...] = ()

    def display(self) -> dict:
        rounded = [_round1(v) for v in self.per_domain]
        avg = (sum(rounded) / Decimal(len(rounded))).quantize(
            Decimal("0.1"), rounding=ROUND_HALF_UP
        )
        return {
            "per_domain": {d: str(r) for d, r in zip(self.domain_ids, rounded)},
            "average": str(avg),
        }


def aggregate(
    accuracies,
    domain_ids: tuple[str, ...] = (),
    per_seed: tuple[tuple[float, ...], ...] = (),
) -> EvalReport:
    """Combine per-domain accuracies into a report.

    The stored average is the exact arithmetic mean; rounding happens only
    in display(). Order of domains does not affect the average.
    """
    accs = tuple(float(a) for a in accuracies)
    if not accs:
        raise ContractViolation("aggregate needs at least one accuracy")
    for a in accs:
        if not (0.0 <= a <= 100.0):
            raise ContractViolation(f"accuracy {a} outside [0, 100]")
    if domain_ids and len(domain_ids) != len(accs):
        raise ContractViolation("domain_ids and accuracies must align")
    ids = domain_ids or tuple(f"D{i}" for i in range(len(accs)))
    return EvalReport(ids, accs, sum(accs) / len(accs), per_seed)


@dataclass(frozen=True)
class AttackConfig:
    """FGSM sweep settings; epsilons on [0,1]-scaled pixels."""

    epsilons: tuple[float, ...] = (0.0, 1 / 255, 2 / 255, 4 / 255, 8 / 255)

    def __post_init__(self):
        eps = self.epsilons
        if not eps:
            raise ContractViolation("epsilon grid must be non-empty")
        for e in eps:
            if not (e >= 0.0) or e != e or e == float("inf"):
                raise ContractViolation(f"epsilon {e} must be finite and >= 0")
        if any(a > b for a, b in zip(eps, eps[1:])):
            raise ContractViolation(f"epsilon grid must be ascending, got {eps}")


def fgsm(net: ClassifierNet, theta: ParamSet, x: Tensor, y: Tensor, eps: float) -> Tensor:
    """x + eps * sign of the input gradient of cross-entropy, clamped to [0,1]."""
    if eps < 0:
        raise ContractViolation(f"epsilon must be >= 0, got {eps}")
    x_leaf = x.detach().clone().requires_grad_(True)
    loss = cross_entropy(forward(net, theta, x_leaf), y)
    (g,) = torch.autograd.grad(loss, [x_leaf])
    return (x.detach() + eps * torch.sign(g)).clamp(0.0, 1.0)


def attack_success_rate(net: ClassifierNet, theta: ParamSet, dataset: DomainDataset, eps: float) -> float:
    """Percent of originally-correct samples that the attack flips.

    Samples the clean model already gets wrong are excluded from the
    denominator, so the rate isolates the attack's effect from base error.
    """
    n = len(dataset)
    dtype = theta.tensors[0].dtype
    correct_before = 0
    flipped = 0
    for lo in range(0, n, _EVAL_CHUNK):
        x = dataset.images[lo : lo + _EVAL_CHUNK].to(dtype)
        y = dataset.labels[lo : lo + _EVAL_CHUNK]
        clean_ok = predict(net, theta, x) == y
        if not bool(clean_ok.any()):
            continue
        xs, ys = x[clean_ok], y[clean_ok]
        adv = fgsm(net, theta, xs, ys, eps)
        adv_ok = predict(net, theta, adv) == ys
        correct_before += int(clean_ok.sum())
        flipped += int((~adv_ok).sum())
    if correct_before == 0:
        raise UndefinedRateError(
            f"no correctly-classified samples in domain {dataset.domain_id}; success rate undefined"
        )
    return 100.0 * flipped / correct_before


def attack_curve(
    net: ClassifierNet, theta: ParamSet, dataset: DomainDataset, cfg: AttackConfig = AttackConfig()
) -> list[tuple[float, float]]:
    """Success rate at each epsilon of the grid, ascending."""
    return [(e, attack_success_rate(net, theta, dataset, e)) for e in cfg.epsilons]
