"""Named, ordered parameter collections.

A ParamSet is the unit the optimization and differentiation code works on:
classifier weights and augmenter weights each live in their own ParamSet.
Instances are immutable values; every arithmetic helper returns a new set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import torch

from .errors import ContractViolation, NumericError

Tensor = torch.Tensor

DEFAULT_DTYPE = torch.float64


def as_tensor(data, dtype: torch.dtype = DEFAULT_DTYPE) -> Tensor:
    """Build a CPU tensor with the package default of double precision."""
    return torch.as_tensor(data, dtype=dtype)


def check_finite(t: Tensor, where: str) -> Tensor:
    """Fail fast on NaN/Inf, naming the operation that produced the value."""
    if not bool(torch.isfinite(t).all()):
        raise NumericError("non-finite value", where=where)
    return t


@dataclass(frozen=True)
class ParamSet:
    """Ordered collection of uniquely named tensors.

    Order is significant: flatten()/unflatten() and all elementwise helpers
    rely on it. Tensors are treated as read-only once wrapped.
    """

    items: tuple[tuple[str, Tensor], ...]

    def __post_init__(self):
        names = [n for n, _ in self.items]
        if len(set(names)) != len(names):
            raise ContractViolation(f"duplicate parameter names: {names}")
        for n, t in self.items:
            if not isinstance(t, torch.Tensor):
                raise ContractViolation(f"parameter {n!r} is not a tensor")

    @staticmethod
    def of(pairs: Iterable[tuple[str, Tensor]]) -> "ParamSet":
        return ParamSet(tuple((n, t) for n, t in pairs))

    @staticmethod
    def single(name: str, t: Tensor) -> "ParamSet":
        return ParamSet(((name, t),))

    # -- access ----------------------------------------------------------

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.items)

    @property
    def tensors(self) -> tuple[Tensor, ...]:
        return tuple(t for _, t in self.items)

    @property
    def total_count(self) -> int:
        return sum(t.numel() for _, t in self.items)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.items)

    def __getitem__(self, name: str) -> Tensor:
        for n, t in self.items:
            if n == name:
                return t
        raise KeyError(name)

    def as_dict(self) -> dict[str, Tensor]:
        return dict(self.items)

    def structure_matches(self, other: "ParamSet") -> bool:
        return self.names == other.names and all(
            a.shape == b.shape for a, b in zip(self.tensors, other.tensors)
        )

    def require_structure(self, other: "ParamSet", what: str) -> None:
        if not self.structure_matches(other):
            raise ContractViolation(f"{what}: parameter structure mismatch")

    # -- transforms ------------------------------------------------------

    def map(self, fn: Callable[[str, Tensor], Tensor]) -> "ParamSet":
        return ParamSet(tuple((n, fn(n, t)) for n, t in self.items))

    def detached(self) -> "ParamSet":
        return self.map(lambda _, t: t.detach())

    def cloned(self) -> "ParamSet":
        return self.map(lambda _, t: t.detach().clone())

    def to_dtype(self, dtype: torch.dtype) -> "ParamSet":
        return self.map(lambda _, t: t.detach().to(dtype))

    def zeros_like(self) -> "ParamSet":
        return self.map(lambda _, t: torch.zeros_like(t))

    def check_finite(self, where: str) -> "ParamSet":
        for n, t in self.items:
            check_finite(t, f"{where}[{n}]")
        return self

    # -- arithmetic (elementwise, structure-checked) ----------------------

    def add(self, other: "ParamSet", scale: float = 1.0) -> "ParamSet":
        self.require_structure(other, "add")
        return ParamSet(
            tuple((n, a + scale * b) for (n, a), (_, b) in zip(self.items, other.items))
        )

    def sub(self, other: "ParamSet") -> "ParamSet":
        return self.add(other, scale=-1.0)

    def scale(self, c: float) -> "ParamSet":
        return self.map(lambda _, t: t * c)

    def dot(self, other: "ParamSet") -> float:
        self.require_structure(other, "dot")
        return float(
            sum((a * b).sum() for a, b in zip(self.tensors, other.tensors))
        )

    def norm(self) -> float:
        return float(torch.sqrt(sum((t * t).sum() for t in self.tensors)))

    def max_abs(self) -> float:
        return max(float(t.abs().max()) if t.numel() else 0.0 for t in self.tensors)

    def distance(self, other: "ParamSet") -> float:
        return self.sub(other).norm()

    # -- flatten / unflatten ----------------------------------------------

    def flatten(self) -> Tensor:
        """Concatenate all parameters into one vector (fixed order)."""
        if not self.items:
            return torch.zeros(0, dtype=DEFAULT_DTYPE)
        return torch.cat([t.reshape(-1) for t in self.tensors])

    def unflatten(self, vec: Tensor) -> "ParamSet":
        """Inverse of flatten() against this set's structure; exact round-trip."""
        if vec.numel() != self.total_count:
            raise ContractViolation(
                f"unflatten: expected {self.total_count} elements, got {vec.numel()}"
            )
        out = []
        offset = 0
        for n, t in self.items:
            k = t.numel()
            out.append((n, vec[offset : offset + k].reshape(t.shape)))
            offset += k
        return ParamSet(tuple(out))
