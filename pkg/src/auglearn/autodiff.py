"""First- and second-order differentiation over ParamSets.

Reverse-mode differentiation is delegated to torch.autograd; the graph it
records from our differentiable primitives can itself be differentiated,
which is what the Hessian-vector and mixed second-partial products below
rely on (double reverse pass, exact up to floating point -- no finite
differencing on the main path).

All three entry points evaluate the supplied loss closure on fresh leaf
tensors, so caller-owned ParamSets are never mutated and independent
evaluations are safe to run concurrently.
"""

from __future__ import annotations

from typing import Callable

import torch

from .errors import ContractViolation, NumericError
from .params import ParamSet, Tensor

LossFn = Callable[[ParamSet], Tensor]
TwoGroupLossFn = Callable[[ParamSet, ParamSet], Tensor]


def _leaves(params: ParamSet) -> tuple[ParamSet, list[Tensor]]:
    ts = [t.detach().clone().requires_grad_(True) for t in params.tensors]
    return ParamSet(tuple(zip(params.names, ts))), ts


def _check_scalar_loss(loss: Tensor, where: str) -> Tensor:
    if not isinstance(loss, torch.Tensor) or loss.numel() != 1:
        raise ContractViolation(f"{where}: loss must evaluate to a scalar tensor")
    if not bool(torch.isfinite(loss)):
        raise NumericError("non-finite loss value", where=where)
    return loss


def _fill_unused(grads, leaves) -> list[Tensor]:
    # Parameters that never reach the loss get an exact zero gradient.
    return [
        g if g is not None else torch.zeros_like(t) for g, t in zip(grads, leaves)
    ]


def grad(loss_fn: LossFn, params: ParamSet) -> ParamSet:
    """Gradient of a scalar loss with respect to every tensor in ``params``.

    Returns a ParamSet with the same structure as ``params``. Deterministic
    for fixed inputs; raises NumericError if the loss or any gradient entry
    is non-finite.
    """
    leaf_set, leaves = _leaves(params)
    loss = _check_scalar_loss(loss_fn(leaf_set), "grad")
    if not loss.requires_grad:  # constant loss: gradient is exactly zero
        return params.zeros_like()
    gs = torch.autograd.grad(loss, leaves, allow_unused=True)
    out = ParamSet(tuple(zip(params.names, _fill_unused(gs, leaves))))
    return out.check_finite("grad")


def hvp(loss_fn: LossFn, params: ParamSet, v: ParamSet) -> ParamSet:
    """Hessian-vector product (d2L/dp dp^T) v via a double reverse pass.

    The first backward runs with a differentiable graph; the second
    differentiates the inner product <grad, v>. Exact up to floating point.
    """
    v.require_structure(params, "hvp: v")
    leaf_set, leaves = _leaves(params)
    loss = _check_scalar_loss(loss_fn(leaf_set), "hvp")
    if not loss.requires_grad:
        return params.zeros_like()
    gs = torch.autograd.grad(loss, leaves, create_graph=True, allow_unused=True)
    terms = [
        (g * vt).sum() for g, vt in zip(gs, v.tensors) if g is not None
    ]
    if not terms:
        return params.zeros_like()
    inner = torch.stack(terms).sum()
    if not inner.requires_grad:  # gradient is constant in params (linear loss)
        return params.zeros_like()
    hs = torch.autograd.grad(inner, leaves, allow_unused=True)
    out = ParamSet(tuple(zip(params.names, _fill_unused(hs, leaves))))
    return out.check_finite("hvp")


def mixed_vjp(
    loss_fn: TwoGroupLossFn,
    primary: ParamSet,
    secondary: ParamSet,
    v: ParamSet,
) -> ParamSet:
    """v^T times the mixed second partial d2L/(d primary)(d secondary)^T.

    ``v`` must match ``primary``; the result has the structure of
    ``secondary``. Returns exact zeros when the loss does not depend on
    ``secondary``.
    """
    v.require_structure(primary, "mixed_vjp: v")
    p_set, p_leaves = _leaves(primary)
    s_set, s_leaves = _leaves(secondary)
    loss = _check_scalar_loss(loss_fn(p_set, s_set), "mixed_vjp")
    if not loss.requires_grad:
        return secondary.zeros_like()
    gs = torch.autograd.grad(loss, p_leaves, create_graph=True, allow_unused=True)
    terms = [
        (g * vt).sum() for g, vt in zip(gs, v.tensors) if g is not None
    ]
    if not terms:
        return secondary.zeros_like()
    inner = torch.stack(terms).sum()
    if not inner.requires_grad:
        return secondary.zeros_like()
    ms = torch.autograd.grad(inner, s_leaves, allow_unused=True)
    out = ParamSet(tuple(zip(secondary.names, _fill_unused(ms, s_leaves))))
    return out.check_finite("mixed_vjp")
