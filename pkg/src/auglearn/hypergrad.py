"""Hypergradients through the inner optimum, without materializing Hessians.

The gradient of a validation objective with respect to augmentation weights
phi, holding the trained classifier theta at a stationary point of the
training objective, is

    d L_out / d phi = - (d^2 L_in / d phi d theta) [H^-1 (d L_out / d theta)]

with H the inner Hessian in theta. The inverse-Hessian-vector product is
approximated by a truncated Neumann series; the mixed second-order term is
a vector-Jacobian product on the same graph. Nothing larger than a
parameter vector is ever stored.

Two independent routes exist for checking: ``exact_inv_hvp`` solves the
dense system directly, and ``unrolled_hypergradient`` differentiates
through explicit inner gradient steps. Keep both; agreement between routes
is the correctness evidence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch

from .autodiff import grad, hvp
from .errors import ContractViolation, NumericError, SingularMatrixError
from .params import ParamSet, check_finite

HvpFn = Callable[[ParamSet], ParamSet]


def neumann_inv_hvp(hvp_fn: HvpFn, v: ParamSet, alpha: float, k: int, where: str = "neumann") -> ParamSet:
    """Truncated Neumann approximation of H^-1 v.

    Iterates p <- v - alpha * H p starting from p = v and returns
    alpha * sum of the first ``k`` iterates, which converges to H^-1 v
    when H is positive definite and alpha < 2 / lambda_max(H). Calls
    ``hvp_fn`` exactly k - 1 times.
    """
    if not (alpha > 0.0):
        raise ContractViolation(f"{where}: alpha must be positive, got {alpha}")
    if not isinstance(k, int) or k < 1:
        raise ContractViolation(f"{where}: k must be an integer >= 1, got {k!r}")
    p = v.cloned()
    acc = p
    for j in range(1, k):
        hp = hvp_fn(p)
        v.require_structure(hp, f"{where}: hvp output")
        p = p.add(hp, scale=-alpha)
        p.check_finite(f"{where}[{j}]")
        acc = acc.add(p)
    return acc.scale(alpha)


def exact_inv_hvp(hessian: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Solve H x = v densely. Oracle-side partner of :func:`neumann_inv_hvp`.

    Raises SingularMatrixError when H is singular or numerically close to it.
    """
    h = np.asarray(hessian, dtype=np.float64)
    rhs = np.asarray(v, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ContractViolation(f"exact_inv_hvp: hessian must be square, got {h.shape}")
    if rhs.shape != (h.shape[0],):
        raise ContractViolation(f"exact_inv_hvp: vector length {rhs.shape} does not match {h.shape}")
    if not np.isfinite(h).all() or not np.isfinite(rhs).all():
        raise NumericError("non-finite input", where="exact_inv_hvp")
    if h.shape[0] > 0:
        cond = np.linalg.cond(h)
        if not np.isfinite(cond) or cond > 1e12:
            raise SingularMatrixError(f"hessian is singular or ill-conditioned (cond={cond:.3e})", where="exact_inv_hvp")
    try:
        x = np.linalg.solve(h, rhs)
    except np.linalg.LinAlgError as e:
        raise SingularMatrixError(str(e), where="exact_inv_hvp") from e
    if not np.isfinite(x).all():
        raise NumericError("non-finite solution", where="exact_inv_hvp")
    return x


def dense_hessian(loss_fn: Callable[[ParamSet], torch.Tensor], params: ParamSet) -> np.ndarray:
    """Materialize the full Hessian by n HVPs against basis vectors.

    Only for small problems: cost is n backward passes and n^2 storage.
    """
    n = params.total_count
    if n > 2000:
        raise ContractViolation(f"dense_hessian: {n} parameters is too large to materialize")
    cols = []
    for j in range(n):
        e = torch.zeros(n, dtype=torch.float64)
        e[j] = 1.0
        col = hvp(loss_fn, params, params.unflatten(e))
        cols.append(col.flatten().numpy())
    return np.stack(cols, axis=1)


ESTIMATORS = ("neumann", "exact", "unrolled")


@dataclass(frozen=True)
class HypergradConfig:
    """How to approximate the inverse-Hessian-vector product.

    ``k`` and ``alpha`` drive the Neumann series; ``unroll_steps`` and
    ``unroll_lr`` drive the unrolled oracle; ``residual`` spends one extra
    HVP to report how well H v2 = v1 was solved.
    """

    estimator: str = "neumann"
    k: int = 5
    alpha: float = 1e-3
    unroll_steps: int = 100
    unroll_lr: float = 0.1
    residual: bool = False

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ContractViolation(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if not isinstance(self.k, int) or self.k < 1:
            raise ContractViolation(f"k must be an integer >= 1, got {self.k!r}")
        if not (self.alpha > 0.0):
            raise ContractViolation(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class HypergradResult:
    """Hypergradient for phi plus diagnostics of the pieces that formed it.

    v1 is the outer gradient in theta, v2 the inverse-HVP estimate;
    ``residual`` is ||H v2 - v1|| when it was requested, else None.
    """

    grad_phi: ParamSet
    v1_norm: float
    v2_norm: float
    hvp_calls: int
    residual: Optional[float] = None


def hypergradient(
    inner_loss_fn: Callable[[ParamSet, ParamSet], torch.Tensor],
    outer_loss_fn: Callable[[ParamSet], torch.Tensor],
    theta: ParamSet,
    phi: ParamSet,
    cfg: HypergradConfig = HypergradConfig(),
) -> HypergradResult:
    """Implicit hypergradient of the outer loss with respect to phi.

    ``inner_loss_fn(theta, phi)`` is the training objective whose Hessian in
    theta is inverted; ``outer_loss_fn(theta)`` is the validation objective
    and must not depend on phi, so the direct term vanishes and only the
    indirect path through the best response remains. The inner graph is
    built once and reused for every Hessian-vector product and for the
    final mixed product.
    """
    if cfg.estimator == "unrolled":
        g = unrolled_hypergradient(
            inner_loss_fn, outer_loss_fn, theta, phi, cfg.unroll_lr, cfg.unroll_steps
        )
        v = grad(outer_loss_fn, theta)
        return HypergradResult(g, v.norm(), 0.0, 0)

    v = grad(outer_loss_fn, theta)
    v.check_finite("hypergrad.outer_grad")

    theta_leaves = [t.detach().clone().requires_grad_(True) for t in theta.tensors]
    phi_leaves = [t.detach().clone().requires_grad_(True) for t in phi.tensors]
    loss = inner_loss_fn(
        ParamSet(tuple(zip(theta.names, theta_leaves))),
        ParamSet(tuple(zip(phi.names, phi_leaves))),
    )
    if not isinstance(loss, torch.Tensor) or loss.dim() != 0:
        raise ContractViolation("hypergradient: inner loss must be a scalar tensor")
    check_finite(loss, "hypergrad.inner_loss")

    if not loss.requires_grad:
        return HypergradResult(phi.zeros_like(), v.norm(), 0.0, 0)

    g1 = torch.autograd.grad(loss, theta_leaves, create_graph=True, allow_unused=True)
    # entries without a graph have identically zero second derivatives, so
    # only the live rows participate in the products below
    live = [i for i, g in enumerate(g1) if g is not None and g.requires_grad]

    calls = 0

    def hvp_fn(u: ParamSet) -> ParamSet:
        nonlocal calls
        calls += 1
        if not live:
            return theta.zeros_like()
        out = torch.autograd.grad(
            [g1[i] for i in live],
            theta_leaves,
            grad_outputs=[u.tensors[i] for i in live],
            retain_graph=True,
            allow_unused=True,
        )
        items = tuple(
            (name, torch.zeros_like(t) if o is None else o.detach())
            for name, t, o in zip(theta.names, theta_leaves, out)
        )
        return ParamSet(items)

    if cfg.estimator == "exact":
        n = theta.total_count
        if n > 2000:
            raise ContractViolation(
                f"hypergradient: exact estimator requires <= 2000 inner parameters, got {n}"
            )
        cols = []
        for j in range(n):
            e = torch.zeros(n, dtype=torch.float64)
            e[j] = 1.0
            cols.append(hvp_fn(theta.unflatten(e.to(theta.tensors[0].dtype))).flatten().to(torch.float64).numpy())
        hess = np.stack(cols, axis=1)
        sol = exact_inv_hvp(hess, v.flatten().to(torch.float64).numpy())
        q = theta.unflatten(torch.from_numpy(sol).to(theta.tensors[0].dtype))
    else:
        q = neumann_inv_hvp(hvp_fn, v, cfg.alpha, cfg.k, where="hypergrad.neumann")
    q.check_finite("hypergrad.inv_hvp")

    residual = None
    if cfg.residual:
        residual = hvp_fn(q).sub(v).norm()

    if live:
        mixed = torch.autograd.grad(
            [g1[i] for i in live],
            phi_leaves,
            grad_outputs=[q.tensors[i] for i in live],
            retain_graph=False,
            allow_unused=True,
        )
        items = tuple(
            (name, torch.zeros_like(t) if m is None else m.detach().neg())
            for name, t, m in zip(phi.names, phi_leaves, mixed)
        )
        phi_grad = ParamSet(items)
    else:
        phi_grad = phi.zeros_like()
    phi_grad.check_finite("hypergrad.mixed")
    return HypergradResult(phi_grad, v.norm(), q.norm(), calls, residual)


def unrolled_hypergradient(
    inner_loss_fn: Callable[[ParamSet, ParamSet], torch.Tensor],
    outer_loss_fn: Callable[[ParamSet], torch.Tensor],
    theta0: ParamSet,
    phi: ParamSet,
    inner_lr: float,
    steps: int,
) -> ParamSet:
    """Differentiate the outer loss through ``steps`` explicit inner SGD steps.

    Independent of the implicit route; the two must agree near an inner
    optimum. Memory grows with steps * parameters, so this refuses problems
    where that product is large.
    """
    if steps < 0:
        raise ContractViolation(f"unrolled_hypergradient: steps must be >= 0, got {steps}")
    if not (inner_lr > 0.0):
        raise ContractViolation(f"unrolled_hypergradient: inner_lr must be positive, got {inner_lr}")
    budget = steps * (theta0.total_count + phi.total_count)
    if budget > 5_000_000:
        raise ContractViolation(
            f"unrolled_hypergradient: {steps} steps x {theta0.total_count + phi.total_count} params "
            "exceeds the unrolling memory budget; use the implicit route"
        )
    phi_leaves = [t.detach().clone().requires_grad_(True) for t in phi.tensors]
    phi_live = ParamSet(tuple(zip(phi.names, phi_leaves)))
    cur = [t.detach().clone().requires_grad_(True) for t in theta0.tensors]
    for step in range(steps):
        loss = inner_loss_fn(ParamSet(tuple(zip(theta0.names, cur))), phi_live)
        check_finite(loss, f"unrolled.inner[{step}]")
        g = torch.autograd.grad(loss, cur, create_graph=True, allow_unused=True)
        cur = [
            c - inner_lr * (torch.zeros_like(c) if gi is None else gi)
            for c, gi in zip(cur, g)
        ]
    outer = outer_loss_fn(ParamSet(tuple(zip(theta0.names, cur))))
    if not isinstance(outer, torch.Tensor) or outer.dim() != 0:
        raise ContractViolation("unrolled_hypergradient: outer loss must be a scalar tensor")
    check_finite(outer, "unrolled.outer_loss")
    if not outer.requires_grad:
        return phi.zeros_like()
    got = torch.autograd.grad(outer, phi_leaves, allow_unused=True)
    items = tuple(
        (name, torch.zeros_like(t) if g is None else g.detach())
        for name, t, g in zip(phi.names, phi_leaves, got)
    )
    out = ParamSet(items)
    out.check_finite("unrolled.phi_grad")
    return out
