"""Self-contained correctness checks: finite differences and closed forms.

Everything here is an independent route to a value the library computes
some other way. The finite-difference checker never calls the autodiff
module's derivative code; the quadratic bilevel family has a pen-and-paper
hypergradient; the direct-summation DCT ignores the matrix implementation.
The CLI `gradcheck` command and the test suite both run this registry.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import torch

from .autodiff import grad, hvp
from .errors import ContractViolation
from .freq import dct2, idct2
from .hypergrad import (
    HypergradConfig,
    exact_inv_hvp,
    hypergradient,
    neumann_inv_hvp,
    unrolled_hypergradient,
)
from .layers import LayerSpec, apply_layer, cross_entropy
from .params import ParamSet, Tensor


def fd_grad(loss_fn: Callable[[ParamSet], Tensor], params: ParamSet, eps: float = 1e-5) -> ParamSet:
    """Central finite-difference gradient, one coordinate at a time.

    Independent of reverse-mode autodiff by construction.
    """
    flat = params.flatten().detach().clone()
    out = torch.zeros_like(flat)
    for i in range(flat.numel()):
        bump = torch.zeros_like(flat)
        bump[i] = eps
        f_plus = float(loss_fn(params.unflatten(flat + bump)).detach())
        f_minus = float(loss_fn(params.unflatten(flat - bump)).detach())
        out[i] = (f_plus - f_minus) / (2.0 * eps)
    return params.unflatten(out)


def rel_err(a: ParamSet, b: ParamSet) -> float:
    num = a.sub(b).norm()
    den = max(a.norm(), b.norm(), 1e-30)
    return num / den


def dct2_direct(x: Tensor) -> Tensor:
    """O(N^2) double-sum orthonormal type-II DCT over the last two axes.

    Deliberately naive; the oracle for the matrix implementation.
    """
    h, w = int(x.shape[-2]), int(x.shape[-1])
    xs = x.reshape(-1, h, w).to(torch.float64)
    out = torch.zeros_like(xs)
    for b in range(xs.shape[0]):
        for k1 in range(h):
            s1 = math.sqrt(1.0 / h) if k1 == 0 else math.sqrt(2.0 / h)
            for k2 in range(w):
                s2 = math.sqrt(1.0 / w) if k2 == 0 else math.sqrt(2.0 / w)
                acc = 0.0
                for n1 in range(h):
                    c1 = math.cos(math.pi * (2 * n1 + 1) * k1 / (2.0 * h))
                    for n2 in range(w):
                        acc += (
                            float(xs[b, n1, n2])
                            * c1
                            * math.cos(math.pi * (2 * n2 + 1) * k2 / (2.0 * w))
                        )
                out[b, k1, k2] = s1 * s2 * acc
    return out.reshape(x.shape)


@dataclass(frozen=True)
class QuadraticBilevel:
    """Bilevel problem with a closed-form best response and hypergradient.

    L_inner = 0.5 ||theta - M phi||^2 + 0.5 theta^T Q theta   (Q SPD)
    L_outer = 0.5 ||theta - t||^2

    Inner Hessian H = I + Q is constant; theta*(phi) = H^-1 M phi; the
    hypergradient at any theta is M^T H^-1 (theta - t).
    """

    m: Tensor
    q: Tensor
    t: Tensor

    @classmethod
    def random(cls, seed: int, n_theta: int = 20, n_phi: int = 12) -> "QuadraticBilevel":
        g = torch.Generator().manual_seed(seed)
        m = torch.randn(n_theta, n_phi, generator=g, dtype=torch.float64)
        a = torch.randn(n_theta, n_theta, generator=g, dtype=torch.float64)
        q = a @ a.T / n_theta + 0.5 * torch.eye(n_theta, dtype=torch.float64)
        t = torch.randn(n_theta, generator=g, dtype=torch.float64)
        return cls(m, q, t)

    def hessian(self) -> Tensor:
        n = self.q.shape[0]
        return torch.eye(n, dtype=torch.float64) + self.q

    def lambda_max(self) -> float:
        return float(torch.linalg.eigvalsh(self.hessian()).max())

    def inner_loss(self, theta: ParamSet, phi: ParamSet) -> Tensor:
        d = theta["w"] - self.m @ phi["w"]
        return 0.5 * (d @ d) + 0.5 * theta["w"] @ self.q @ theta["w"]

    def outer_loss(self, theta: ParamSet) -> Tensor:
        d = theta["w"] - self.t
        return 0.5 * (d @ d)

    def theta_star(self, phi: ParamSet) -> ParamSet:
        sol = torch.linalg.solve(self.hessian(), self.m @ phi["w"])
        return ParamSet.single("w", sol)

    def closed_form_hypergrad(self, theta: ParamSet) -> ParamSet:
        sol = torch.linalg.solve(self.hessian(), theta["w"] - self.t)
        return ParamSet.single("w", self.m.T @ sol)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _proj_loss(out: Tensor, seed: int) -> Tensor:
    """Scalarize a tensor with a fixed random projection (keeps FD honest)."""
    g = torch.Generator().manual_seed(seed)
    p = torch.randn(out.shape, generator=g, dtype=out.dtype)
    return (out * p).sum()


def _fd_layer_check(spec: LayerSpec, x: Tensor, wrt_input: bool, tol: float = 1e-4):
    g = torch.Generator().manual_seed(77)
    params = {}
    for pname, shape in spec.param_shapes():
        params[pname] = torch.randn(shape, generator=g, dtype=torch.float64) * 0.5

    if wrt_input:
        ps = ParamSet.single("x", x)

        def loss_fn(p: ParamSet) -> Tensor:
            out = apply_layer(spec, p["x"], params.get("weight"), params.get("bias"))
            return _proj_loss(out, 5)

    else:
        ps = ParamSet(tuple(sorted(params.items())))

        def loss_fn(p: ParamSet) -> Tensor:
            out = apply_layer(spec, x, p["weight"], p["bias"] if "bias" in p.names else None)
            return _proj_loss(out, 5)

    ad = grad(loss_fn, ps)
    fd = fd_grad(loss_fn, ps)
    e = rel_err(ad, fd)
    return e < tol, f"rel err {e:.3e} (tol {tol:.0e})"


def _check_fd_conv2d():
    spec = LayerSpec("conv2d", in_channels=2, out_channels=3, kernel=3, padding=1)
    g = torch.Generator().manual_seed(11)
    x = torch.randn(2, 2, 6, 6, generator=g, dtype=torch.float64)
    return _fd_layer_check(spec, x, wrt_input=False)


def _check_fd_transpose_conv2d():
    spec = LayerSpec("transpose_conv2d", in_channels=3, out_channels=2, kernel=2, stride=2)
    g = torch.Generator().manual_seed(12)
    x = torch.randn(1, 3, 4, 4, generator=g, dtype=torch.float64)
    return _fd_layer_check(spec, x, wrt_input=False)


def _check_fd_linear():
    spec = LayerSpec("linear", in_features=7, out_features=4)
    g = torch.Generator().manual_seed(13)
    x = torch.randn(3, 7, generator=g, dtype=torch.float64)
    return _fd_layer_check(spec, x, wrt_input=False)


def _check_fd_relu():
    spec = LayerSpec("relu")
    g = torch.Generator().manual_seed(14)
    x = torch.randn(40, generator=g, dtype=torch.float64)
    # FD is meaningless at the kink; push every coordinate away from zero
    x = torch.where(x.abs() < 0.1, x + 0.2 * torch.sign(x) + 0.05, x)
    return _fd_layer_check(spec, x, wrt_input=True)


def _check_fd_maxpool2d():
    spec = LayerSpec("maxpool2d", kernel=2)
    g = torch.Generator().manual_seed(15)
    x = torch.randn(1, 2, 4, 4, generator=g, dtype=torch.float64)
    # the check is only valid away from argmax ties; verify the margin
    win = x.reshape(1, 2, 2, 2, 2, 2)
    vals = win.permute(0, 1, 2, 4, 3, 5).reshape(-1, 4)
    top2 = vals.topk(2, dim=1).values
    margin = float((top2[:, 0] - top2[:, 1]).min())
    if margin < 1e-3:
        return False, f"test setup degenerate: pool margin {margin:.1e}"
    return _fd_layer_check(spec, x, wrt_input=True)


def _check_fd_softmax_ce():
    g = torch.Generator().manual_seed(16)
    logits = torch.randn(5, 4, generator=g, dtype=torch.float64)
    labels = torch.tensor([0, 3, 1, 2, 2])
    ps = ParamSet.single("z", logits)

    def loss_fn(p: ParamSet) -> Tensor:
        return cross_entropy(p["z"], labels)

    ad = grad(loss_fn, ps)
    fd = fd_grad(loss_fn, ps)
    e = rel_err(ad, fd)
    return e < 1e-4, f"rel err {e:.3e} (tol 1e-04)"


def _check_fd_dct2():
    g = torch.Generator().manual_seed(17)
    x = torch.randn(2, 3, 8, 8, generator=g, dtype=torch.float64)
    ps = ParamSet.single("x", x)

    def loss_fn(p: ParamSet) -> Tensor:
        return _proj_loss(dct2(p["x"]), 6)

    e = rel_err(grad(loss_fn, ps), fd_grad(loss_fn, ps))
    return e < 1e-4, f"rel err {e:.3e} (tol 1e-04)"


def _check_fd_idct2():
    g = torch.Generator().manual_seed(18)
    x = torch.randn(2, 3, 8, 8, generator=g, dtype=torch.float64)
    ps = ParamSet.single("x", x)

    def loss_fn(p: ParamSet) -> Tensor:
        return _proj_loss(idct2(p["x"]), 7)

    e = rel_err(grad(loss_fn, ps), fd_grad(loss_fn, ps))
    return e < 1e-4, f"rel err {e:.3e} (tol 1e-04)"


def _check_dct_roundtrip():
    g = torch.Generator().manual_seed(19)
    worst = 0.0
    for hw in ((4, 4), (8, 8), (16, 12), (32, 32), (64, 64)):
        x = torch.randn(2, 3, *hw, generator=g, dtype=torch.float64)
        worst = max(worst, float((idct2(dct2(x)) - x).abs().max()))
    return worst < 1e-8, f"max abs err {worst:.3e} (tol 1e-08)"


def _check_dct_parseval():
    g = torch.Generator().manual_seed(20)
    x = torch.randn(2, 3, 16, 16, generator=g, dtype=torch.float64)
    ex = float((x * x).sum())
    es = float((dct2(x) ** 2).sum())
    e = abs(ex - es) / max(abs(ex), 1e-30)
    return e < 1e-9, f"energy rel err {e:.3e} (tol 1e-09)"


def _check_dct_linearity():
    g = torch.Generator().manual_seed(21)
    x = torch.randn(1, 2, 8, 8, generator=g, dtype=torch.float64)
    y = torch.randn(1, 2, 8, 8, generator=g, dtype=torch.float64)
    lhs = dct2(1.7 * x - 0.3 * y)
    rhs = 1.7 * dct2(x) - 0.3 * dct2(y)
    e = float((lhs - rhs).abs().max())
    return e < 1e-12, f"max abs err {e:.3e} (tol 1e-12)"


def _check_dct_direct_sum():
    g = torch.Generator().manual_seed(22)
    x = torch.randn(1, 1, 8, 8, generator=g, dtype=torch.float64)
    e = float((dct2(x) - dct2_direct(x)).abs().max())
    return e < 1e-10, f"max abs err vs double sum {e:.3e} (tol 1e-10)"


def _spd_problem(seed: int, n: int = 20):
    g = torch.Generator().manual_seed(seed)
    a = torch.randn(n, n, generator=g, dtype=torch.float64)
    h = a @ a.T / n + 0.5 * torch.eye(n, dtype=torch.float64)
    v = torch.randn(n, generator=g, dtype=torch.float64)
    return h, v


def _check_neumann_vs_exact():
    h, v = _spd_problem(23)
    lam = float(torch.linalg.eigvalsh(h).max())
    alpha = 1.0 / lam
    vp = ParamSet.single("v", v)
    est = neumann_inv_hvp(lambda p: ParamSet.single("v", h @ p["v"]), vp, alpha, 100)
    ref = exact_inv_hvp(h.numpy(), v.numpy())
    e = rel_err(est, ParamSet.single("v", torch.from_numpy(ref)))
    return e < 1e-3, f"rel err {e:.3e} at K=100 (tol 1e-03)"


def _check_neumann_monotone():
    errs = []
    for seed in (24, 25, 26):
        h, v = _spd_problem(seed)
        lam = float(torch.linalg.eigvalsh(h).max())
        alpha = 1.0 / lam
        vp = ParamSet.single("v", v)
        ref = ParamSet.single("v", torch.from_numpy(exact_inv_hvp(h.numpy(), v.numpy())))
        seq = [
            rel_err(neumann_inv_hvp(lambda p: ParamSet.single("v", h @ p["v"]), vp, alpha, k), ref)
            for k in (1, 5, 20, 100)
        ]
        errs.append(seq)
        if any(later >= earlier for earlier, later in zip(seq, seq[1:])):
            return False, f"errors not decreasing in K: {['%.2e' % s for s in seq]}"
    return True, f"K=1..100 errors decrease, e.g. {['%.2e' % s for s in errs[0]]}"


def _quad_setup(seed: int = 27):
    qb = QuadraticBilevel.random(seed)
    g = torch.Generator().manual_seed(seed + 1)
    phi = ParamSet.single("w", torch.randn(qb.m.shape[1], generator=g, dtype=torch.float64))
    theta = qb.theta_star(phi)
    return qb, theta, phi


def _check_hyper_neumann_vs_closed():
    qb, theta, phi = _quad_setup()
    alpha = 1.0 / qb.lambda_max()
    res = hypergradient(
        qb.inner_loss, qb.outer_loss, theta, phi, HypergradConfig(estimator="neumann", k=100, alpha=alpha)
    )
    e = rel_err(res.grad_phi, qb.closed_form_hypergrad(theta))
    return e < 1e-3, f"rel err {e:.3e} (tol 1e-03)"


def _check_hyper_exact_vs_closed():
    qb, theta, phi = _quad_setup()
    res = hypergradient(qb.inner_loss, qb.outer_loss, theta, phi, HypergradConfig(estimator="exact"))
    e = rel_err(res.grad_phi, qb.closed_form_hypergrad(theta))
    return e < 1e-6, f"rel err {e:.3e} (tol 1e-06)"


def _check_hyper_unrolled_vs_closed():
    qb, theta, phi = _quad_setup()
    lr = 1.0 / qb.lambda_max()
    g = unrolled_hypergradient(qb.inner_loss, qb.outer_loss, theta.zeros_like(), phi, lr, 400)
    e = rel_err(g, qb.closed_form_hypergrad(theta))
    return e < 1e-6, f"rel err {e:.3e} (tol 1e-06)"


def _check_hyper_neumann_vs_unrolled():
    qb, theta, phi = _quad_setup()
    alpha = 1.0 / qb.lambda_max()
    res = hypergradient(
        qb.inner_loss, qb.outer_loss, theta, phi, HypergradConfig(estimator="neumann", k=100, alpha=alpha)
    )
    g = unrolled_hypergradient(qb.inner_loss, qb.outer_loss, theta.zeros_like(), phi, alpha, 200)
    e = rel_err(res.grad_phi, g)
    return e < 1e-3, f"rel err {e:.3e} (tol 1e-03)"


def _check_hyper_zero_v1():
    qb, theta, phi = _quad_setup()

    def const_outer(th: ParamSet) -> Tensor:
        return (th["w"] * 0.0).sum()

    for est in ("neumann", "exact"):
        res = hypergradient(qb.inner_loss, const_outer, theta, phi, HypergradConfig(estimator=est, k=5, alpha=0.1))
        if res.grad_phi.norm() != 0.0:
            return False, f"{est}: nonzero hypergradient {res.grad_phi.norm():.3e} for v1 = 0"
    return True, "v1 = 0 gives exactly zero for neumann and exact"


def _check_hvp_symmetry():
    g = torch.Generator().manual_seed(28)
    a = torch.randn(6, generator=g, dtype=torch.float64)
    b = torch.randn(4, generator=g, dtype=torch.float64)
    ps = ParamSet.of([("a", a), ("b", b)])

    def loss_fn(p: ParamSet) -> Tensor:
        return (p["a"] ** 3).sum() + (p["a"][:4] * p["b"] ** 2).sum() + (p["b"] ** 4).sum()

    u = ps.map(lambda _, t: torch.randn(t.shape, generator=g, dtype=torch.float64))
    v = ps.map(lambda _, t: torch.randn(t.shape, generator=g, dtype=torch.float64))
    lhs = hvp(loss_fn, ps, u).dot(v)
    rhs = hvp(loss_fn, ps, v).dot(u)
    e = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-30)
    return e < 1e-10, f"u'Hv vs v'Hu rel err {e:.3e} (tol 1e-10)"


CHECKS: dict[str, Callable] = {
    "fd.conv2d": _check_fd_conv2d,
    "fd.transpose_conv2d": _check_fd_transpose_conv2d,
    "fd.linear": _check_fd_linear,
    "fd.relu": _check_fd_relu,
    "fd.maxpool2d": _check_fd_maxpool2d,
    "fd.softmax_ce": _check_fd_softmax_ce,
    "fd.dct2": _check_fd_dct2,
    "fd.idct2": _check_fd_idct2,
    "dct.roundtrip": _check_dct_roundtrip,
    "dct.parseval": _check_dct_parseval,
    "dct.linearity": _check_dct_linearity,
    "dct.direct_sum": _check_dct_direct_sum,
    "neumann.vs_exact": _check_neumann_vs_exact,
    "neumann.monotone": _check_neumann_monotone,
    "hyper.neumann_vs_closed": _check_hyper_neumann_vs_closed,
    "hyper.exact_vs_closed": _check_hyper_exact_vs_closed,
    "hyper.unrolled_vs_closed": _check_hyper_unrolled_vs_closed,
    "hyper.neumann_vs_unrolled": _check_hyper_neumann_vs_unrolled,
    "hyper.zero_v1": _check_hyper_zero_v1,
    "hvp.symmetry": _check_hvp_symmetry,
}


def run_checks(names: Optional[list[str]] = None) -> list[CheckResult]:
    """Run the named checks (all by default) and collect results."""
    selected = names or list(CHECKS)
    results = []
    for name in selected:
        if name not in CHECKS:
            raise ContractViolation(f"unknown check {name!r}; known: {sorted(CHECKS)}")
        t0 = time.perf_counter()
        passed, detail = CHECKS[name]()
        results.append(CheckResult(name, bool(passed), detail, time.perf_counter() - t0))
    return results
