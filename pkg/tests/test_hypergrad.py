import numpy as np
import pytest
import torch

from auglearn import (
    ContractViolation,
    HypergradConfig,
    ParamSet,
    SingularMatrixError,
    exact_inv_hvp,
    hypergradient,
    neumann_inv_hvp,
    unrolled_hypergradient,
)
from auglearn.gradcheck import QuadraticBilevel


def test_neumann_known_diagonal_case():
    # H = diag(2, 4), v = (1, 1), alpha = 0.2, K = 10:
    # component i of the scaled sum is alpha * (1 - (1 - alpha*h_i)^K) / (alpha*h_i) * v_i
    h = torch.tensor([2.0, 4.0], dtype=torch.float64)
    v = ParamSet.single("x", torch.ones(2, dtype=torch.float64))
    calls = []

    def hvp_fn(p):
        calls.append(1)
        return p.map(lambda _, t: h * t)

    out = neumann_inv_hvp(hvp_fn, v, alpha=0.2, k=10)
    expected = torch.tensor([0.4969766912, 0.2499999744], dtype=torch.float64)
    assert torch.allclose(out["x"], expected, atol=1e-10)
    assert sum(calls) == 9  # K iterates need K-1 products


def test_neumann_converges_to_inverse():
    h = torch.tensor([2.0, 4.0], dtype=torch.float64)
    v = ParamSet.single("x", torch.ones(2, dtype=torch.float64))
    out = neumann_inv_hvp(lambda p: p.map(lambda _, t: h * t), v, alpha=0.2, k=400)
    assert torch.allclose(out["x"], torch.tensor([0.5, 0.25], dtype=torch.float64), atol=1e-12)


def test_neumann_rejects_bad_args():
    v = ParamSet.single("x", torch.ones(2, dtype=torch.float64))
    fn = lambda p: p
    with pytest.raises(ContractViolation):
        neumann_inv_hvp(fn, v, alpha=0.0, k=5)
    with pytest.raises(ContractViolation):
        neumann_inv_hvp(fn, v, alpha=0.1, k=0)


def test_exact_inv_hvp_matches_solve():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(6, 6))
    hess = a @ a.T + 6 * np.eye(6)
    v = rng.normal(size=6)
    out = exact_inv_hvp(hess, v)
    assert np.allclose(out, np.linalg.solve(hess, v), atol=1e-12)


def test_exact_inv_hvp_rejects_singular():
    with pytest.raises(SingularMatrixError):
        exact_inv_hvp(np.zeros((3, 3)), np.ones(3))


@pytest.fixture(scope="module")
def quad():
    return QuadraticBilevel.random(seed=11, n_theta=12, n_phi=7)


def test_estimators_match_closed_form(quad):
    # compare at the inner optimum, where implicit and unrolled routes coincide
    phi = ParamSet.single("w", torch.linspace(-1, 1, 7, dtype=torch.float64))
    theta = quad.theta_star(phi)
    closed = quad.closed_form_hypergrad(theta)
    alpha = 1.0 / quad.lambda_max()

    for cfg in (
        HypergradConfig(estimator="neumann", k=150, alpha=alpha),
        HypergradConfig(estimator="exact"),
        HypergradConfig(estimator="unrolled", unroll_steps=400, unroll_lr=alpha),
    ):
        res = hypergradient(quad.inner_loss, quad.outer_loss, theta, phi, cfg)
        rel = res.grad_phi.sub(closed).norm() / closed.norm()
        assert rel < 1e-3, f"{cfg.estimator}: rel err {rel}"
    # the exact estimator should be much tighter than the iterative ones
    res = hypergradient(quad.inner_loss, quad.outer_loss, theta, phi, HypergradConfig(estimator="exact"))
    assert res.grad_phi.sub(closed).norm() / closed.norm() < 1e-9


def test_neumann_residual_reported(quad):
    theta = ParamSet.single("w", torch.zeros(12, dtype=torch.float64))
    phi = ParamSet.single("w", torch.ones(7, dtype=torch.float64))
    cfg = HypergradConfig(estimator="neumann", k=200, alpha=1.0 / quad.lambda_max(), residual=True)
    res = hypergradient(quad.inner_loss, quad.outer_loss, theta, phi, cfg)
    assert res.residual is not None and res.residual < 1e-6
    assert res.hvp_calls >= 199


def test_zero_outer_gradient_gives_zero_hypergrad(quad):
    # outer loss independent of theta -> v1 = 0 -> hypergradient exactly zero
    theta = ParamSet.single("w", torch.ones(12, dtype=torch.float64))
    phi = ParamSet.single("w", torch.ones(7, dtype=torch.float64))

    def outer(th):
        return th["w"].sum() * 0.0

    res = hypergradient(quad.inner_loss, outer, theta, phi, HypergradConfig(estimator="neumann", k=5, alpha=0.01))
    assert res.grad_phi.norm() == 0.0


def test_unrolled_matches_closed_form_from_cold_start(quad):
    theta0 = ParamSet.single("w", torch.zeros(12, dtype=torch.float64))
    phi = ParamSet.single("w", torch.linspace(0.5, -0.5, 7, dtype=torch.float64))
    alpha = 1.0 / quad.lambda_max()
    g = unrolled_hypergradient(quad.inner_loss, quad.outer_loss, theta0, phi, inner_lr=alpha, steps=600)
    theta_star = quad.theta_star(phi)
    closed = quad.closed_form_hypergrad(theta_star)
    assert g.sub(closed).norm() / closed.norm() < 1e-6


def test_unknown_estimator_rejected(quad):
    with pytest.raises(ContractViolation):
        HypergradConfig(estimator="magic")
