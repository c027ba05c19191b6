import pytest
import torch

from auglearn import ContractViolation, ParamSet, grad, hvp, mixed_vjp


def quadratic(params):
    # f(x) = x^T diag(1,2,3) x / 2  ->  grad = diag(1,2,3) x, hessian = diag(1,2,3)
    x = params["x"]
    d = torch.tensor([1.0, 2.0, 3.0], dtype=x.dtype)
    return 0.5 * (d * x * x).sum()


def test_grad_matches_analytic():
    p = ParamSet.single("x", torch.tensor([1.0, 1.0, 1.0]))
    g = grad(quadratic, p)
    assert torch.allclose(g["x"], torch.tensor([1.0, 2.0, 3.0]))


def test_grad_of_constant_is_zero():
    p = ParamSet.single("x", torch.ones(3))
    g = grad(lambda q: torch.tensor(5.0), p)
    assert g.norm() == 0.0


def test_grad_rejects_nonscalar_loss():
    p = ParamSet.single("x", torch.ones(3))
    with pytest.raises(ContractViolation):
        grad(lambda q: q["x"] * 2, p)


def test_hvp_matches_hessian():
    p = ParamSet.single("x", torch.tensor([0.5, -0.2, 2.0]))
    v = ParamSet.single("x", torch.tensor([1.0, 1.0, 1.0]))
    out = hvp(quadratic, p, v)
    assert torch.allclose(out["x"], torch.tensor([1.0, 2.0, 3.0]))


def test_hvp_of_linear_loss_is_zero():
    p = ParamSet.single("x", torch.ones(3))
    v = ParamSet.single("x", torch.full((3,), 7.0))
    out = hvp(lambda q: q["x"].sum(), p, v)
    assert out.norm() == 0.0


def test_hvp_multi_tensor_cross_terms():
    # f = (sum a)(sum b): H is off-diagonal only, so Hv picks up cross terms
    p = ParamSet.of([("a", torch.tensor([1.0, 2.0])), ("b", torch.tensor([3.0]))])
    v = ParamSet.of([("a", torch.tensor([1.0, 1.0])), ("b", torch.tensor([1.0]))])
    out = hvp(lambda q: q["a"].sum() * q["b"].sum(), p, v)
    assert torch.allclose(out["a"], torch.tensor([1.0, 1.0]))
    assert torch.allclose(out["b"], torch.tensor([2.0]))


def test_mixed_vjp_bilinear():
    # f = theta^T W phi with W = [[1,2],[3,4]]; d/dphi (df/dtheta . u) = W^T u
    w = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
    theta = ParamSet.single("t", torch.tensor([0.3, -0.7]))
    phi = ParamSet.single("p", torch.tensor([0.1, 0.9]))
    u = ParamSet.single("t", torch.tensor([1.0, 2.0]))

    def f(th, ph):
        return th["t"] @ w @ ph["p"]

    out = mixed_vjp(f, theta, phi, u)
    assert torch.allclose(out["p"], w.T @ torch.tensor([1.0, 2.0]))


def test_mixed_vjp_separable_is_zero():
    # No theta-phi interaction -> mixed second derivative is zero
    theta = ParamSet.single("t", torch.ones(2))
    phi = ParamSet.single("p", torch.ones(2))
    u = ParamSet.single("t", torch.ones(2))
    out = mixed_vjp(lambda th, ph: th["t"].pow(2).sum() + ph["p"].pow(2).sum(), theta, phi, u)
    assert out.norm() == 0.0


def test_hvp_requires_matching_structure():
    p = ParamSet.single("x", torch.ones(3))
    v = ParamSet.single("y", torch.ones(3))
    with pytest.raises(ContractViolation):
        hvp(quadratic, p, v)
