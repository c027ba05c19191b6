import math

import pytest
import torch

from auglearn import ContractViolation, NumericError, ParamSet


def make(a=(1.0, 2.0), b=((3.0, 4.0), (5.0, 6.0))):
    return ParamSet.of([("a", torch.tensor(a)), ("b", torch.tensor(b))])


def test_names_and_counts():
    p = make()
    assert p.names == ("a", "b")
    assert p.total_count == 6
    assert len(p) == 2
    assert p["b"].shape == (2, 2)


def test_duplicate_names_rejected():
    with pytest.raises(ContractViolation):
        ParamSet.of([("a", torch.zeros(1)), ("a", torch.zeros(1))])


def test_missing_name_keyerror_names_param():
    with pytest.raises(KeyError, match="nope"):
        make()["nope"]


def test_arithmetic():
    p = make()
    q = p.add(p)  # 2p
    assert torch.equal(q["a"], torch.tensor([2.0, 4.0]))
    assert torch.equal(p.sub(p)["b"], torch.zeros(2, 2))
    assert torch.equal(p.scale(3.0)["a"], torch.tensor([3.0, 6.0]))
    assert p.add(p, scale=-1.0).norm() == 0.0


def test_dot_and_norm():
    p = make()
    expected = sum(float(t.pow(2).sum()) for t in p.tensors)
    assert p.dot(p) == pytest.approx(expected)
    assert p.norm() == pytest.approx(math.sqrt(expected))
    assert p.max_abs() == 6.0


def test_distance():
    p = make()
    q = p.map(lambda _, t: t + 1.0)
    assert p.distance(q) == pytest.approx(math.sqrt(6.0))


def test_flatten_unflatten_roundtrip():
    p = make()
    v = p.flatten()
    assert v.shape == (6,)
    q = p.unflatten(v * 2)
    assert torch.equal(q["b"], p["b"] * 2)


def test_unflatten_wrong_length():
    with pytest.raises(ContractViolation):
        make().unflatten(torch.zeros(5))


def test_structure_mismatch():
    p = make()
    q = ParamSet.of([("a", torch.zeros(3))])
    assert not p.structure_matches(q)
    with pytest.raises(ContractViolation):
        p.require_structure(q, "test")


def test_arithmetic_requires_matching_structure():
    p = make()
    q = ParamSet.of([("a", torch.zeros(2)), ("c", torch.zeros(2, 2))])
    with pytest.raises(ContractViolation):
        p.add(q)


def test_zeros_like_and_cloned_independent():
    p = make()
    z = p.zeros_like()
    assert z.norm() == 0.0 and z.names == p.names
    c = p.cloned()
    c["a"].mul_(0)
    assert torch.equal(p["a"], torch.tensor([1.0, 2.0]))


def test_check_finite_names_offender():
    p = ParamSet.single("w", torch.tensor([1.0, float("nan")]))
    with pytest.raises(NumericError, match="w"):
        p.check_finite("unit")
