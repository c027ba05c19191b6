import pytest

from auglearn import CHECKS, ContractViolation, run_checks


def test_registry_covers_layers_dct_and_hypergrad():
    names = set(CHECKS)
    for needed in (
        "fd.conv2d",
        "fd.transpose_conv2d",
        "fd.linear",
        "fd.relu",
        "fd.maxpool2d",
        "fd.softmax_ce",
        "fd.dct2",
        "fd.idct2",
        "dct.roundtrip",
        "dct.parseval",
        "neumann.vs_exact",
        "hyper.neumann_vs_closed",
        "hyper.exact_vs_closed",
        "hyper.unrolled_vs_closed",
        "hvp.symmetry",
    ):
        assert needed in names


def test_unknown_name_rejected():
    with pytest.raises(ContractViolation):
        run_checks(["definitely.not.a.check"])


def test_subset_runs_and_passes():
    results = run_checks(["dct.linearity", "hvp.symmetry"])
    assert [r.name for r in results] == ["dct.linearity", "hvp.symmetry"]
    assert all(r.passed for r in results)
    assert all(r.seconds >= 0.0 for r in results)


def test_full_suite_passes():
    results = run_checks()
    failed = [r for r in results if not r.passed]
    assert not failed, f"failed checks: {[(r.name, r.detail) for r in failed]}"
    assert len(results) == len(CHECKS)
