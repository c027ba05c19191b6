import mpmath
import pytest
import torch

from auglearn import ContractViolation, dct2, dct_matrix, idct2
from auglearn.gradcheck import dct2_direct


def mpmath_dct_matrix(n: int) -> torch.Tensor:
    """High-precision orthonormal type-II DCT matrix, computed independently."""
    with mpmath.workdps(50):
        rows = []
        for k in range(n):
            s = mpmath.sqrt(mpmath.mpf(1) / n) if k == 0 else mpmath.sqrt(mpmath.mpf(2) / n)
            rows.append(
                [float(s * mpmath.cos(mpmath.pi * (2 * j + 1) * k / (2 * n))) for j in range(n)]
            )
    return torch.tensor(rows, dtype=torch.float64)


@pytest.mark.parametrize("n", [1, 2, 3, 8, 16])
def test_dct_matrix_matches_mpmath(n):
    ours = dct_matrix(n, torch.float64)
    ref = mpmath_dct_matrix(n)
    # a few ulps of float64 cosine rounding; any formula error would be ~1e-1
    assert (ours - ref).abs().max() < 5e-15


@pytest.mark.parametrize("n", [2, 8, 16])
def test_dct_matrix_orthonormal(n):
    c = dct_matrix(n, torch.float64)
    eye = c @ c.T
    assert (eye - torch.eye(n, dtype=torch.float64)).abs().max() < 1e-14


def test_dct2_matches_quadruple_sum_oracle():
    g = torch.Generator().manual_seed(3)
    x = torch.randn(6, 5, generator=g, dtype=torch.float64)
    ours = dct2(x)
    ref = dct2_direct(x)
    assert (ours - ref).abs().max() < 1e-12


def test_roundtrip_and_parseval():
    g = torch.Generator().manual_seed(4)
    x = torch.randn(2, 3, 16, 16, generator=g, dtype=torch.float64)
    s = dct2(x)
    assert (idct2(s) - x).abs().max() < 1e-12
    assert abs(s.pow(2).sum() - x.pow(2).sum()) / x.pow(2).sum() < 1e-14


def test_linearity():
    g = torch.Generator().manual_seed(5)
    x = torch.randn(4, 4, generator=g, dtype=torch.float64)
    y = torch.randn(4, 4, generator=g, dtype=torch.float64)
    assert (dct2(2.0 * x - 3.0 * y) - (2.0 * dct2(x) - 3.0 * dct2(y))).abs().max() < 1e-13


def test_constant_image_concentrates_at_dc():
    x = torch.full((8, 8), 0.5, dtype=torch.float64)
    s = dct2(x)
    assert s[0, 0] == pytest.approx(0.5 * 8, abs=1e-12)  # sqrt(1/8)*sqrt(1/8)*sum = 4
    off_dc = s.clone()
    off_dc[0, 0] = 0.0
    assert off_dc.abs().max() < 1e-12


def test_rejects_scalar_input():
    with pytest.raises(ContractViolation):
        dct2(torch.tensor(1.0))


def test_nonsquare_and_batched():
    g = torch.Generator().manual_seed(6)
    x = torch.randn(2, 3, 8, 12, generator=g, dtype=torch.float64)
    assert (idct2(dct2(x)) - x).abs().max() < 1e-12
