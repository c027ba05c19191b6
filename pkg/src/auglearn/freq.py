"""Orthonormal 2-D cosine transform, for frequency-space augmentation.

The forward map is the type-II DCT with orthonormal scaling, applied
separably over the last two axes. With C the transform matrix,

    dct2(x)  = C_H x C_W^T        idct2(s) = C_H^T s C_W

so idct2 inverts dct2 exactly (up to float error) and the map preserves
the Frobenius norm.
"""

from __future__ import annotations

import math

import torch

from .errors import ContractViolation
from .params import Tensor, check_finite

_matrix_cache: dict[tuple[int, torch.dtype], Tensor] = {}


def dct_matrix(n: int, dtype: torch.dtype = torch.float64) -> Tensor:
    """The n x n orthonormal type-II DCT matrix.

    Row k, column j holds s_k * cos(pi * (2j + 1) * k / (2n)) with
    s_0 = sqrt(1/n) and s_k = sqrt(2/n) otherwise. Rows are orthonormal.
    """
    if n < 1:
        raise ContractViolation(f"dct_matrix: size must be >= 1, got {n}")
    key = (n, dtype)
    cached = _matrix_cache.get(key)
    if cached is not None:
        return cached
    k = torch.arange(n, dtype=torch.float64).reshape(n, 1)
    j = torch.arange(n, dtype=torch.float64).reshape(1, n)
    mat = torch.cos(math.pi * (2.0 * j + 1.0) * k / (2.0 * n))
    scale = torch.full((n, 1), math.sqrt(2.0 / n), dtype=torch.float64)
    scale[0, 0] = math.sqrt(1.0 / n)
    mat = (scale * mat).to(dtype)
    _matrix_cache[key] = mat
    return mat


def _last_two(x: Tensor, op: str) -> tuple[int, int]:
    if x.dim() < 2:
        raise ContractViolation(f"{op}: input must have at least 2 dims, got {x.dim()}")
    return int(x.shape[-2]), int(x.shape[-1])


def dct2(x: Tensor) -> Tensor:
    """2-D orthonormal DCT over the last two axes; leading axes are batch."""
    h, w = _last_two(x, "dct2")
    ch = dct_matrix(h, x.dtype)
    cw = dct_matrix(w, x.dtype)
    out = torch.matmul(torch.matmul(ch, x), cw.transpose(0, 1))
    return check_finite(out, "dct2")


def idct2(s: Tensor) -> Tensor:
    """Inverse of :func:`dct2`; exact round-trip up to float error."""
    h, w = _last_two(s, "idct2")
    ch = dct_matrix(h, s.dtype)
    cw = dct_matrix(w, s.dtype)
    out = torch.matmul(torch.matmul(ch.transpose(0, 1), s), cw)
    return check_finite(out, "idct2")
