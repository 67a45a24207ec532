"""Orthonormal 2-D DCT-II and the scalar quantiser."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

TRANSFORM_SIZES = (4, 8, 16, 32, 64)


def check_qp(qp: int) -> int:
    if not isinstance(qp, (int, np.integer)) or not 0 <= qp <= 51:
        raise ValueError(f"qp must be an integer in [0, 51], got {qp!r}")
    return int(qp)


def lambda_from_qp(qp: int) -> float:
    return 0.57 * 2.0 ** ((check_qp(qp) - 12) / 3.0)


def qstep(qp: int) -> float:
    return 2.0 ** ((check_qp(qp) - 4) / 6.0)


@lru_cache(maxsize=None)
def dct_matrix(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    c = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    c[0] /= np.sqrt(2.0)
    c.setflags(write=False)
    return c


def dct_forward(block: np.ndarray) -> np.ndarray:
    """2-D DCT of a square block (or a stack of them along axis 0)."""
    n = block.shape[-1]
    if block.shape[-2] != n:
        raise ValueError("DCT input must be square")
    c = dct_matrix(n)
    return c @ block @ c.T


def dct_inverse(coeffs: np.ndarray) -> np.ndarray:
    n = coeffs.shape[-1]
    c = dct_matrix(n)
    return c.T @ coeffs @ c


def quantize(coeffs: np.ndarray, qp: int) -> np.ndarray:
    """Uniform quantisation, round half away from zero."""
    step = qstep(qp)
    return (np.sign(coeffs) * np.floor(np.abs(coeffs) / step + 0.5)).astype(np.int64)


def dequantize(levels: np.ndarray, qp: int) -> np.ndarray:
    return np.asarray(levels, dtype=np.float64) * qstep(qp)
