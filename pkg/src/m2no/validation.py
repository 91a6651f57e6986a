"""Input validation helpers shared by the public API."""

from __future__ import annotations

import numpy as np


def as_float_array(x, name: str = "input") -> np.ndarray:
    """Coerce to a float64 ndarray, rejecting non-finite values."""
    data = getattr(x, "data", x)
    arr = np.asarray(data, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_block_length(n: int, k: int, name: str = "axis length") -> int:
    """Require n to be divisible by 2k (one refinement step)."""
    if n % (2 * k) != 0 or n == 0:
        raise ValueError(f"{name} {n} is not divisible by 2k = {2 * k}")
    return n


def check_dyadic_length(n: int, k: int, min_levels: int = 1, name: str = "length") -> int:
    """Require n = k * 2**m with m >= min_levels; return m."""
    if n % k != 0:
        raise ValueError(f"{name} {n} is not of the form k*2^n for k={k}")
    cells = n // k
    m = int(cells).bit_length() - 1
    if cells <= 0 or (1 << m) != cells or m < min_levels:
        raise ValueError(
            f"{name} {n} is not of the form k*2^n with n >= {min_levels} for k={k}"
        )
    return m


def check_power_of_two(n: int, name: str = "axis length") -> int:
    if n <= 0 or n & (n - 1):
        raise ValueError(f"{name} must be a power of two, got {n}")
    return n


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "operands") -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what} have mismatched shapes {a.shape} and {b.shape}")
