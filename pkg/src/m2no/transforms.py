"""Discrete multiwavelet transforms in one and two dimensions.

A signal of length ``k * 2^n`` is identified with the level-``n`` scaling
coefficients of a basis of order ``k``: cell ``l`` holds ``k`` contiguous
coefficients (basis index fastest, cells row-major).  One analysis step
groups neighbouring cell pairs into blocks of ``2k`` and applies the
orthogonal filter matrix, halving the axis; synthesis applies its
transpose.  In 2D the two axes are transformed independently, which
realizes the Kronecker-product filters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .basis import FilterBank
from .validation import as_float_array, check_block_length, check_dyadic_length, check_same_shape


def _blocks(x: np.ndarray, k: int, axis: int) -> np.ndarray:
    """View the given axis as (pairs of cells, 2k) blocks, moved to the end."""
    x = np.moveaxis(x, axis, -1)
    n = check_block_length(x.shape[-1], k)
    return x.reshape(x.shape[:-1] + (n // (2 * k), 2 * k))


def _unblocks(blocks: np.ndarray, axis: int) -> np.ndarray:
    out = blocks.reshape(blocks.shape[:-2] + (-1,))
    return np.moveaxis(out, -1, axis)


def dwt_axis(x: np.ndarray, bank: FilterBank, axis: int = -1):
    """One analysis step along ``axis``; returns (approx, detail) arrays."""
    blocks = _blocks(np.asarray(x, dtype=float), bank.k, axis)
    approx = blocks @ bank.h.T
    detail = blocks @ bank.g.T
    return _unblocks(approx, axis), _unblocks(detail, axis)


def idwt_axis(approx: np.ndarray, detail: np.ndarray, bank: FilterBank, axis: int = -1) -> np.ndarray:
    """Inverse of :func:`dwt_axis`."""
    approx = np.asarray(approx, dtype=float)
    detail = np.asarray(detail, dtype=float)
    check_same_shape(approx, detail, "approximation and detail")
    a = np.moveaxis(approx, axis, -1)
    d = np.moveaxis(detail, axis, -1)
    k = bank.k
    a = a.reshape(a.shape[:-1] + (-1, k))
    d = d.reshape(d.shape[:-1] + (-1, k))
    blocks = a @ bank.h + d @ bank.g
    return _unblocks(blocks, axis)


def restrict_axis(x: np.ndarray, bank: FilterBank, axis: int = -1) -> np.ndarray:
    """Low-pass channel of one analysis step (detail discarded)."""
    blocks = _blocks(np.asarray(x, dtype=float), bank.k, axis)
    return _unblocks(blocks @ bank.h.T, axis)


def prolong_axis(x: np.ndarray, bank: FilterBank, axis: int = -1) -> np.ndarray:
    """Transpose of :func:`restrict_axis`; doubles the axis."""
    x = np.moveaxis(np.asarray(x, dtype=float), axis, -1)
    k = bank.k
    if x.shape[-1] % k != 0:
        raise ValueError(f"axis length {x.shape[-1]} is not a multiple of k={k}")
    a = x.reshape(x.shape[:-1] + (-1, k))
    return _unblocks(a @ bank.h, axis)


def forward_1d(signal, bank: FilterBank):
    """Split a length k*2^n signal into approximation and detail halves.

    Parameters
    ----------
    signal : array_like
        Level-n scaling coefficients, length ``k * 2^n`` with n >= 1.
    bank : FilterBank

    Returns
    -------
    (approx, detail) : pair of ndarrays of length ``k * 2^(n-1)``.
    """
    x = as_float_array(signal, "signal")
    if x.ndim != 1:
        raise ValueError(f"signal must be one-dimensional, got shape {x.shape}")
    check_dyadic_length(x.shape[0], bank.k, min_levels=1, name="signal length")
    return dwt_axis(x, bank)


def inverse_1d(approx, detail, bank: FilterBank) -> np.ndarray:
    """Reconstruct the signal from one analysis step."""
    a = as_float_array(approx, "approx")
    d = as_float_array(detail, "detail")
    return idwt_axis(a, d, bank)


def build_2d_filters(bank: FilterBank):
    """Assembled 2D filter matrices acting on row-major 2k x 2k tiles.

    Returns ``(h2, g2)`` with shapes (k^2, 4k^2) and (3k^2, 4k^2); the
    stacked matrix is orthogonal.  The detail rows are ordered
    (detail_y x approx_x), (approx_y x detail_x), (detail_y x detail_x).
    """
    h, g = bank.h, bank.g
    h2 = np.kron(h, h)
    g2 = np.vstack([np.kron(g, h), np.kron(h, g), np.kron(g, g)])
    return h2, g2


class Detail2D(NamedTuple):
    """Per-level 2D detail blocks; first letter is the y-axis filter."""

    gh: np.ndarray
    hg: np.ndarray
    gg: np.ndarray


@dataclass(frozen=True)
class CoeffPyramid:
    """Multilevel coefficient pyramid.

    ``details`` is ordered finest-first; each entry is one detail array in
    1D or a :class:`Detail2D` triple in 2D.  ``base`` holds the coarsest
    approximation.  The total coefficient count always equals the sample
    count of the decomposed field.
    """

    k: int
    dim: int
    details: tuple
    base: np.ndarray

    @property
    def levels(self) -> int:
        return len(self.details)

    def coefficient_count(self) -> int:
        count = self.base.size
        for d in self.details:
            count += d.size if self.dim == 1 else d.gh.size + d.hg.size + d.gg.size
        return count


def decompose(field, bank: FilterBank, levels: int) -> CoeffPyramid:
    """Run ``levels`` analysis steps on a 1D or 2D field.

    Each axis length must be ``k * 2^n`` with ``n >= levels``; ``levels=0``
    returns a pyramid whose base is the input itself.
    """
    x = as_float_array(field, "field")
    if x.ndim not in (1, 2):
        raise ValueError(f"field must be 1D or 2D, got shape {x.shape}")
    if levels < 0:
        raise ValueError("levels must be >= 0")
    for n in x.shape:
        check_dyadic_length(n, bank.k, min_levels=max(levels, 1), name="axis length")
    details = []
    approx = x
    for _ in range(levels):
        if x.ndim == 1:
            approx, det = dwt_axis(approx, bank)
            details.append(det)
        else:
            ax, dx = dwt_axis(approx, bank, axis=1)
            approx, gh = dwt_axis(ax, bank, axis=0)
            hg, gg = dwt_axis(dx, bank, axis=0)
            details.append(Detail2D(gh=gh, hg=hg, gg=gg))
    return CoeffPyramid(k=bank.k, dim=x.ndim, details=tuple(details), base=approx)


def reconstruct(pyramid: CoeffPyramid, bank: FilterBank) -> np.ndarray:
    """Invert :func:`decompose` exactly."""
    if pyramid.k != bank.k:
        raise ValueError(f"pyramid order {pyramid.k} does not match bank order {bank.k}")
    x = np.asarray(pyramid.base, dtype=float)
    for det in reversed(pyramid.details):
        if pyramid.dim == 1:
            check_same_shape(x, np.asarray(det), "approximation and detail")
            x = idwt_axis(x, det, bank)
        else:
            check_same_shape(x, det.gh, "approximation and detail")
            ax = idwt_axis(x, det.gh, bank, axis=0)
            dx = idwt_axis(det.hg, det.gg, bank, axis=0)
            x = idwt_axis(ax, dx, bank, axis=1)
    return x
