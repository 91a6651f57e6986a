"""Orthonormal piecewise-polynomial bases on [0, 1] and their filter banks.

The scaling basis of order ``k`` consists of the L2-normalized shifted
Legendre polynomials ``phi_0 .. phi_{k-1}``.  The multiwavelets
``psi_0 .. psi_{k-1}`` are two-piece polynomials spanning the orthogonal
complement of the scaling space inside its half-interval refinement, so
every ``psi_j`` has ``k`` vanishing moments.  Expressing both families in
the refined basis yields the four quadrature-mirror filter matrices
``h0, h1, g0, g1`` and the assembled operators ``h``, ``g``, ``w``.

All inner products are evaluated with Gauss-Legendre quadrature using
enough nodes to be exact for the polynomial integrands, so the
construction carries no approximation error beyond float64 round-off.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss, legval

from .errors import NumericalError

MAX_ORDER = 16

# Gram-Schmidt pivots below this signal a broken construction, not bad data.
_PIVOT_TOL = 1e-10
_IDENTITY_TOL = 1e-10


def _check_order(k: int) -> int:
    k = int(k)
    if not 1 <= k <= MAX_ORDER:
        raise ValueError(f"basis order k must be in [1, {MAX_ORDER}], got {k}")
    return k


def _eval_orthonormal_legendre(coef: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Evaluate sum_m coef[m] * sqrt(2m+1) * P_m(2t - 1) for t in [0, 1]."""
    scale = np.sqrt(2.0 * np.arange(len(coef)) + 1.0)
    return legval(2.0 * np.asarray(t, dtype=float) - 1.0, coef * scale)


@dataclass(frozen=True)
class PiecewisePoly:
    """Polynomial on a union of disjoint subintervals of [0, 1), zero elsewhere.

    Each piece is ``(lo, hi, coef)`` where ``coef[m]`` multiplies the
    orthonormal shifted Legendre polynomial of degree ``m`` in the local
    coordinate ``t = (x - lo) / (hi - lo)``.  With this convention the
    squared L2 norm of a piece is ``(hi - lo) * coef @ coef``.
    """

    pieces: tuple[tuple[float, float, np.ndarray], ...]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for lo, hi, coef in self.pieces:
            mask = (x >= lo) & (x < hi)
            if np.any(mask):
                t = (x[mask] - lo) / (hi - lo)
                out[mask] = _eval_orthonormal_legendre(coef, t)
        return out

    @property
    def degree(self) -> int:
        deg = 0
        for _, _, coef in self.pieces:
            nz = np.nonzero(np.abs(coef) > 1e-14 * max(1.0, np.abs(coef).max()))[0]
            if nz.size:
                deg = max(deg, int(nz[-1]))
        return deg

    def dilated(self, n: int, l: int) -> "PiecewisePoly":
        """Return ``2**(n/2) * self(2**n x - l)`` as a new piecewise polynomial."""
        if n < 0:
            raise ValueError("dilation level n must be >= 0")
        scale = 2.0 ** (0.5 * n)
        width = 2.0 ** (-n)
        if not 0 <= l < 2**n:
            raise ValueError(f"translation l must be in [0, {2**n}), got {l}")
        pieces = tuple(
            ((lo + l) * width, (hi + l) * width, scale * coef)
            for lo, hi, coef in self.pieces
        )
        return PiecewisePoly(pieces)


@dataclass(frozen=True)
class FilterBank:
    """Quadrature-mirror filter matrices of a multiwavelet family of order k.

    ``h0, h1`` map the two half-interval coefficient blocks to the coarse
    scaling coefficients, ``g0, g1`` to the detail coefficients.  The
    assembled ``w = [h; g]`` is an orthogonal 2k x 2k matrix.
    """

    k: int
    h0: np.ndarray
    h1: np.ndarray
    g0: np.ndarray
    g1: np.ndarray

    @property
    def h(self) -> np.ndarray:
        return np.hstack([self.h0, self.h1])

    @property
    def g(self) -> np.ndarray:
        return np.hstack([self.g0, self.g1])

    @property
    def w(self) -> np.ndarray:
        return np.vstack([self.h, self.g])


def quadrature_nodes(k: int, lo: float = 0.0, hi: float = 1.0):
    """Gauss-Legendre nodes/weights on [lo, hi], exact through degree 2k+3."""
    _check_order(k)
    # ceil((2k+1)/2) + 1 nodes: exact for every integrand this module builds.
    x, w = leggauss(k + 2)
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


def build_scaling_basis(k: int) -> list[PiecewisePoly]:
    """Return the orthonormal scaling functions phi_0 .. phi_{k-1}.

    ``phi_j`` is the shifted Legendre polynomial of degree exactly ``j``,
    normalized to unit L2 norm on [0, 1], represented as a single piece.
    """
    k = _check_order(k)
    return [PiecewisePoly(((0.0, 1.0, np.eye(k)[j].copy()),)) for j in range(k)]


def _fine_basis_coords_of_scaling(k: int) -> np.ndarray:
    """Coordinates of phi_i in the refined orthonormal basis of V_1.

    The refined basis consists of ``sqrt(2) phi_j(2x)`` on [0, 1/2) followed
    by ``sqrt(2) phi_j(2x - 1)`` on [1/2, 1).  Row ``i`` holds the two-scale
    coefficients ``<phi_i, sqrt(2) phi_j(2x)>`` and
    ``<phi_i, sqrt(2) phi_j(2x - 1)>``.
    """
    phis = build_scaling_basis(k)
    coords = np.zeros((k, 2 * k))
    for half, (lo, hi) in enumerate([(0.0, 0.5), (0.5, 1.0)]):
        x, wq = quadrature_nodes(k, lo, hi)
        t = 2.0 * x - half  # local coordinate of the refined piece
        for i in range(k):
            fi = phis[i](x)
            for j in range(k):
                fine_j = np.sqrt(2.0) * _eval_orthonormal_legendre(np.eye(k)[j], t)
                coords[i, half * k + j] = np.sum(wq * fi * fine_j)
    return coords


def _wavelet_coords(k: int) -> np.ndarray:
    """Orthonormal coordinates of psi_0 .. psi_{k-1} in the refined basis.

    Gram-Schmidt on the left-half refined basis functions: each seed is
    ``sqrt(2) phi_i(2x)`` restricted to [0, 1/2), taken in increasing degree
    order, orthogonalized first against every scaling function and then
    against the previously accepted wavelets.  A second orthogonalization
    pass keeps the result orthonormal to machine precision for all
    supported orders.
    """
    h = _fine_basis_coords_of_scaling(k)
    rows: list[np.ndarray] = []
    for i in range(k):
        v = np.zeros(2 * k)
        v[i] = 1.0
        for _ in range(2):
            v = v - h.T @ (h @ v)
            for prev in rows:
                v = v - (prev @ v) * prev
        norm = np.linalg.norm(v)
        if norm < _PIVOT_TOL:
            raise NumericalError(
                f"multiwavelet construction pivot {norm:.3e} below {_PIVOT_TOL} "
                f"for k={k}, seed {i}"
            )
        v /= norm
        # Sign convention: leading nonzero Legendre coefficient of the left
        # piece is positive, which pins the basis across platforms.
        left = v[:k]
        lead = np.nonzero(np.abs(left) > 1e-12 * np.abs(left).max())[0][-1]
        if left[lead] < 0:
            v = -v
        rows.append(v)
    return np.array(rows)


def build_multiwavelets(k: int) -> list[PiecewisePoly]:
    """Return the multiwavelets psi_0 .. psi_{k-1} of order k.

    Each psi is a two-piece polynomial on [0, 1/2) and [1/2, 1), orthonormal,
    orthogonal to all polynomials of degree below k (hence k vanishing
    moments), with a deterministic sign convention.
    """
    k = _check_order(k)
    coords = _wavelet_coords(k)
    psis = []
    for row in coords:
        left = np.sqrt(2.0) * row[:k]
        right = np.sqrt(2.0) * row[k:]
        psis.append(PiecewisePoly(((0.0, 0.5, left), (0.5, 1.0, right))))
    return psis


@functools.lru_cache(maxsize=None)
def derive_filter_bank(k: int) -> FilterBank:
    """Compute the filter bank of order k from the two-scale inner products.

    Entries are ``<phi_i, sqrt(2) phi_j(2x)>`` over [0, 1/2] and
    ``<phi_i, sqrt(2) phi_j(2x - 1)>`` over [1/2, 1] (rows of ``h``), and the
    same integrals with psi_i in place of phi_i (rows of ``g``).  Raises
    :class:`~m2no.errors.NumericalError` if any orthogonality identity has a
    residual above 1e-10, which would indicate a construction bug.
    """
    k = _check_order(k)
    phis = build_scaling_basis(k)
    psis = build_multiwavelets(k)
    hrows = np.zeros((k, 2 * k))
    grows = np.zeros((k, 2 * k))
    for half, (lo, hi) in enumerate([(0.0, 0.5), (0.5, 1.0)]):
        x, wq = quadrature_nodes(k, lo, hi)
        t = 2.0 * x - half
        fine = np.array(
            [np.sqrt(2.0) * _eval_orthonormal_legendre(np.eye(k)[j], t) for j in range(k)]
        )
        for i in range(k):
            hrows[i, half * k : (half + 1) * k] = fine @ (wq * phis[i](x))
            grows[i, half * k : (half + 1) * k] = fine @ (wq * psis[i](x))

    bank = FilterBank(
        k=k,
        h0=hrows[:, :k],
        h1=hrows[:, k:],
        g0=grows[:, :k],
        g1=grows[:, k:],
    )
    _self_check(bank)
    for arr in (bank.h0, bank.h1, bank.g0, bank.g1):
        arr.setflags(write=False)
    return bank


def _self_check(bank: FilterBank) -> None:
    k = bank.k
    eye_k = np.eye(k)
    residuals = {
        "h0 h0^T + h1 h1^T - I": bank.h0 @ bank.h0.T + bank.h1 @ bank.h1.T - eye_k,
        "g0 g0^T + g1 g1^T - I": bank.g0 @ bank.g0.T + bank.g1 @ bank.g1.T - eye_k,
        "h0 g0^T + h1 g1^T": bank.h0 @ bank.g0.T + bank.h1 @ bank.g1.T,
        "w w^T - I": bank.w @ bank.w.T - np.eye(2 * k),
        "h^T h + g^T g - I": bank.h.T @ bank.h + bank.g.T @ bank.g - np.eye(2 * k),
    }
    for name, res in residuals.items():
        err = np.linalg.norm(res)
        if err > _IDENTITY_TOL:
            raise NumericalError(
                f"filter bank self-check failed for k={k}: ||{name}|| = {err:.3e}"
            )
