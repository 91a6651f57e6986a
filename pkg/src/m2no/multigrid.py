"""Classical V-cycle solver with multiwavelet grid transfers.

Restriction is the low-pass analysis channel applied along every spatial
axis; prolongation is its transpose, so the transfer pair satisfies
``restrict(prolong(x)) = x`` and the coarse operators are the induced
products ``R A R^T``.  Coarse operators are assembled densely below a
crossover size and applied matrix-free through the finer level above it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

from .basis import FilterBank
from .grids import Field, StencilOperator, operator_matrix
from .traces import ResidualTrace
from .transforms import prolong_axis, restrict_axis
from .validation import as_float_array, check_block_length

DENSE_CROSSOVER = 4096  # assemble coarse operators densely up to this many unknowns
SMOOTHERS = ("jacobi", "gauss_seidel")


def _spatial_axes(arr: np.ndarray, dim: int) -> range:
    return range(arr.ndim - dim, arr.ndim)


def restrict(field, bank: FilterBank, dim: int | None = None) -> np.ndarray:
    """Low-pass channel of one analysis step along every spatial axis.

    Accepts a :class:`~m2no.grids.Field` or an array; leading axes (for
    example channels) pass through untouched.  Halves each spatial axis.
    """
    if isinstance(field, Field):
        dim = field.dim
    arr = as_float_array(field, "field")
    dim = arr.ndim if dim is None else dim
    out = arr
    for axis in _spatial_axes(arr, dim):
        check_block_length(out.shape[axis], bank.k)
        out = restrict_axis(out, bank, axis=axis)
    return out


def prolong(field, bank: FilterBank, dim: int | None = None) -> np.ndarray:
    """Transpose of :func:`restrict`: doubles each spatial axis."""
    if isinstance(field, Field):
        dim = field.dim
    arr = as_float_array(field, "field")
    dim = arr.ndim if dim is None else dim
    out = arr
    for axis in _spatial_axes(arr, dim):
        out = prolong_axis(out, bank, axis=axis)
    return out


class _DenseLevel:
    """Coarse level with an explicitly assembled operator matrix."""

    def __init__(self, matrix: np.ndarray, shape: tuple[int, ...]):
        self.matrix = matrix
        self.shape = shape
        self.diag = np.diag(matrix).copy()
        self._lower = None
        self._lu = None

    def apply(self, u: np.ndarray) -> np.ndarray:
        return (self.matrix @ u.ravel()).reshape(self.shape)

    def jacobi_correct(self, r: np.ndarray) -> np.ndarray:
        return (r.ravel() / self.diag).reshape(self.shape)

    def gauss_seidel_correct(self, r: np.ndarray) -> np.ndarray:
        if self._lower is None:
            self._lower = np.tril(self.matrix)
        z = scipy.linalg.solve_triangular(self._lower, r.ravel(), lower=True)
        return z.reshape(self.shape)

    def solve(self, f: np.ndarray) -> np.ndarray:
        if self._lu is None:
            self._lu = scipy.linalg.lu_factor(self.matrix)
        return scipy.linalg.lu_solve(self._lu, f.ravel()).reshape(self.shape)


class _StencilLevel:
    """Finest level backed by a stencil operator."""

    def __init__(self, op: StencilOperator, shape: tuple[int, ...]):
        self.op = op
        self.shape = shape
        self.diag = op.diagonal_value()
        self._lower = None
        self._lu = None

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.op(u)

    def jacobi_correct(self, r: np.ndarray) -> np.ndarray:
        return r / self.diag

    def gauss_seidel_correct(self, r: np.ndarray) -> np.ndarray:
        if self._lower is None:
            mat = operator_matrix(self.op, self.shape)
            self._lower = sp.tril(mat, format="csr")
        return spsolve_triangular(self._lower, r.ravel(), lower=True).reshape(self.shape)

    def solve(self, f: np.ndarray) -> np.ndarray:
        if self._lu is None:
            mat = operator_matrix(self.op, self.shape).toarray()
            self._lu = scipy.linalg.lu_factor(mat)
        return scipy.linalg.lu_solve(self._lu, f.ravel()).reshape(self.shape)


class _GalerkinLevel:
    """Matrix-free coarse level applied through the next finer level.

    The diagonal of ``R A R^T`` is periodic across cells with period ``k``
    per axis (zero extension keeps edge cells identical to interior ones),
    so Jacobi smoothing only needs ``k^dim`` probes.
    """

    def __init__(self, finer, bank: FilterBank, shape: tuple[int, ...]):
        self.finer = finer
        self.bank = bank
        self.shape = shape
        self.diag = self._periodic_diagonal()

    def apply(self, u: np.ndarray) -> np.ndarray:
        fine = u
        for axis in range(u.ndim):
            fine = prolong_axis(fine, self.bank, axis=axis)
        fine = self.finer.apply(fine)
        for axis in range(fine.ndim):
            fine = restrict_axis(fine, self.bank, axis=axis)
        return fine

    def _periodic_diagonal(self) -> np.ndarray:
        k = self.bank.k
        diag = np.zeros(self.shape)
        grid = np.meshgrid(*[np.arange(k)] * len(self.shape), indexing="ij")
        for offs in zip(*[g.ravel() for g in grid]):
            probe = np.zeros(self.shape)
            probe[offs] = 1.0
            value = self.apply(probe)[offs]
            tiles = tuple(slice(o, None, k) for o in offs)
            diag[tiles] = value
        return diag

    def jacobi_correct(self, r: np.ndarray) -> np.ndarray:
        return r / self.diag

    def gauss_seidel_correct(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError(
            "Gauss-Seidel needs an assembled matrix; this level is matrix-free "
            f"(size {self.shape} above the dense crossover)"
        )

    def solve(self, f: np.ndarray) -> np.ndarray:
        raise NotImplementedError("direct solve unavailable on a matrix-free level")


@dataclass
class MgHierarchy:
    """Per-level operators and smoothing configuration for a V-cycle.

    ``depth`` counts coarsenings, so a hierarchy of depth d has d+1 levels.
    ``pre_steps``/``post_steps`` give the smoothing counts per level
    (finest first); the coarsest level either solves directly or relaxes
    ``coarse_steps`` times.
    """

    levels: list
    bank: FilterBank
    depth: int
    pre_steps: tuple[int, ...]
    post_steps: tuple[int, ...]
    smoother: str
    omega: float
    coarse_solve: str
    coarse_steps: int

    @property
    def fine_shape(self) -> tuple[int, ...]:
        return self.levels[0].shape


def build_hierarchy(
    op: StencilOperator,
    shape: tuple[int, ...],
    bank: FilterBank,
    depth: int,
    pre_steps: int | tuple[int, ...] = 2,
    post_steps: int | tuple[int, ...] = 2,
    smoother: str = "jacobi",
    omega: float = 2.0 / 3.0,
    coarse_solve: str | None = None,
    coarse_steps: int = 2,
    dense_crossover: int = DENSE_CROSSOVER,
) -> MgHierarchy:
    """Construct the multigrid hierarchy for a stencil operator.

    Coarse operators are the exact products ``R A R^T``; they are assembled
    densely while the unknown count stays at or below ``dense_crossover``
    and wrapped matrix-free beyond that.  ``coarse_solve`` defaults to a
    dense direct solve when the coarsest level is assembled (and small) and
    to smoothing otherwise.
    """
    if depth < 1:
        raise ValueError("hierarchy depth must be >= 1")
    if smoother not in SMOOTHERS:
        raise ValueError(f"unknown smoother {smoother!r}; expected one of {SMOOTHERS}")
    shape = tuple(int(s) for s in shape)
    k = bank.k
    for s in shape:
        if s % (k * 2**depth) != 0:
            raise ValueError(
                f"axis length {s} does not support {depth} coarsenings with k={k}"
            )

    def as_tuple(steps):
        if np.isscalar(steps):
            return (int(steps),) * (depth + 1)
        steps = tuple(int(s) for s in steps)
        if len(steps) != depth + 1:
            raise ValueError(f"need {depth + 1} per-level step counts, got {len(steps)}")
        return steps

    levels: list = [_StencilLevel(op, shape)]
    level_shape = shape
    for _ in range(depth):
        coarse_shape = tuple(s // 2 for s in level_shape)
        n_coarse = int(np.prod(coarse_shape))
        finer = levels[-1]
        if n_coarse <= dense_crossover:
            eye = np.eye(n_coarse).reshape((n_coarse,) + coarse_shape)
            pcols = eye
            for axis in range(1, eye.ndim):
                pcols = prolong_axis(pcols, bank, axis=axis)
            if isinstance(finer, _DenseLevel):
                flat = pcols.reshape(n_coarse, -1)
                apcols = flat @ finer.matrix.T
            else:
                apcols = finer.apply(pcols).reshape(n_coarse, -1)
            matrix = pcols.reshape(n_coarse, -1) @ apcols.T
            levels.append(_DenseLevel(matrix, coarse_shape))
        else:
            levels.append(_GalerkinLevel(finer, bank, coarse_shape))
        level_shape = coarse_shape

    if coarse_solve is None:
        # solve the coarsest level exactly whenever it was assembled; only a
        # matrix-free coarsest level falls back to relaxation sweeps
        coarse_solve = "direct" if isinstance(levels[-1], _DenseLevel) else "smooth"
    if coarse_solve not in ("direct", "smooth"):
        raise ValueError(f"coarse_solve must be 'direct' or 'smooth', got {coarse_solve!r}")
    if coarse_solve == "direct" and isinstance(levels[-1], _GalerkinLevel):
        raise ValueError("direct coarse solve requires an assembled coarsest level")

    return MgHierarchy(
        levels=levels,
        bank=bank,
        depth=depth,
        pre_steps=as_tuple(pre_steps),
        post_steps=as_tuple(post_steps),
        smoother=smoother,
        omega=float(omega),
        coarse_solve=coarse_solve,
        coarse_steps=int(coarse_steps),
    )


def smooth(level, u: np.ndarray, f: np.ndarray, method: str, steps: int, omega: float = 2.0 / 3.0) -> np.ndarray:
    """Run ``steps`` relaxation sweeps on ``A u = f`` at one level.

    Weighted Jacobi updates ``u += omega * D^{-1} (f - A u)``; Gauss-Seidel
    performs lexicographic forward sweeps.  ``steps=0`` returns ``u``.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if method not in SMOOTHERS:
        raise ValueError(f"unknown smoother {method!r}; expected one of {SMOOTHERS}")
    u = np.array(u, dtype=float)
    for _ in range(steps):
        r = f - level.apply(u)
        if method == "jacobi":
            u += omega * level.jacobi_correct(r)
        else:
            u += level.gauss_seidel_correct(r)
    return u


def smooth_operator(op: StencilOperator, u, f, method: str = "jacobi", steps: int = 1, omega: float = 2.0 / 3.0):
    """Relax on a bare stencil operator (no hierarchy required)."""
    u_arr = as_float_array(u, "u")
    f_arr = as_float_array(f, "f")
    out = smooth(_StencilLevel(op, u_arr.shape), u_arr, f_arr, method, steps, omega)
    if isinstance(u, Field):
        return Field(out, u.spacing, u.channels)
    return out


def _cycle(hier: MgHierarchy, j: int, u: np.ndarray, f: np.ndarray, detail_energy) -> np.ndarray:
    level = hier.levels[j]
    if j == hier.depth:
        if hier.coarse_solve == "direct":
            return level.solve(f)
        return smooth(level, u, f, hier.smoother, hier.coarse_steps, hier.omega)
    u = smooth(level, u, f, hier.smoother, hier.pre_steps[j], hier.omega)
    r = f - level.apply(u)
    coarse = r
    discarded = 0.0
    for axis in range(r.ndim):
        coarse = restrict_axis(coarse, hier.bank, axis=axis)
    if detail_energy is not None:
        discarded = float(np.linalg.norm(r) ** 2 - np.linalg.norm(coarse) ** 2)
        detail_energy.append((j, discarded))
    e = _cycle(hier, j + 1, np.zeros_like(coarse), coarse, detail_energy)
    for axis in range(e.ndim):
        e = prolong_axis(e, hier.bank, axis=axis)
    u = u + e
    return smooth(level, u, f, hier.smoother, hier.post_steps[j], hier.omega)


def v_cycle(hier: MgHierarchy, u, f, detail_energy: list | None = None):
    """One V-cycle on the finest level; linear in ``(u, f)`` jointly.

    ``detail_energy``, when given a list, collects (level, energy) pairs
    recording the detail-channel energy discarded by each restriction.
    """
    u_arr = as_float_array(u, "u")
    f_arr = as_float_array(f, "f")
    if u_arr.shape != hier.fine_shape or f_arr.shape != hier.fine_shape:
        raise ValueError(
            f"fields of shape {u_arr.shape}/{f_arr.shape} do not match the "
            f"hierarchy's finest level {hier.fine_shape}"
        )
    out = _cycle(hier, 0, u_arr, f_arr, detail_energy)
    if isinstance(u, Field):
        return Field(out, u.spacing, u.channels)
    return out


def solve(hier: MgHierarchy, f, tol: float = 1e-10, max_cycles: int = 50):
    """Iterate V-cycles from a zero guess until the relative residual drops.

    Returns ``(u, trace)``; non-convergence is reported through
    ``trace.converged`` rather than an exception.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    f_arr = as_float_array(f, "f")
    fnorm = np.linalg.norm(f_arr)
    scale = fnorm if fnorm > 0 else 1.0
    u = np.zeros_like(f_arr)
    trace = ResidualTrace()
    res = np.linalg.norm(f_arr - hier.levels[0].apply(u)) / scale
    trace.record(0, res)
    for cycle in range(1, max_cycles + 1):
        u = _cycle(hier, 0, u, f_arr, None)
        res = np.linalg.norm(f_arr - hier.levels[0].apply(u)) / scale
        trace.record(cycle, res)
        if res <= tol:
            trace.converged = True
            trace.iterations_to_tol = cycle
            break
    if isinstance(f, Field):
        return Field(u, f.spacing, f.channels), trace
    return u, trace
