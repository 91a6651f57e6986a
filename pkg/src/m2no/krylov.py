"""Restarted GMRES with right preconditioning and pluggable preconditioners.

The loop is the flexible variant: it stores the preconditioned basis
vectors, which coincides with textbook right-preconditioned GMRES for
linear preconditioners and stays correct for the learned operator, whose
action is only approximately linear.  With right preconditioning the
Givens residual estimate equals the true unpreconditioned residual (up to
round-off), so the trace costs no extra solves; the true residual is
recomputed and recorded whenever an iterate is formed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import factorized, spsolve_triangular

from .errors import NumericalError
from .grids import Field, StencilOperator, operator_matrix
from .multigrid import MgHierarchy, v_cycle
from .traces import ResidualTrace
from .validation import as_float_array

_BREAKDOWN_TOL = 1e-14

PRECONDITIONER_KINDS = ("identity", "gauss_seidel", "schwarz", "wavelet_mg", "learned")


@dataclass(frozen=True)
class Preconditioner:
    """A map ``v -> M^{-1} v`` used as a right preconditioner.

    All classical kinds are linear; the learned kind wraps a neural
    operator forward pass and is only approximately linear.
    """

    kind: str
    apply: Callable[[np.ndarray], np.ndarray]


def _blocks_1d(n: int, block_size: int, overlap: int) -> list[np.ndarray]:
    if block_size < 1:
        raise ValueError(f"block_size must be >= 1, got {block_size}")
    if overlap < 0 or overlap >= block_size:
        raise ValueError(f"overlap must satisfy 0 <= overlap < block_size, got {overlap}")
    windows = []
    for start in range(0, n, block_size):
        lo = max(0, start - overlap)
        hi = min(n, start + block_size + overlap)
        windows.append(np.arange(lo, hi))
    return windows


def _schwarz_apply(op: StencilOperator, shape: tuple[int, ...], block_size: int, overlap: int):
    mat = operator_matrix(op, shape).tocsc()
    n_total = int(np.prod(shape))
    if len(shape) == 1:
        index_sets = [w for w in _blocks_1d(shape[0], block_size, overlap)]
    else:
        wy = _blocks_1d(shape[0], block_size, overlap)
        wx = _blocks_1d(shape[1], block_size, overlap)
        grid = np.arange(n_total).reshape(shape)
        index_sets = [grid[np.ix_(a, b)].ravel() for a in wy for b in wx]
    solvers = [(idx, factorized(mat[np.ix_(idx, idx)].tocsc())) for idx in index_sets]

    def apply(v: np.ndarray) -> np.ndarray:
        out = np.zeros(n_total)
        flat = v.ravel()
        for idx, solve_block in solvers:
            out[idx] += solve_block(flat[idx])
        return out.reshape(shape)

    return apply


def make_preconditioner(kind: str, **params) -> Preconditioner:
    """Build a preconditioner of the requested kind.

    Parameters by kind:

    - ``identity``: none.
    - ``gauss_seidel``: ``op`` (StencilOperator), ``shape`` — one forward
      sweep, i.e. a lower-triangular solve.
    - ``schwarz``: ``op``, ``shape``, ``block_size`` (default 64),
      ``overlap`` (default 8) — additive overlapping block direct solves.
    - ``wavelet_mg``: ``hier`` (MgHierarchy) — one V-cycle from a zero
      initial guess.
    - ``learned``: ``model`` (ModelParams); with ``reference_norm`` set the
      wrapper rescales each Krylov vector to the model's training amplitude
      before the forward pass and scales back after, which makes the
      otherwise scale-sensitive network 1-homogeneous.  With
      ``assemble=True`` and ``shape`` the dense matrix is built
      column-by-column from unit basis vectors (validation mode, limited to
      256 unknowns).
    """
    if kind == "identity":
        return Preconditioner("identity", lambda v: v)
    if kind == "gauss_seidel":
        op, shape = params["op"], tuple(params["shape"])
        lower = sp.tril(operator_matrix(op, shape), format="csr")

        def gs_apply(v: np.ndarray) -> np.ndarray:
            return spsolve_triangular(lower, v.ravel(), lower=True).reshape(shape)

        return Preconditioner("gauss_seidel", gs_apply)
    if kind == "schwarz":
        apply = _schwarz_apply(
            params["op"],
            tuple(params["shape"]),
            int(params.get("block_size", 64)),
            int(params.get("overlap", 8)),
        )
        return Preconditioner("schwarz", apply)
    if kind == "wavelet_mg":
        hier: MgHierarchy = params["hier"]

        def mg_apply(v: np.ndarray) -> np.ndarray:
            return v_cycle(hier, np.zeros_like(v), v)

        return Preconditioner("wavelet_mg", mg_apply)
    if kind == "learned":
        model = params["model"]
        reference_norm = params.get("reference_norm")
        if params.get("assemble", False):
            shape = tuple(params["shape"])
            n = int(np.prod(shape))
            if n > 256:
                raise ValueError("assembled learned preconditioner is limited to 256 unknowns")
            cols = np.empty((n, n))
            for j in range(n):
                e = np.zeros(shape)
                e.ravel()[j] = 1.0
                cols[:, j] = precondition_with_model(model, e).ravel()

            def assembled_apply(v: np.ndarray) -> np.ndarray:
                return (cols @ v.ravel()).reshape(v.shape)

            return Preconditioner("learned", assembled_apply)
        if reference_norm is not None:
            r = float(reference_norm)
            if r <= 0:
                raise ValueError("reference_norm must be positive")

            def normalized_apply(v: np.ndarray) -> np.ndarray:
                nv = float(np.linalg.norm(np.ravel(v)))
                if nv == 0.0:
                    return np.zeros_like(v)
                return (nv / r) * np.asarray(precondition_with_model(model, (r / nv) * v))

            return Preconditioner("learned", normalized_apply)
        return Preconditioner("learned", lambda v: precondition_with_model(model, v))
    raise ValueError(f"unknown preconditioner kind {kind!r}; expected one of {PRECONDITIONER_KINDS}")


def precondition_with_model(model, v):
    """Apply a trained operator matrix-free as an approximate inverse.

    The Krylov vector is reinterpreted as an input field at the model's
    resolution and pushed through the forward pass.
    """
    from .model import forward

    arr = v.data if isinstance(v, Field) else np.asarray(v, dtype=float)
    return forward(model, arr)


def _as_apply(op, shape: tuple[int, ...]):
    if isinstance(op, StencilOperator):
        return lambda v: op(v.reshape(shape)).ravel()
    if isinstance(op, np.ndarray):
        return lambda v: op @ v
    if callable(op):
        return lambda v: np.asarray(op(v.reshape(shape)), dtype=float).ravel()
    raise TypeError(f"cannot interpret {type(op).__name__} as a linear operator")


def gmres(
    op,
    b,
    precond: Preconditioner | None = None,
    tol: float = 1e-10,
    restart: int | None = None,
    max_iter: int = 1000,
):
    """Solve ``A x = b`` with restarted, right-preconditioned GMRES.

    ``op`` may be a stencil operator, a dense matrix, or a callable acting
    on fields shaped like ``b``.  ``restart=None`` keeps the full Krylov
    basis for problems up to 1024 unknowns and restarts every 100
    iterations above that.  Returns ``(x, trace)``; Arnoldi breakdown sets
    ``trace.stagnated`` unless the true residual already meets ``tol``, and
    a non-finite operator output raises :class:`NumericalError`.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    b_arr = as_float_array(b, "b")
    shape = b_arr.shape
    n = b_arr.size
    if restart is None:
        restart = max_iter if n <= 1024 else 100
    if restart < 1:
        raise ValueError("restart must be >= 1")
    apply_op = _as_apply(op, shape)
    apply_m = (lambda v: v) if precond is None else (
        lambda v: np.asarray(precond.apply(v.reshape(shape)), dtype=float).ravel()
    )

    rhs = b_arr.ravel()
    bnorm = np.linalg.norm(rhs)
    scale = bnorm if bnorm > 0 else 1.0
    x = np.zeros(n)
    trace = ResidualTrace()
    r = rhs - apply_op(x)
    true_rel = np.linalg.norm(r) / scale
    trace.record(0, true_rel)
    if true_rel <= tol:
        trace.converged = True
        trace.iterations_to_tol = 0
        return (Field(x.reshape(shape), b.spacing, b.channels) if isinstance(b, Field) else x.reshape(shape)), trace

    iteration = 0
    while iteration < max_iter:
        r = rhs - apply_op(x)
        beta = np.linalg.norm(r)
        if beta / scale <= tol:
            trace.converged = True
            trace.iterations_to_tol = trace.iterations_to_tol or iteration
            break
        m = min(restart, max_iter - iteration)
        basis = np.zeros((m + 1, n))
        zbasis = np.zeros((m, n))
        hess = np.zeros((m + 1, m))
        cos = np.zeros(m)
        sin = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        basis[0] = r / beta
        j_used = 0
        broke_down = False
        for j in range(m):
            z = apply_m(basis[j])
            w = apply_op(z)
            if not np.all(np.isfinite(w)):
                raise NumericalError("operator returned non-finite values inside GMRES")
            zbasis[j] = z
            for i in range(j + 1):
                hess[i, j] = basis[i] @ w
                w = w - hess[i, j] * basis[i]
            hess[j + 1, j] = np.linalg.norm(w)
            broke_down = hess[j + 1, j] < _BREAKDOWN_TOL
            if not broke_down:
                basis[j + 1] = w / hess[j + 1, j]
            for i in range(j):
                t = cos[i] * hess[i, j] + sin[i] * hess[i + 1, j]
                hess[i + 1, j] = -sin[i] * hess[i, j] + cos[i] * hess[i + 1, j]
                hess[i, j] = t
            nu = np.hypot(hess[j, j], hess[j + 1, j])
            if nu < _BREAKDOWN_TOL:
                cos[j], sin[j] = 1.0, 0.0
            else:
                cos[j], sin[j] = hess[j, j] / nu, hess[j + 1, j] / nu
            hess[j, j] = cos[j] * hess[j, j] + sin[j] * hess[j + 1, j]
            hess[j + 1, j] = 0.0
            g[j + 1] = -sin[j] * g[j]
            g[j] = cos[j] * g[j]
            iteration += 1
            j_used = j + 1
            trace.record(iteration, abs(g[j + 1]) / scale)
            if broke_down or abs(g[j + 1]) / scale <= tol:
                break
        if j_used > 0:
            rmat = hess[:j_used, :j_used]
            if np.min(np.abs(np.diag(rmat))) < _BREAKDOWN_TOL:
                y = np.linalg.lstsq(rmat, g[:j_used], rcond=None)[0]
            else:
                y = scipy.linalg.solve_triangular(rmat, g[:j_used], lower=False)
            x = x + zbasis[:j_used].T @ y
        true_rel = np.linalg.norm(rhs - apply_op(x)) / scale
        trace.record(iteration, true_rel)
        if true_rel <= tol:
            trace.converged = True
            trace.iterations_to_tol = iteration
            break
        if broke_down:
            trace.stagnated = True
            break

    result = x.reshape(shape)
    if isinstance(b, Field):
        return Field(result, b.spacing, b.channels), trace
    return result, trace
