"""Grid fields, constant-kernel elliptic operators, and problem generators.

Discretization convention: a 1D problem of size ``n`` has unknowns at the
interior nodes ``x_i = i * h`` with ``h = 1/(n+1)``; the homogeneous
Dirichlet boundary values at 0 and 1 are never stored, so applying a
stencil with zero extension is exact.  2D grids are the tensor product of
this layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized

from . import rng
from .validation import as_float_array, check_same_shape

POISSON_KERNEL_1D = np.array([-1.0, 2.0, -1.0])
POISSON_KERNEL_2D = np.array([[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]])
# Bilinear FEM stiffness stencil for the Laplacian on a uniform square mesh.
FEM_KERNEL_2D = np.array([[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]]) / 3.0


@dataclass(frozen=True)
class Field:
    """A real-valued sample of a function on a 1D or 2D interior grid.

    ``data`` has the spatial shape for a single channel, or a leading
    channel axis when ``channels > 1``.  ``spacing`` holds the mesh size
    per axis.
    """

    data: np.ndarray
    spacing: tuple[float, ...]
    channels: int = 1

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        object.__setattr__(self, "data", data)
        spacing = tuple(float(s) for s in np.atleast_1d(self.spacing))
        object.__setattr__(self, "spacing", spacing)
        expected_ndim = len(spacing) + (1 if self.channels > 1 else 0)
        if data.ndim != expected_ndim:
            raise ValueError(
                f"data with {self.channels} channel(s) and {len(spacing)} axis(es) "
                f"must have ndim {expected_ndim}, got {data.ndim}"
            )
        if self.channels > 1 and data.shape[0] != self.channels:
            raise ValueError(
                f"leading axis {data.shape[0]} does not match channels={self.channels}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("field data contains non-finite values")

    @property
    def dim(self) -> int:
        return len(self.spacing)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape[1:] if self.channels > 1 else self.data.shape

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def __add__(self, other: "Field") -> "Field":
        check_same_shape(self.data, other.data, "fields")
        return Field(self.data + other.data, self.spacing, self.channels)

    def __sub__(self, other: "Field") -> "Field":
        check_same_shape(self.data, other.data, "fields")
        return Field(self.data - other.data, self.spacing, self.channels)

    def __mul__(self, scalar: float) -> "Field":
        return Field(self.data * float(scalar), self.spacing, self.channels)

    __rmul__ = __mul__


def grid_points(n: int, dim: int = 1):
    """Interior node coordinates for an n (or n x n) grid on (0, 1)^dim."""
    h = 1.0 / (n + 1)
    x = h * np.arange(1, n + 1)
    if dim == 1:
        return (x,)
    if dim == 2:
        return np.meshgrid(x, x, indexing="ij")
    raise ValueError(f"dim must be 1 or 2, got {dim}")


@dataclass(frozen=True)
class StencilOperator:
    """Constant-kernel convolution with homogeneous Dirichlet boundaries.

    ``kernel`` is a 3-entry vector in 1D or a 3x3 array in 2D and already
    includes the mesh-size scaling.  Application extends the field by zero
    outside the grid, which realizes the Dirichlet-zero rule exactly.
    """

    kernel: np.ndarray
    spacing: float
    boundary: str = dataclass_field(default="dirichlet_zero")

    def __post_init__(self):
        kernel = np.asarray(self.kernel, dtype=float)
        if kernel.shape not in ((3,), (3, 3)):
            raise ValueError(f"kernel must have shape (3,) or (3, 3), got {kernel.shape}")
        if self.boundary != "dirichlet_zero":
            raise ValueError(f"unsupported boundary rule: {self.boundary}")
        kernel.setflags(write=False)
        object.__setattr__(self, "kernel", kernel)

    @property
    def dim(self) -> int:
        return self.kernel.ndim

    def diagonal_value(self) -> float:
        """Center kernel entry: the constant diagonal of the induced matrix."""
        return float(self.kernel[1] if self.dim == 1 else self.kernel[1, 1])

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return apply_stencil(self.kernel, np.asarray(u, dtype=float))

    def as_matrix(self, shape: tuple[int, ...]) -> np.ndarray:
        """Dense matrix of the operator on the given grid shape."""
        n = int(np.prod(shape))
        cols = self(np.eye(n).reshape((n,) + tuple(shape)))
        return cols.reshape(n, n).T


def apply_stencil(kernel: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Correlate ``u`` with a 3 or 3x3 kernel, zero-extended at boundaries.

    Works on arrays with arbitrary leading axes; the kernel acts on the
    trailing one (1D) or two (2D) axes.
    """
    kernel = np.asarray(kernel, dtype=float)
    if kernel.shape == (3,):
        out = kernel[1] * u
        out[..., :-1] += kernel[2] * u[..., 1:]
        out[..., 1:] += kernel[0] * u[..., :-1]
        return out
    if kernel.shape == (3, 3):
        out = np.zeros_like(u)
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                w = kernel[di + 1, dj + 1]
                if w == 0.0:
                    continue
                src_i = slice(max(di, 0), u.shape[-2] + min(di, 0))
                dst_i = slice(max(-di, 0), u.shape[-2] + min(-di, 0))
                src_j = slice(max(dj, 0), u.shape[-1] + min(dj, 0))
                dst_j = slice(max(-dj, 0), u.shape[-1] + min(-dj, 0))
                out[..., dst_i, dst_j] += w * u[..., src_i, src_j]
        return out
    raise ValueError(f"kernel must have shape (3,) or (3, 3), got {kernel.shape}")


def poisson_operator(dim: int, n: int, kernel: str = "fivepoint") -> StencilOperator:
    """Discrete negative Laplacian on an interior grid of size n per axis.

    ``kernel`` selects the 2D stencil: the default five-point kernel or the
    bilinear-FEM nine-point kernel (``"ninepoint"``); 1D always uses the
    three-point kernel.  The operator is symmetric positive definite.
    """
    if n < 3:
        raise ValueError(f"n must be >= 3, got {n}")
    h = 1.0 / (n + 1)
    if dim == 1:
        return StencilOperator(POISSON_KERNEL_1D / h**2, spacing=h)
    if dim == 2:
        if kernel == "fivepoint":
            return StencilOperator(POISSON_KERNEL_2D / h**2, spacing=h)
        if kernel == "ninepoint":
            return StencilOperator(FEM_KERNEL_2D / h**2, spacing=h)
        raise ValueError(f"unknown 2D kernel: {kernel!r}")
    raise ValueError(f"dim must be 1 or 2, got {dim}")


def apply_operator(op: StencilOperator, u: Field) -> Field:
    """Apply the operator channel-wise to a field."""
    return Field(op(u.data), u.spacing, u.channels)


def residual(op: StencilOperator, u: Field, f: Field) -> Field:
    """r = f - A u, evaluated exactly as written."""
    check_same_shape(u.data, f.data, "solution and right-hand side")
    return Field(f.data - op(u.data), f.spacing, f.channels)


def operator_matrix(op: StencilOperator, shape: tuple[int, ...]) -> sp.csr_matrix:
    """Sparse matrix of a stencil operator on the given grid shape."""
    kernel = op.kernel
    if kernel.ndim == 1:
        n = shape[0]
        diags = [kernel[0] * np.ones(n - 1), kernel[1] * np.ones(n), kernel[2] * np.ones(n - 1)]
        return sp.diags(diags, offsets=[-1, 0, 1], format="csr")
    ny, nx = shape
    row_y = sp.diags(
        [np.ones(ny - 1), np.ones(ny), np.ones(ny - 1)], offsets=[-1, 0, 1]
    ).tocsr()
    total = sp.csr_matrix((ny * nx, ny * nx))
    eye_y = sp.eye(ny, format="csr")
    eye_x = sp.eye(nx, format="csr")
    shifts_y = {-1: sp.eye(ny, k=-1), 0: eye_y, 1: sp.eye(ny, k=1)}
    shifts_x = {-1: sp.eye(nx, k=-1), 0: eye_x, 1: sp.eye(nx, k=1)}
    del row_y
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            w = kernel[di + 1, dj + 1]
            if w != 0.0:
                total = total + w * sp.kron(shifts_y[di], shifts_x[dj], format="csr")
    return total.tocsr()


def _sine_rhs(gen: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """Random combination of the eight lowest sine modes."""
    if dim == 1:
        coeffs = gen.uniform(-1.0, 1.0, size=8)
        (x,) = grid_points(n, 1)
        modes = np.array([np.sin((j + 1) * np.pi * x) for j in range(8)])
        return coeffs @ modes
    coeffs = gen.uniform(-1.0, 1.0, size=8)
    xx, yy = grid_points(n, 2)
    pairs = [(i, j) for i in (1, 2, 3) for j in (1, 2, 3) if (i, j) != (3, 3)]
    modes = np.array([np.sin(i * np.pi * xx) * np.sin(j * np.pi * yy) for i, j in pairs])
    return np.tensordot(coeffs, modes, axes=1)


def _smooth_positive_coefficient(gen: np.random.Generator, n: int, dim: int) -> np.ndarray:
    return np.exp(0.5 * _sine_rhs(gen, n, dim))


def _variable_coeff_matrix(a: np.ndarray, h: float) -> sp.csr_matrix:
    """Assemble -d/dx (a du/dx) (or the 2D analog) with Dirichlet-zero ends.

    Face coefficients are arithmetic means of the neighbouring nodes, with
    the boundary value of ``a`` extended constantly.
    """
    if a.ndim == 1:
        n = a.shape[0]
        face = np.empty(n + 1)
        face[1:-1] = 0.5 * (a[:-1] + a[1:])
        face[0], face[-1] = a[0], a[-1]
        main = (face[:-1] + face[1:]) / h**2
        off = -face[1:-1] / h**2
        return sp.diags([off, main, off], offsets=[-1, 0, 1], format="csr")
    ny, nx = a.shape
    pad = np.pad(a, 1, mode="edge")
    face_y = 0.5 * (pad[:-1, 1:-1] + pad[1:, 1:-1])  # (ny+1, nx)
    face_x = 0.5 * (pad[1:-1, :-1] + pad[1:-1, 1:])  # (ny, nx+1)
    idx = np.arange(ny * nx).reshape(ny, nx)
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(v.ravel())

    main = (face_y[:-1] + face_y[1:] + face_x[:, :-1] + face_x[:, 1:]) / h**2
    add(idx, idx, main)
    add(idx[1:], idx[:-1], -face_y[1:-1] / h**2)
    add(idx[:-1], idx[1:], -face_y[1:-1] / h**2)
    add(idx[:, 1:], idx[:, :-1], -face_x[:, 1:-1] / h**2)
    add(idx[:, :-1], idx[:, 1:], -face_x[:, 1:-1] / h**2)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ny * nx, ny * nx),
    )


DATASET_KINDS = ("poisson_rhs", "variable_coeff")


def make_dataset(kind: str, count: int, n: int, seed: int, dim: int = 1) -> list[tuple[Field, Field]]:
    """Generate (input, target) field pairs for operator learning.

    ``poisson_rhs`` draws a random smooth right-hand side ``a`` and solves
    the constant-coefficient problem ``A u = a`` by a direct factorization.
    ``variable_coeff`` draws a random smooth positive coefficient ``a`` and
    solves ``-div(a grad u) = 1``.  Given the same seed the output is
    bitwise identical.
    """
    if kind not in DATASET_KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")
    if count < 1:
        raise ValueError("count must be >= 1")
    gen = rng.stream(seed, rng.PURPOSE_DATASET)
    h = 1.0 / (n + 1)
    spacing = (h,) * dim
    shape = (n,) * dim
    pairs = []
    if kind == "poisson_rhs":
        op = poisson_operator(dim, n)
        solve = factorized(operator_matrix(op, shape).tocsc())
        for _ in range(count):
            a = _sine_rhs(gen, n, dim)
            u = solve(a.ravel()).reshape(shape)
            pairs.append((Field(a, spacing), Field(u, spacing)))
    else:
        ones = np.ones(shape)
        for _ in range(count):
            a = _smooth_positive_coefficient(gen, n, dim)
            mat = _variable_coeff_matrix(a, h)
            u = factorized(mat.tocsc())(ones.ravel()).reshape(shape)
            pairs.append((Field(a, spacing), Field(u, spacing)))
    return pairs
