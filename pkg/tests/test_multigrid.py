"""Tests for the wavelet-transfer V-cycle solver.

Low-pass-only transfers give a convergent but not textbook-fast V-cycle:
the prolongation is aggregation-like, so the contraction factor is mild
and grows with depth.  The assertions here pin the measured behavior
(convergence, monotonicity, exact structural identities) rather than
classical-multigrid rates.
"""

import numpy as np
import pytest

from m2no.basis import derive_filter_bank
from m2no.grids import Field, grid_points, poisson_operator
from m2no.multigrid import build_hierarchy, prolong, restrict, smooth_operator, solve, v_cycle


def restriction_matrix(n, bank):
    return np.array([restrict(e, bank, dim=1) for e in np.eye(n)]).T


def test_haar_restriction_of_constants():
    bank = derive_filter_bank(1)
    out = restrict(np.array([1.0, 1.0, 1.0, 1.0]), bank, dim=1)
    assert np.allclose(out, np.sqrt(2.0))


def test_haar_prolongation():
    bank = derive_filter_bank(1)
    out = prolong(np.array([np.sqrt(2.0)]), bank, dim=1)
    assert np.allclose(out, 1.0)


def test_restrict_prolong_is_identity_on_coarse_space():
    for k in (1, 2, 4):
        bank = derive_filter_bank(k)
        rng = np.random.default_rng(k)
        coarse = rng.normal(size=8 * k)
        back = restrict(prolong(coarse, bank, dim=1), bank, dim=1)
        assert np.max(np.abs(back - coarse)) < 1e-12


def test_restrict_matches_dense_matrix():
    k = 2
    bank = derive_filter_bank(k)
    rmat = restriction_matrix(16, bank)
    rng = np.random.default_rng(1)
    x = rng.normal(size=16)
    assert np.max(np.abs(restrict(x, bank, dim=1) - rmat @ x)) < 1e-13


def test_prolong_of_zero():
    bank = derive_filter_bank(3)
    assert np.allclose(prolong(np.zeros(6), bank, dim=1), 0.0)


def test_adjointness_of_transfers():
    k = 4
    bank = derive_filter_bank(k)
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(200):
        x = rng.normal(size=32)
        y = rng.normal(size=16)
        lhs = np.dot(restrict(x, bank, dim=1), y)
        rhs = np.dot(x, prolong(y, bank, dim=1))
        worst = max(worst, abs(lhs - rhs) / (np.linalg.norm(x) * np.linalg.norm(y)))
    assert worst < 1e-12


def test_adjointness_2d():
    bank = derive_filter_bank(2)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(16, 16))
    y = rng.normal(size=(8, 8))
    lhs = np.sum(restrict(x, bank, dim=2) * y)
    rhs = np.sum(x * prolong(y, bank, dim=2))
    assert abs(lhs - rhs) < 1e-12 * np.linalg.norm(x) * np.linalg.norm(y)


def test_restriction_shape_errors():
    bank = derive_filter_bank(2)
    with pytest.raises(ValueError):
        restrict(np.zeros(6), bank, dim=1)


def test_galerkin_identity():
    # assembled R A R^T equals the hierarchy's coarse matrices at every level
    for dim, n in [(1, 64), (2, 16)]:
        op = poisson_operator(dim, n)
        bank = derive_filter_bank(2)
        shape = (n,) * dim
        hier = build_hierarchy(op, shape, bank, depth=2)
        size = int(np.prod(shape))
        fine = np.empty((size, size))
        for j in range(size):
            e = np.zeros(size)
            e[j] = 1.0
            fine[:, j] = op(e.reshape(shape)).ravel()
        for level in range(1, 3):
            m = int(np.prod(hier.levels[level - 1].shape)) // (2**dim)
            eye = np.eye(m).reshape((m,) + hier.levels[level].shape)
            pcols = np.stack([prolong(row, bank, dim=dim) for row in eye])
            expected = pcols.reshape(m, -1) @ fine @ pcols.reshape(m, -1).T
            assert np.max(np.abs(hier.levels[level].matrix - expected)) < 1e-12 * np.max(np.abs(expected))
            fine = expected


def test_jacobi_damps_highest_mode_at_predicted_rate():
    n = 63
    op = poisson_operator(1, n)
    (x,) = grid_points(n, 1)
    mode = np.sin(n * np.pi * x)
    omega = 2.0 / 3.0
    out = smooth_operator(op, mode, np.zeros(n), method="jacobi", steps=1, omega=omega)
    predicted = abs(1.0 - 2.0 * omega * np.sin(np.pi * n / (2 * (n + 1))) ** 2)
    ratio = np.linalg.norm(out) / np.linalg.norm(mode)
    assert abs(ratio - predicted) < 1e-12


def test_smoother_fixed_point():
    n = 16
    op = poisson_operator(1, n)
    rng = np.random.default_rng(4)
    f = rng.normal(size=n)
    from m2no.grids import operator_matrix

    u_exact = np.linalg.solve(operator_matrix(op, (n,)).toarray(), f)
    for method in ("jacobi", "gauss_seidel"):
        out = smooth_operator(op, u_exact, f, method=method, steps=3)
        assert np.max(np.abs(out - u_exact)) < 1e-13 * np.max(np.abs(u_exact))


def test_jacobi_error_nonincreasing():
    n = 31
    op = poisson_operator(1, n)
    rng = np.random.default_rng(5)
    u = rng.normal(size=n)
    f = np.zeros(n)
    norms = [np.linalg.norm(u)]
    for _ in range(50):
        u = smooth_operator(op, u, f, method="jacobi", steps=1, omega=2.0 / 3.0)
        norms.append(np.linalg.norm(u))
    assert all(b <= a + 1e-14 for a, b in zip(norms, norms[1:]))


def test_smoother_zero_steps_and_bad_method():
    op = poisson_operator(1, 8)
    u = np.arange(8.0)
    out = smooth_operator(op, u, np.zeros(8), method="jacobi", steps=0)
    assert np.array_equal(out, u)
    with pytest.raises(ValueError):
        smooth_operator(op, u, np.zeros(8), method="sor", steps=1)


def test_v_cycle_zero_input():
    op = poisson_operator(1, 16)
    hier = build_hierarchy(op, (16,), derive_filter_bank(1), depth=2)
    out = v_cycle(hier, np.zeros(16), np.zeros(16))
    assert np.array_equal(out, np.zeros(16))


def test_v_cycle_linearity():
    op = poisson_operator(1, 32)
    hier = build_hierarchy(op, (32,), derive_filter_bank(1), depth=3)
    rng = np.random.default_rng(6)
    u1, f1 = rng.normal(size=32), rng.normal(size=32)
    u2, f2 = rng.normal(size=32), rng.normal(size=32)
    a, b = 1.3, -0.7
    lhs = v_cycle(hier, a * u1 + b * u2, a * f1 + b * f2)
    rhs = a * v_cycle(hier, u1, f1) + b * v_cycle(hier, u2, f2)
    assert np.max(np.abs(lhs - rhs)) < 1e-11


def test_two_grid_matches_dense_formula():
    # depth 1, no smoothing, exact coarse solve: u + P (P^T A P)^{-1} P^T r
    n = 8
    k = 1
    op = poisson_operator(1, n)
    bank = derive_filter_bank(k)
    hier = build_hierarchy(
        op, (n,), bank, depth=1, pre_steps=0, post_steps=0, coarse_solve="direct"
    )
    rng = np.random.default_rng(7)
    u = rng.normal(size=n)
    f = rng.normal(size=n)
    out = v_cycle(hier, u, f)
    pmat = restriction_matrix(n, bank).T
    amat = np.array([op(e) for e in np.eye(n)]).T
    r = f - amat @ u
    expected = u + pmat @ np.linalg.solve(pmat.T @ amat @ pmat, pmat.T @ r)
    assert np.max(np.abs(out - expected)) < 1e-12


def test_space_decomposition_split():
    # e = s + t with s = P (P^T A P)^{-1} P^T A e: restrict(A t) vanishes
    n = 32
    bank = derive_filter_bank(1)
    op = poisson_operator(1, n)
    amat = np.array([op(e) for e in np.eye(n)]).T
    pmat = restriction_matrix(n, bank).T
    rng = np.random.default_rng(8)
    for _ in range(10):
        e = rng.normal(size=n)
        s = pmat @ np.linalg.solve(pmat.T @ amat @ pmat, pmat.T @ (amat @ e))
        t = e - s
        assert np.max(np.abs(pmat.T @ (amat @ t))) < 1e-10
        # s lies in the range of the prolongation
        coeffs, *_ = np.linalg.lstsq(pmat, s, rcond=None)
        assert np.max(np.abs(pmat @ coeffs - s)) < 1e-10


def test_solve_converges_1d():
    n = 64
    op = poisson_operator(1, n)
    hier = build_hierarchy(op, (n,), derive_filter_bank(1), depth=4)
    rng = np.random.default_rng(9)
    f = rng.normal(size=n)
    u, trace = solve(hier, f, tol=1e-10, max_cycles=250)
    assert trace.converged
    assert np.linalg.norm(f - op(u)) / np.linalg.norm(f) <= 1e-10


def test_solve_converges_2d():
    n = 32
    op = poisson_operator(2, n)
    hier = build_hierarchy(op, (n, n), derive_filter_bank(1), depth=3)
    rng = np.random.default_rng(10)
    f = rng.normal(size=(n, n))
    u, trace = solve(hier, f, tol=1e-10, max_cycles=200)
    assert trace.converged


def test_trace_decreases_monotonically():
    n = 64
    op = poisson_operator(1, n)
    hier = build_hierarchy(op, (n,), derive_filter_bank(1), depth=3)
    for seed in range(20):
        f = np.random.default_rng(seed).normal(size=n)
        _, trace = solve(hier, f, tol=1e-10, max_cycles=40)
        res = trace.residuals
        assert all(b < a for a, b in zip(res, res[1:]))


def test_solve_zero_max_cycles_flags_unconverged():
    op = poisson_operator(1, 16)
    hier = build_hierarchy(op, (16,), derive_filter_bank(1), depth=2)
    u, trace = solve(hier, np.ones(16), tol=1e-10, max_cycles=0)
    assert not trace.converged
    assert np.array_equal(u, np.zeros(16))
    assert trace.entries[0] == (0, 1.0)


def test_scale_invariance_with_jacobi():
    n = 32
    op = poisson_operator(1, n)
    hier = build_hierarchy(op, (n,), derive_filter_bank(1), depth=2)
    alpha = 7.5
    scaled_op = type(op)(kernel=op.kernel * alpha, spacing=op.spacing)
    hier_scaled = build_hierarchy(scaled_op, (n,), derive_filter_bank(1), depth=2)
    rng = np.random.default_rng(11)
    u = rng.normal(size=n)
    f = rng.normal(size=n)
    out1 = v_cycle(hier, u, f)
    out2 = v_cycle(hier_scaled, u, alpha * f)
    assert np.max(np.abs(out1 - out2)) < 1e-11


def test_detail_energy_diagnostic():
    n = 32
    op = poisson_operator(1, n)
    hier = build_hierarchy(op, (n,), derive_filter_bank(1), depth=2)
    rng = np.random.default_rng(12)
    record = []
    v_cycle(hier, np.zeros(n), rng.normal(size=n), detail_energy=record)
    assert [level for level, _ in record] == [0, 1]
    assert all(energy >= 0 for _, energy in record)


def test_field_interface_roundtrip():
    n = 32
    op = poisson_operator(1, n)
    hier = build_hierarchy(op, (n,), derive_filter_bank(1), depth=2)
    f = Field(np.random.default_rng(13).normal(size=n), (1.0 / (n + 1),))
    u, trace = solve(hier, f, tol=1e-8, max_cycles=100)
    assert isinstance(u, Field)
    assert u.spacing == f.spacing


def test_hierarchy_validation():
    op = poisson_operator(1, 24)
    bank = derive_filter_bank(1)
    with pytest.raises(ValueError):
        build_hierarchy(op, (24,), bank, depth=0)
    with pytest.raises(ValueError):
        build_hierarchy(op, (24,), bank, depth=4)  # 24 / 2^4 not integral
    with pytest.raises(ValueError):
        build_hierarchy(op, (16,), bank, depth=2, smoother="sor")
    hier = build_hierarchy(op, (16,), bank, depth=2)
    with pytest.raises(ValueError):
        v_cycle(hier, np.zeros(8), np.zeros(8))


def test_matrix_free_level_matches_dense():
    # force the matrix-free path with a tiny crossover and compare
    n = 64
    op = poisson_operator(1, n)
    bank = derive_filter_bank(2)
    free = build_hierarchy(op, (n,), bank, depth=2, dense_crossover=4)
    dense = build_hierarchy(op, (n,), bank, depth=2)
    rng = np.random.default_rng(14)
    for level in (1, 2):
        v = rng.normal(size=free.levels[level].shape)
        a = free.levels[level].apply(v)
        b = dense.levels[level].apply(v)
        assert np.max(np.abs(a - b)) < 1e-11 * max(1.0, np.max(np.abs(b)))
        diag_free = np.broadcast_to(free.levels[level].diag, v.shape)
        diag_dense = dense.levels[level].diag.reshape(v.shape)
        assert np.max(np.abs(diag_free - diag_dense)) < 1e-11 * np.max(np.abs(diag_dense))
