import numpy as np
import pytest

from vsdm import (
    BetaSchedule,
    DomainError,
    DriftGrid,
    KernelError,
    beta_d_integral,
    build_tables,
    conditional_sample,
    conditional_score,
    covariance_diagonal,
    covariance_general,
    integrate_moment_odes,
    mean_map,
)
from vsdm.kernel import KernelTables, chol_with_jitter


def const_beta(value=1.0, n_steps=10, horizon=1.0):
    return BetaSchedule(beta_min=value, beta_max=value, horizon=horizon, n_steps=n_steps)


def identity_grid(schedule, d=2):
    return DriftGrid.from_d(
        np.repeat(np.eye(d)[None], schedule.n_steps, axis=0), mode="diag-var"
    )


# -- beta_d_integral ---------------------------------------------------------


def test_beta_d_integral_identity_drift():
    sched = BetaSchedule(0.1, 10.0, n_steps=10)
    grid = identity_grid(sched)
    for t in [0.0, 0.3, 1.0]:
        np.testing.assert_allclose(
            beta_d_integral(sched, grid, t), sched.sigma2(t) * np.eye(2), rtol=1e-12
        )


def test_beta_d_integral_zero_at_origin():
    sched = BetaSchedule(0.1, 10.0, n_steps=10)
    grid = DriftGrid(n_cells=10, dim=3, mode="full-var")
    assert np.all(beta_d_integral(sched, grid, 0.0) == 0.0)


def test_beta_d_integral_scalar_case():
    # d=1, D = 2, beta = 1: integral over [0, 0.5] is 1.0
    sched = const_beta(1.0, n_steps=10)
    grid = DriftGrid.from_d(np.full((10, 1, 1), 2.0), mode="diag-var")
    np.testing.assert_allclose(beta_d_integral(sched, grid, 0.5), [[1.0]], rtol=1e-12)


def test_beta_d_integral_rejects_off_grid():
    sched = BetaSchedule(0.1, 10.0, n_steps=10)
    grid = identity_grid(sched)
    with pytest.raises(DomainError):
        beta_d_integral(sched, grid, 0.123)


# -- mean map ------------------------------------------------------------------


def test_mean_map_isotropic():
    sched = BetaSchedule(0.1, 10.0, n_steps=10)
    grid = identity_grid(sched)
    s = sched.sigma2(0.5)
    np.testing.assert_allclose(
        mean_map(sched, grid, 0.5), np.exp(-0.5 * s) * np.eye(2), rtol=1e-12
    )
    np.testing.assert_allclose(mean_map(sched, grid, 0.0), np.eye(2), rtol=1e-14)


def test_mean_map_matches_rk4():
    sched = const_beta(1.0, n_steps=10)
    grid = DriftGrid.from_d(np.full((10, 1, 1), 2.0), mode="diag-var")
    m = mean_map(sched, grid, 0.5)
    assert m[0, 0] == pytest.approx(np.exp(-0.5), rel=1e-12)
    m_oracle, _ = integrate_moment_odes(sched, grid, 0.5, substeps_per_cell=40)
    assert m[0, 0] == pytest.approx(m_oracle[0, 0], rel=1e-8)


# -- covariance ---------------------------------------------------------------


def test_covariance_isotropic_matches_scalar_vp():
    sched = BetaSchedule(0.1, 10.0, n_steps=10)
    grid = identity_grid(sched)
    s = sched.sigma2(1.0)
    _, _, sig = covariance_general(sched, grid, 1.0)
    np.testing.assert_allclose(sig, (1.0 - np.exp(-s)) * np.eye(2), rtol=1e-10)
    _, _, sig0 = covariance_general(sched, grid, 0.0)
    np.testing.assert_allclose(sig0, np.zeros((2, 2)), atol=1e-15)


def test_covariance_three_way_agreement():
    # block exponential, element-wise closed form, and RK4 integration:
    # Sigma_ii = (1 - exp(-sigma^2 lam_i)) / lam_i with sigma^2(1) = 1
    sched = const_beta(1.0, n_steps=10)
    lam = np.array([0.5, 2.0])
    grid = DriftGrid.from_d(np.repeat(np.diag(lam)[None], 10, axis=0), mode="diag-const")
    _, _, sig = covariance_general(sched, grid, 1.0)
    expected = np.diag([2.0 * (1 - np.exp(-0.5)), 0.5 * (1 - np.exp(-2.0))])
    np.testing.assert_allclose(sig, expected, rtol=1e-10)
    _, l_diag = covariance_diagonal(sched, lam, 1.0)
    np.testing.assert_allclose(l_diag**2, np.diagonal(expected), rtol=1e-10)
    _, sig_oracle = integrate_moment_odes(sched, grid, 1.0, substeps_per_cell=60)
    np.testing.assert_allclose(sig, sig_oracle, rtol=1e-8)


def test_covariance_diagonal_isotropic_reduction():
    sched = const_beta(1.0, n_steps=10)
    mean_diag, l_diag = covariance_diagonal(sched, np.ones(3), 1.0)
    np.testing.assert_allclose(l_diag, np.sqrt(1 - np.exp(-1.0)) * np.ones(3), rtol=1e-12)
    np.testing.assert_allclose(mean_diag, np.exp(-0.5) * np.ones(3), rtol=1e-12)
    mean0, l0 = covariance_diagonal(sched, np.ones(3), 0.0)
    np.testing.assert_allclose(l0, np.zeros(3), atol=1e-15)
    np.testing.assert_allclose(mean0, np.ones(3), rtol=1e-15)


def test_covariance_diagonal_floor_enforced():
    sched = const_beta(1.0)
    with pytest.raises(DomainError):
        covariance_diagonal(sched, np.array([1.0, -0.1]), 0.5)
    with pytest.raises(DomainError):
        covariance_diagonal(sched, np.array([1.0, 1e-6]), 0.5, lambda_min=1e-3)


def test_diagonal_vs_general_consistency_random():
    gen = np.random.default_rng(11)
    for _ in range(20):
        d = int(gen.integers(1, 5))
        sched = BetaSchedule(
            gen.uniform(0.05, 0.5), gen.uniform(1.0, 20.0), n_steps=8
        )
        lam = gen.uniform(0.05, 3.0, size=d)
        grid = DriftGrid.from_d(np.repeat(np.diag(lam)[None], 8, axis=0), mode="diag-const")
        t = sched.h * int(gen.integers(1, 9))
        _, _, sig = covariance_general(sched, grid, t)
        _, l_diag = covariance_diagonal(sched, lam, t)
        np.testing.assert_allclose(np.diagonal(sig), l_diag**2, rtol=1e-10)


def test_kernel_vs_ode_50_random_commuting_instances():
    # time-invariant drift: the block-exponential covariance is exact and must
    # track the RK4 oracle; the mean map is exact for diagonal time-varying too
    gen = np.random.default_rng(2024)
    for trial in range(50):
        d = int(gen.integers(1, 5))
        n_steps = int(gen.integers(4, 10))
        sched = BetaSchedule(
            gen.uniform(0.05, 0.5), gen.uniform(0.8, 15.0), n_steps=n_steps,
            horizon=gen.uniform(0.5, 1.5),
        )
        if trial % 2 == 0:
            dmat = np.diag(gen.uniform(0.1, 2.5, size=d))
            grid = DriftGrid.from_d(np.repeat(dmat[None], n_steps, axis=0), mode="diag-const")
        else:
            q, _ = np.linalg.qr(gen.standard_normal((d, d)))
            dmat = q @ np.diag(gen.uniform(0.2, 2.5, size=d)) @ q.T
            grid = DriftGrid.from_d(np.repeat(dmat[None], n_steps, axis=0), mode="full-const")
        t = sched.h * int(gen.integers(1, n_steps + 1))
        m = mean_map(sched, grid, t)
        _, _, sig = covariance_general(sched, grid, t)
        m_oracle, sig_oracle = integrate_moment_odes(sched, grid, t, substeps_per_cell=40)
        np.testing.assert_allclose(m, m_oracle, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(sig, sig_oracle, rtol=1e-6, atol=1e-9)


def test_mean_map_exact_for_diag_time_varying():
    gen = np.random.default_rng(77)
    for _ in range(10):
        d = int(gen.integers(1, 4))
        sched = BetaSchedule(0.1, gen.uniform(2.0, 12.0), n_steps=6)
        dvals = np.stack([np.diag(gen.uniform(0.2, 2.5, size=d)) for _ in range(6)])
        grid = DriftGrid.from_d(dvals, mode="diag-var")
        t = sched.h * int(gen.integers(1, 7))
        m = mean_map(sched, grid, t)
        m_oracle, _ = integrate_moment_odes(sched, grid, t, substeps_per_cell=40)
        np.testing.assert_allclose(m, m_oracle, rtol=1e-6, atol=1e-10)


def test_tables_exact_for_diag_time_varying_covariance():
    # the per-cell recursion in build_tables is exact where the single block
    # exponential is not (D changing across cells)
    gen = np.random.default_rng(78)
    sched = BetaSchedule(0.1, 10.0, n_steps=8)
    dvals = np.stack([np.diag(gen.uniform(0.2, 2.5, size=2)) for _ in range(8)])
    grid = DriftGrid.from_d(dvals, mode="diag-var")
    tables = build_tables(sched, grid)
    for n in (1, 4, 8):
        _, sig_oracle = integrate_moment_odes(sched, grid, tables.times[n], substeps_per_cell=60)
        np.testing.assert_allclose(tables.sigma[n], sig_oracle, rtol=1e-7, atol=1e-12)


def test_covariance_eigenvalue_cap():
    # with Sigma_0 = 0 the largest eigenvalue stays below 1/lambda_min
    gen = np.random.default_rng(5)
    sched = BetaSchedule(0.1, 10.0, n_steps=10)
    for _ in range(10):
        lam = gen.uniform(0.2, 2.0, size=3)
        grid = DriftGrid.from_d(np.repeat(np.diag(lam)[None], 10, axis=0), mode="diag-const")
        for n in range(1, 11):
            _, _, sig = covariance_general(sched, grid, n * sched.h)
            evals = np.linalg.eigvalsh(sig)
            assert np.all(evals > 0.0)
            assert np.all(evals <= 1.0 / lam.min() + 1e-9)


def test_singular_h_raises_kernel_error():
    # a wildly negative drift over a long horizon overflows H
    sched = const_beta(30.0, n_steps=4, horizon=30.0)
    grid = DriftGrid.from_d(np.full((4, 1, 1), -3.0), mode="diag-var", lambda_min=1e-12)
    with pytest.raises((KernelError, FloatingPointError)):
        with np.errstate(over="raise", invalid="raise"):
            covariance_general(sched, grid, 30.0)


# -- drift grid ----------------------------------------------------------------


def test_a_d_round_trip_exact_all_modes():
    # one normalization pass may round the last bit for D entries below 1/2
    # (1 - d is not representable there); after that the representation is a
    # bitwise fixed point in every mode, and exact outright for D >= 1/2
    gen = np.random.default_rng(3)
    for mode in ("diag-const", "diag-var", "full-const", "full-var"):
        d = 3
        if mode.startswith("diag"):
            dvals = np.stack([np.diag(gen.uniform(0.1, 2.0, size=d)) for _ in range(5)])
        else:
            dvals = gen.uniform(-1.0, 1.0, size=(5, d, d)) + 2.0 * np.eye(d)
        if mode.endswith("const"):
            dvals = np.repeat(dvals[:1], 5, axis=0)
        grid = DriftGrid.from_d(dvals, mode=mode)
        d_once = grid.d_all()
        np.testing.assert_allclose(d_once, dvals, rtol=0, atol=6e-17)
        rebuilt = DriftGrid.from_d(d_once, mode=mode)
        np.testing.assert_array_equal(rebuilt.a, grid.a)
        np.testing.assert_array_equal(rebuilt.d_all(), d_once)

    # exact in one pass when all entries of D sit at or above 1/2
    dvals = np.stack([np.diag(gen.uniform(0.5, 2.0, size=3)) for _ in range(4)])
    grid = DriftGrid.from_d(dvals, mode="diag-var")
    np.testing.assert_array_equal(grid.d_all(), dvals)


def test_projection_clamps_diagonal_floor():
    grid = DriftGrid.from_d(np.full((3, 1, 1), 1e-4), mode="diag-var", lambda_min=1e-3)
    grid.project()
    np.testing.assert_allclose(grid.d_all(), np.full((3, 1, 1), 1e-3))


def test_projection_full_mode_shifts_spectrum():
    a = np.array([[[0.6, 0.3], [-0.3, 0.6]]])
    grid = DriftGrid(n_cells=1, dim=2, mode="full-var", lambda_min=1e-3, a=a)
    grid.project()
    sym = 0.5 * (grid.d_at(0) + grid.d_at(0).T)
    assert np.linalg.eigvalsh(sym).min() >= 1e-3 - 1e-12


# -- conditional sample / score -------------------------------------------------


def make_manual_tables(m, l):
    m = np.asarray(m, dtype=float)
    l = np.asarray(l, dtype=float)
    d = m.shape[0]
    linv = np.linalg.inv(l).T if np.linalg.det(l) != 0 else np.full((d, d), np.nan)
    return KernelTables(
        times=np.array([0.0, 1.0]),
        mean=np.stack([np.eye(d), m]),
        sigma=np.stack([np.zeros((d, d)), l @ l.T]),
        l=np.stack([np.zeros((d, d)), l]),
        l_inv_t=np.stack([np.full((d, d), np.nan), linv]),
        beta=np.array([1.0, 1.0]),
        dmat=np.stack([np.eye(d), np.eye(d)]),
        dim=d,
    )


def test_conditional_sample_affine_arithmetic():
    tables = make_manual_tables([[0.5]], [[0.2]])
    assert conditional_sample(tables, 1, np.array([2.0]), np.array([1.0]))[0] == pytest.approx(1.2)
    assert conditional_sample(tables, 1, np.array([2.0]), np.array([0.0]))[0] == pytest.approx(1.0)
    # node 0 returns x0 exactly
    assert conditional_sample(tables, 0, np.array([2.0]), np.array([5.0]))[0] == pytest.approx(2.0)


def test_conditional_score_zero_at_mean_and_diag_case():
    l = np.diag([0.5, 1.0])  # Sigma = diag(0.25, 1)
    tables = make_manual_tables(np.eye(2), l)
    x0 = np.array([0.3, -0.2])
    mu = x0.copy()
    np.testing.assert_allclose(conditional_score(tables, 1, mu, x0), np.zeros(2), atol=1e-14)
    np.testing.assert_allclose(
        conditional_score(tables, 1, mu + np.array([1.0, 2.0]), x0), [-4.0, -2.0], rtol=1e-12
    )


def test_conditional_score_matches_isotropic_formula():
    sched = BetaSchedule(0.1, 10.0, n_steps=10)
    grid = identity_grid(sched)
    tables = build_tables(sched, grid)
    gen = np.random.default_rng(8)
    x0 = gen.standard_normal(2)
    x_t = gen.standard_normal(2)
    n = 6
    s = sched.sigma2(tables.times[n])
    mu = np.exp(-0.5 * s) * x0
    expected = -(x_t - mu) / (1.0 - np.exp(-s))
    np.testing.assert_allclose(conditional_score(tables, n, x_t, x0), expected, rtol=1e-10)


def test_conditional_score_finite_difference_200_points():
    sched = BetaSchedule(0.1, 10.0, n_steps=8)
    gen = np.random.default_rng(17)
    dvals = np.stack([np.diag(gen.uniform(0.3, 2.0, size=3)) for _ in range(8)])
    grid = DriftGrid.from_d(dvals, mode="diag-var")
    tables = build_tables(sched, grid)

    def log_density(x, n, x0):
        mu = tables.mean[n] @ x0
        sig = tables.sigma[n]
        resid = x - mu
        return -0.5 * resid @ np.linalg.solve(sig, resid)

    step = 1e-5
    worst = 0.0
    for _ in range(200):
        n = int(gen.integers(1, 9))
        x0 = gen.standard_normal(3)
        x = gen.standard_normal(3)
        score = conditional_score(tables, n, x, x0)
        fd = np.zeros(3)
        for i in range(3):
            e = np.zeros(3)
            e[i] = step
            fd[i] = (log_density(x + e, n, x0) - log_density(x - e, n, x0)) / (2 * step)
        worst = max(worst, np.max(np.abs(fd - score) / (np.abs(score) + 1.0)))
    assert worst <= 1e-5


def test_whitened_noise_identity_200_draws():
    sched = BetaSchedule(0.1, 10.0, n_steps=10)
    gen = np.random.default_rng(23)
    dvals = np.stack([np.diag(gen.uniform(0.3, 2.0, size=2)) for _ in range(10)])
    grid = DriftGrid.from_d(dvals, mode="diag-var")
    tables = build_tables(sched, grid)
    for _ in range(200):
        n = int(gen.integers(1, 11))
        x0 = gen.standard_normal(2)
        eps = gen.standard_normal(2)
        x_t = conditional_sample(tables, n, x0, eps)
        lhs = conditional_score(tables, n, x_t, x0)
        rhs = -tables.l_inv_t[n] @ eps
        np.testing.assert_allclose(lhs, rhs, atol=1e-9, rtol=1e-9)


def test_conditional_score_rejects_node_zero():
    sched = BetaSchedule(0.1, 10.0, n_steps=4)
    tables = build_tables(sched, identity_grid(sched))
    with pytest.raises(DomainError):
        conditional_score(tables, 0, np.zeros(2), np.zeros(2))


def test_chol_jitter_paths():
    good = np.array([[1.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(chol_with_jitter(good) @ chol_with_jitter(good).T, good, rtol=1e-12)
    # symmetric rounding: tiny negative eigenvalue gets rescued once
    eps_neg = np.array([[1.0, 1.0], [1.0, 1.0 - 1e-15]])
    l = chol_with_jitter(eps_neg)
    assert np.all(np.isfinite(l))
    with pytest.raises(KernelError):
        chol_with_jitter(np.array([[1.0, 0.0], [0.0, -0.5]]))


def test_build_tables_reconstructs_sigma():
    sched = BetaSchedule(0.1, 10.0, n_steps=10)
    gen = np.random.default_rng(31)
    q, _ = np.linalg.qr(gen.standard_normal((3, 3)))
    dmat = q @ np.diag([0.4, 1.0, 2.2]) @ q.T
    grid = DriftGrid.from_d(np.repeat(dmat[None], 10, axis=0), mode="full-const")
    tables = build_tables(sched, grid)
    for n in range(1, tables.n_nodes):
        sig = tables.sigma[n]
        np.testing.assert_allclose(sig, sig.T, atol=1e-12)
        rel = np.linalg.norm(tables.l[n] @ tables.l[n].T - sig) / np.linalg.norm(sig)
        assert rel <= 1e-10
