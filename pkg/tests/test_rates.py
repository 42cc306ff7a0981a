import cmath

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from fbkit.operators import DenseOp, IdentityOp, SmoothTerm
from fbkit.rates import (
    RestrictedMatrices,
    best_rates,
    build_restricted,
    convergence_condition,
    eta_spectrum,
    explicit_M,
    linearized_distance_trace,
    optimal_inertia,
    oscillation_period,
    rate_curve,
    rate_report,
    region_map,
    sigma_roots,
    spectral_radius,
)
from fbkit.regularizers import GroupNorm, L1Norm, Support
from fbkit.solver import Problem


def make_rm(h, u=None, gamma=1.0, alpha=0.0, beta=1.0, polyhedral=None):
    h = np.atleast_2d(np.asarray(h, dtype=float))
    d = h.shape[0]
    u = np.zeros((d, d)) if u is None else np.asarray(u, dtype=float)
    w = scipy.linalg.inv(np.eye(d) + u)
    return RestrictedMatrices(
        d=d, H=h, G=np.eye(d) - h, U=u, W=0.5 * (w + w.T), gamma=gamma,
        alpha=alpha, beta=beta,
        polyhedral=bool(np.allclose(u, 0)) if polyhedral is None else polyhedral,
    )


def random_system(rng, d, polyhedral=False, gamma_ratio=1.0):
    """Valid restricted system: H with eigenvalues in ]0, gamma_ratio]."""
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    hvals = rng.uniform(0.05, 1.0, d) * gamma_ratio
    h = (q * hvals) @ q.T
    if polyhedral:
        u = np.zeros((d, d))
    else:
        b = rng.standard_normal((d, d)) * 0.4
        u = b @ b.T
    return make_rm(h, u)


# ---------------------------------------------------------------------------
# build_restricted


def test_build_restricted_polyhedral_has_identity_w():
    rng = np.random.default_rng(1)
    L = rng.standard_normal((10, 6))
    prob = Problem(SmoothTerm(DenseOp(L), np.zeros(10)), L1Norm(1.0))
    x = np.zeros(6)
    x[[1, 3]] = [1.0, -2.0]
    rm = build_restricted(prob, x, prob.reg.signature(x), gamma=prob.smooth.beta)
    assert np.allclose(rm.U, 0.0)
    assert np.allclose(rm.W, np.eye(rm.d))
    assert np.allclose(rm.G, np.eye(rm.d) - rm.H)


def test_build_restricted_identity_gamma_one():
    prob = Problem(SmoothTerm(IdentityOp(3), np.zeros(3), beta=1.0), L1Norm(1.0))
    x = np.array([1.0, 0.0, -1.0])
    rm = build_restricted(prob, x, prob.reg.signature(x), gamma=1.0)
    assert np.allclose(rm.H, np.eye(2))
    assert np.allclose(rm.G, 0.0)


def test_build_restricted_group_matches_analytic_assembly():
    rng = np.random.default_rng(2)
    blocks = [(0, 1), (2, 3), (4, 5)]
    reg = GroupNorm(1.4, blocks)
    L = rng.standard_normal((8, 6))
    prob = Problem(SmoothTerm(DenseOp(L), np.zeros(8)), reg)
    x = np.zeros(6)
    x[0:2] = [1.0, 2.0]
    x[4:6] = [-1.0, 0.5]
    sig = reg.signature(x)
    gamma = prob.smooth.beta
    rm = build_restricted(prob, x, sig, gamma)
    # oracle: apply the analytic block formula to each basis column
    basis = reg.tangent_basis(sig)
    cols = []
    for j in range(basis.dim):
        v = basis.matrix[:, j]
        out = np.zeros(6)
        for bi in sig.blocks:
            idx = list(blocks[bi])
            xb, vb = x[idx], v[idx]
            nb = np.linalg.norm(xb)
            out[idx] = reg.lam * (vb - (xb @ vb) / nb**2 * xb) / nb
        cols.append(out)
    expected = gamma * basis.matrix.T @ np.column_stack(cols)
    assert np.allclose(rm.U, expected, atol=1e-12)
    vals = scipy.linalg.eigvalsh(rm.U)
    assert vals[0] >= -1e-10  # symmetric PSD
    wvals = scipy.linalg.eigvalsh(rm.W)
    assert 0 < wvals[0] and wvals[-1] <= 1.0 + 1e-12


def test_restricted_invariants_h_eigen_range(lasso_setup):
    problem, _x_ob, x_star, sig_star = lasso_setup
    beta = problem.smooth.beta
    for gamma in [beta, 1.5 * beta]:
        rm = build_restricted(problem, x_star, sig_star, gamma)
        hvals = scipy.linalg.eigvalsh(rm.H)
        assert hvals[0] >= gamma * rm.alpha - 1e-8
        assert hvals[-1] <= gamma / rm.beta + 1e-8
        etas = eta_spectrum(rm)
        assert etas[0] > -1.0 + 1e-12 and etas[-1] < 1.0
        if gamma <= beta:
            assert etas[0] >= -1e-8  # in [0, 1[ for gamma <= beta


# ---------------------------------------------------------------------------
# eta spectrum


def test_eta_spectrum_diagonal_case():
    rm = make_rm(np.diag([0.3, 0.8]))  # G = diag(0.7, 0.2), W = Id
    assert np.allclose(eta_spectrum(rm), [0.2, 0.7])


def test_eta_spectrum_zero_g():
    rm = make_rm(np.eye(3))
    assert np.allclose(eta_spectrum(rm), 0.0)


def test_eta_spectrum_matches_nonsymmetric_eigensolve():
    rng = np.random.default_rng(3)
    for _ in range(10):
        rm = random_system(rng, 6)
        etas = eta_spectrum(rm)
        general = np.sort(np.linalg.eigvals(rm.W @ rm.G).real)
        assert np.allclose(etas, general, atol=1e-9)


# ---------------------------------------------------------------------------
# sigma roots and spectral radius


def test_sigma_roots_fb_case():
    r1, r2 = sigma_roots(0.55, 0.0, 0.0)
    assert {round(abs(r1), 12), round(abs(r2), 12)} == {0.55, 0.0}


def test_sigma_roots_unit_inertia_modulus_sqrt_eta():
    for eta in [0.1, 0.5, 0.9]:
        r1, r2 = sigma_roots(eta, 1.0, 1.0)
        assert abs(r1) == pytest.approx(np.sqrt(eta), abs=1e-12)
        assert abs(r2) == pytest.approx(np.sqrt(eta), abs=1e-12)


def test_sigma_roots_frozen_complex_example():
    r1, r2 = sigma_roots(0.75, 0.6, 0.6)
    assert r1 == pytest.approx(0.6 + 0.3j, abs=1e-12)
    assert r2 == pytest.approx(0.6 - 0.3j, abs=1e-12)
    assert abs(r1) == pytest.approx(np.sqrt(0.45), abs=1e-12)


@given(st.floats(-0.99, 0.99), st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=150, deadline=None)
def test_sigma_roots_satisfy_quadratic(eta, a, b):
    for s in sigma_roots(eta, a, b):
        val = s * s - ((a - b) + (1 + b) * eta) * s + (a - b) + b * eta
        assert abs(val) <= 1e-9


def test_spectral_radius_examples():
    rho, _ = spectral_radius([0.7], 0.0, 0.0)
    assert rho == pytest.approx(0.7)
    rho, sigma = spectral_radius([0.75], 1.0 / 3.0, 1.0 / 3.0)
    assert rho == pytest.approx(0.5, abs=1e-12)


def test_spectral_radius_matches_explicit_m():
    rm = make_rm(np.diag([0.8, 0.3]))  # etas {0.2, 0.7}, W = Id
    rho, _ = spectral_radius([0.2, 0.7], 0.5, 0.5)
    m = explicit_M(rm, 0.5, 0.5)
    rho_m = np.max(np.abs(np.linalg.eigvals(m)))
    assert rho == pytest.approx(rho_m, abs=1e-10)


def test_rho_from_extremes_only():
    rng = np.random.default_rng(4)
    for _ in range(20):
        etas = np.sort(rng.uniform(-0.6, 0.95, 7))
        a = rng.uniform(0, 1)
        b = rng.uniform(0, 1)
        rho_all, _ = spectral_radius(etas, a, b)
        rho_ext, _ = spectral_radius([etas[0], etas[-1]], a, b)
        assert rho_all == pytest.approx(rho_ext, abs=1e-12)


# ---------------------------------------------------------------------------
# explicit iteration matrix


def test_explicit_m_fb_blocks():
    rm = make_rm(np.diag([0.4, 0.9]))
    m = explicit_M(rm, 0.0, 0.0)
    wg = rm.W @ rm.G
    assert np.allclose(m[:2, :2], wg)
    assert np.allclose(m[:2, 2:], 0.0)
    assert np.allclose(m[2:, :2], np.eye(2))
    assert np.allclose(m[2:, 2:], 0.0)


def test_explicit_m_companion_1d():
    rm = make_rm([[1.0 - 0.65]])  # G = eta = 0.65, W = 1
    a = 0.4
    m = explicit_M(rm, a, a)
    assert np.allclose(m, [[(1 + a) * 0.65, -a * 0.65], [1.0, 0.0]])


def _match_multisets(pred, eig, tol):
    eig = list(eig)
    for s in pred:
        j = int(np.argmin([abs(s - e) for e in eig]))
        assert abs(s - eig[j]) <= tol
        eig.pop(j)


def test_explicit_m_eigenvalues_match_sigma_roots_seeded():
    rng = np.random.default_rng(5)
    for trial in range(50):
        d = int(rng.integers(1, 9))
        same_ab = trial % 2 == 0
        rm = random_system(rng, d, polyhedral=not same_ab)
        a = float(rng.uniform(0, 1))
        b = a if same_ab else float(rng.uniform(0, 1))
        etas = eta_spectrum(rm)
        pred = [s for eta in etas for s in sigma_roots(float(eta), a, b)]
        eig = np.linalg.eigvals(explicit_M(rm, a, b))
        _match_multisets(pred, eig, 1e-9)


def test_explicit_m_eigenvector_structure():
    rng = np.random.default_rng(6)
    rm = random_system(rng, 5)
    m = explicit_M(rm, 0.45, 0.45)
    vals, vecs = np.linalg.eig(m)
    for i in range(vals.size):
        v = vecs[:, i]
        r1, r2 = v[:5], v[5:]
        assert np.linalg.norm(r1 - vals[i] * r2) <= 1e-8 * np.linalg.norm(v)


# ---------------------------------------------------------------------------
# convergence conditions


def test_convergence_condition_examples():
    assert convergence_condition(0.0, 0.3, 0.3)  # a = b, eta_min >= 0
    assert convergence_condition(-0.99, 0.0, 0.0)
    assert not convergence_condition(0.2, 0.0, 1.0)  # 1/3 > 0.2


def test_convergence_condition_cross_checked_against_m():
    rm = make_rm([[1.0 - 0.2]])  # single eta = 0.2
    m = explicit_M(rm, 0.0, 1.0)
    rho = np.max(np.abs(np.linalg.eigvals(m)))
    assert rho >= 1.0
    assert not convergence_condition(0.2, 0.0, 1.0)


def test_convergence_condition_iff_rho_below_one():
    rng = np.random.default_rng(7)
    for _ in range(60):
        eta = float(rng.uniform(-0.95, 0.95))
        a = float(rng.uniform(0, 1))
        b = float(rng.uniform(0, 1))
        rho, _ = spectral_radius([eta], a, b)
        cond = convergence_condition(eta, a, b)
        if abs(rho - 1.0) > 1e-9:  # skip the boundary itself
            assert cond == (rho < 1.0)


# ---------------------------------------------------------------------------
# oscillation period


def test_oscillation_period_values():
    p = oscillation_period(complex(0.6, 0.3))
    theta = cmath.phase(complex(0.6, 0.3))
    assert theta == pytest.approx(0.46365, abs=1e-5)
    assert p == pytest.approx(6.7753, abs=1e-3)
    assert oscillation_period(complex(0.8, 0.0)) is None


def test_oscillation_threshold_in_a():
    eta = 0.75
    a_crit = (1 - np.sqrt(1 - eta)) ** 2 / eta
    _, s_below = spectral_radius([eta], a_crit - 1e-3, a_crit - 1e-3)
    _, s_above = spectral_radius([eta], a_crit + 1e-3, a_crit + 1e-3)
    assert oscillation_period(s_below) is None
    assert oscillation_period(s_above) is not None


def test_oscillation_period_from_linear_dynamics():
    rng = np.random.default_rng(8)
    rm = make_rm([[1.0 - 0.75]])
    m = explicit_M(rm, 0.6, 0.6)
    dist = linearized_distance_trace(m, rng.standard_normal(2), 200)
    logd = np.log(dist[20:])
    minima = [i for i in range(1, logd.size - 1)
              if logd[i] <= logd[i - 1] and logd[i] < logd[i + 1]]
    spacing = np.median(np.diff(minima))
    assert abs(spacing - np.pi / cmath.phase(complex(0.6, 0.3))) <= 1.0


# ---------------------------------------------------------------------------
# optimal inertia and best rates


def test_optimal_inertia_examples():
    a_opt, rho_opt = optimal_inertia(0.75)
    assert a_opt == pytest.approx(1.0 / 3.0)
    assert rho_opt == pytest.approx(0.5)
    assert optimal_inertia(0.0) == (0.0, 0.0)
    a_b0, rho_b0 = optimal_inertia(0.75, b=0.0)
    assert a_b0 == pytest.approx(0.25)
    assert rho_b0 == pytest.approx(0.5)
    with pytest.raises(ValueError):
        optimal_inertia(1.0)


def test_best_rates_quarter():
    r = best_rates(0.25, 1.0)
    assert r["rho_star_gamma_beta"] == pytest.approx(0.5)
    assert r["rho_underline"] == pytest.approx(1.0 / 3.0)
    assert r["gamma_underline"] == pytest.approx(4.0 / 2.25)
    assert r["a_underline"] == pytest.approx((1.0 / 3.0) ** 2)
    assert r["rho_fb_opt"] == pytest.approx(0.6)
    assert r["gamma_fb_opt"] == pytest.approx(2.0 / 1.25)


def test_best_rates_edge_cases():
    r = best_rates(1.0, 1.0)
    assert r["rho_star_gamma_beta"] == 0.0
    assert r["rho_underline"] == 0.0
    assert best_rates(0.04, 1.0)["rho_underline"] == pytest.approx(2.0 / 3.0)
    with pytest.raises(ValueError):
        best_rates(1.5, 1.0)


def test_rate_curve_anchors_and_shape():
    eta = 0.75
    grid = np.linspace(0, 1, 101)
    curve = dict(rate_curve(eta, grid))
    assert curve[0.0] == pytest.approx(eta)
    assert curve[1.0] == pytest.approx(np.sqrt(eta), abs=1e-12)
    a_opt, rho_opt = optimal_inertia(eta)
    rho_at_opt, _ = spectral_radius([eta], a_opt, a_opt)
    assert rho_at_opt == pytest.approx(rho_opt, abs=1e-12)
    for a, rho in curve.items():
        if a <= eta:
            assert rho <= eta + 1e-12
        else:
            assert rho >= eta - 1e-12
    rhos = [curve[a] for a in grid]
    assert min(rhos) >= rho_opt - 1e-12


# ---------------------------------------------------------------------------
# region map


def test_region_map_cells():
    cells = region_map(1.0, 0.01, [0.0, 1.0], [0.0, 1.0])
    by_ab = {(a, b): (br, fe) for a, b, br, fe in cells}
    assert by_ab[(0.0, 0.0)] == (2, True)  # margin 0.5 > 0.01
    assert by_ab[(1.0, 1.0)][1] is False


def test_region_feasible_count_shrinks_with_gamma():
    grid = np.linspace(0, 1, 200)
    n_beta = sum(1 for c in region_map(1.0, 0.01, grid, grid) if c[3])
    n_big = sum(1 for c in region_map(1.25, 0.01, grid, grid) if c[3])
    assert n_big < n_beta


# ---------------------------------------------------------------------------
# linearized dynamics slope law


def test_linearized_slope_matches_log_rho():
    rng = np.random.default_rng(9)
    for _ in range(5):
        rm = random_system(rng, 4)
        a = float(rng.uniform(0, 0.4))
        etas = eta_spectrum(rm)
        rho, sigma = spectral_radius(etas, a, a)
        mods = sorted(abs(s) for eta in etas for s in sigma_roots(float(eta), a, a))
        if mods[-1] - mods[-2] < 1e-3 or sigma.imag != 0:
            continue  # need a simple, real dominant eigenvalue
        m = explicit_M(rm, a, a)
        dist = linearized_distance_trace(m, rng.standard_normal(2 * rm.d), 500)
        slope = np.polyfit(np.arange(200, 501), np.log(dist[200:]), 1)[0]
        assert slope == pytest.approx(np.log(rho), abs=1e-3)


def test_rate_report_fields(group_setup):
    problem, _x_ob, x_star, sig_star = group_setup
    gamma = problem.smooth.beta
    rm = build_restricted(problem, x_star, sig_star, gamma)
    rep = rate_report(rm, 0.0, 0.0)
    assert rep.converges
    assert rep.rho == pytest.approx(rep.eta_max, abs=1e-12)  # FB rate = eta_bar
    assert rep.oscillation_period is None
    assert rep.regime == "analyzed"
    rep2 = rate_report(rm, 0.1, 0.3)
    assert rep2.regime == "outside analyzed regime"
    d = rep2.to_dict()
    assert d["sigma_max"]["re"] == rep2.sigma_max.real
