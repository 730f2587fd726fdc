from math import e, log, log2, sqrt

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spdiqkd import finitekey as fk
from spdiqkd.photonics import SetupParams
from spdiqkd.protocol import TSIRELSON, binary_entropy, entropy_bound_chsh

T_GRID = np.linspace(0.75, fk.OMEGA_MAX, 201)[1:]
Q_VALUES = (0.0, 0.05, 0.2, 0.45)


def bsc_stats(S=2.6, error=0.02):
    joint = np.array([[1 - error, error], [error, 1 - error]]) / 2
    return fk.KeyStatistics(S, joint)


def reference_params(rounds, **kw):
    base = dict(n=rounds, gamma=1e-3, t=0.82, q_n=0.0, alpha_p=1.0 + 1e-4, alpha_pp=1.0 + 1e-5)
    base.update(kw)
    return fk.FiniteSizeParams(**base)


# ------------------------------------------------------------- entropy bound


def test_eta_local_edge_is_zero():
    assert fk.eta_bound(0.75, 0.0) == 0.0
    assert fk.eta_bound(0.5, 0.0) == 0.0


@pytest.mark.parametrize("q", Q_VALUES)
def test_eta_continuous_at_local_edge(q):
    # with noise only the private flip remains certain inside the local region
    assert fk.eta_bound(0.5, q) == pytest.approx(binary_entropy(q), abs=1e-15)
    assert fk.eta_bound(0.75 + 1e-12, q) == pytest.approx(fk.eta_bound(0.75, q), abs=1e-5)
    assert fk.eta_bound(0.25 - 1e-12, q) == pytest.approx(fk.eta_bound(0.25, q), abs=1e-5)


def test_eta_at_tsirelson():
    assert fk.eta_bound(fk.OMEGA_MAX, 0.0) == pytest.approx(1.0, abs=1e-12)


def test_eta_outside_domain_raises():
    with pytest.raises(ValueError):
        fk.eta_bound(fk.OMEGA_MAX + 1e-6, 0.0)
    with pytest.raises(ValueError):
        fk.eta_bound(0.1, 0.0)


@pytest.mark.parametrize("S", [2.2, 2.5, 2.8])
@pytest.mark.parametrize("q", [0.0, 0.1])
def test_eta_matches_rate_formula(S, q):
    assert fk.eta_bound((4 + S) / 8, q) == pytest.approx(entropy_bound_chsh(S, q), abs=1e-12)


def test_eta_symmetric_branches():
    for s in (0.8, 0.83, 0.85):
        assert fk.eta_bound(1 - s, 0.1) == pytest.approx(fk.eta_bound(s, 0.1), abs=1e-12)


def test_factored_variant_differs_without_noise():
    # with the noise factor outside the root the q = 0 limit gains a full bit
    s = 0.83
    assert fk.eta_bound(s, 0.0, "factored") == pytest.approx(fk.eta_bound(s, 0.0) + 1.0, abs=1e-12)
    with pytest.raises(ValueError):
        fk.eta_bound(s, 0.0, "other")


# ------------------------------------------------------------ tangent lines


def test_tangent_touches_curve():
    for t in (0.76, 0.8, 0.84):
        assert fk.g_linear(t, t, 0.1) == fk.eta_bound(t, 0.1)


@pytest.mark.parametrize("q", Q_VALUES)
def test_slope_matches_finite_difference(q):
    t, h = 0.84, 1e-6
    fd = (fk.eta_bound(t + h, q) - fk.eta_bound(t - h, q)) / (2 * h)
    assert fk.deta_dt(t, q) == pytest.approx(fd, abs=1e-6)


def test_slope_undefined_at_local_edge():
    with pytest.raises(ValueError):
        fk.g_linear(0.75, 0.8, 0.0)


@pytest.mark.parametrize("q", Q_VALUES)
def test_tangent_minorises_on_dense_grid(q):
    omegas = np.linspace(fk.OMEGA_MIN, fk.OMEGA_MAX, 200)
    eta = np.array([fk.eta_bound(w, q) for w in omegas])
    worst = np.inf
    for t in np.linspace(0.75, fk.OMEGA_MAX, 201)[1:]:
        with np.errstate(invalid="ignore"):
            gap = eta - fk.g_linear(t, omegas, q)
        gap = np.where(np.isnan(gap), np.inf, gap)
        worst = min(worst, float(gap.min()))
    assert worst >= -1e-9


@pytest.mark.parametrize("t", [0.76, 0.8, 0.84, fk.OMEGA_MAX - 1e-9])
def test_delta_vanishes_at_tangent_point(t):
    for q in Q_VALUES:
        assert abs(fk.delta(t, t, q)) <= 1e-12


# --------------------------------------------------------- tradeoff function


def test_f_affine_unit_gamma():
    f0, f1, fp = fk.f_affine(0.8, 1.0, 0.1)
    assert f0 == pytest.approx(fk.g_linear(0.8, 0.0, 0.1))
    assert f1 == fp == fk.g_linear(0.8, 1.0, 0.1)


def test_f_expectation_recovers_tangent():
    # E_q(omega)[f] = g_t(omega)
    t, gamma, q = 0.82, 0.01, 0.1
    f = fk.f_affine(t, gamma, q)
    for w in (0.2, 0.8, 0.85):
        assert fk.f_expect(f, fk.tradeoff_distribution(w, gamma)) == pytest.approx(fk.g_linear(t, w, q), rel=1e-9)


def test_point_mass_has_zero_variance():
    assert fk.f_variance(fk.f_affine(0.8, 0.1, 0.0), [0.0, 0.0, 1.0]) == 0.0


@pytest.mark.parametrize("gamma", [1e-6, 1e-3, 0.1, 0.5, 0.9])
@pytest.mark.parametrize("q", [0.0, 0.2])
def test_variance_bound_on_grid(gamma, q):
    omegas = np.linspace(fk.OMEGA_MIN, fk.OMEGA_MAX, 400)
    for t in T_GRID[::10]:
        f = fk.f_affine(t, gamma, q)
        worst = max(fk.f_variance(f, fk.tradeoff_distribution(w, gamma)) for w in omegas)
        assert worst <= fk.variance_bound(t, gamma, q) * (1 + 1e-9)


# ---------------------------------------------------------- correction terms


def test_theta_examples():
    assert fk.theta_eps(1.0) == pytest.approx(1.0)
    assert fk.theta_eps(2.0 ** -10) == pytest.approx(21.0)
    for eps in (0.1, 0.5, 0.9):
        assert fk.theta_eps(eps) >= fk.theta_eps_exact(eps)
    with pytest.raises(ValueError):
        fk.theta_eps(0.0)


def test_K_finite_near_one_and_increasing():
    assert np.isfinite(fk.K_term(1.0 + 1e-12, 0.82, 0.1))
    values = [fk.K_term(a, 0.82, 0.1) for a in np.linspace(1.0001, 1.4999, 50)]
    assert all(v > 0 for v in values)
    assert np.all(np.diff(values) > 0)
    with pytest.raises(ValueError):
        fk.K_term(2.0, 0.82, 0.1)


def test_K_uses_lower_end_of_winning_probabilities():
    t, q, a = 0.82, 0.1, 1.2
    span = 2 + fk.g_linear(t, 1.0, q) - fk.g_linear(t, fk.OMEGA_MIN, q)
    expected = 2 ** ((a - 1) * span) * log(2 ** span + e ** 2) ** 3 / (6 * (2 - a) ** 3 * log(2))
    assert fk.K_term(a, t, q) == pytest.approx(expected, rel=1e-12)


def test_V_examples():
    assert fk.V_term(0.8, 0.1, 0.0, variance=0.0) == pytest.approx(log(2) / 2 * (log2(33) + sqrt(2)) ** 2)
    vs = [fk.V_term(0.8, 0.1, 0.0, variance=v) for v in np.linspace(0, 100, 30)]
    assert np.all(np.diff(vs) > 0)


# ------------------------------------------------------------------ Lambert W


def test_lambert_examples():
    assert fk.lambert_w0(0.0) == 0.0
    assert fk.lambert_w0(e) == pytest.approx(1.0, abs=1e-15)
    w = fk.lambert_w0(1e6)
    assert abs(w * np.exp(w) - 1e6) <= 1e-12 * 1e6
    assert fk.lambert_w0(-1.0 / e) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        fk.lambert_w0(-0.5)


def test_lambert_residual_over_a_million_arguments():
    x = np.concatenate([np.geomspace(1e-300, 1e300, 999_000), -np.geomspace(1e-300, 1 / e, 1_000)])
    w = fk.lambert_w0(x)
    resid = np.abs(w * np.exp(w) - x)
    assert np.all(resid <= 1e-12 * np.maximum(1.0, np.abs(x)))


# ------------------------------------------------------------------------ Y


def test_Y_below_identity():
    b = fk.B_CONST
    assert b * (1 + log(b)) < 100
    for x in (100.0, 1e4, 1e6):
        assert fk.Y_correction(x) < x


def test_Y_monotone_and_asymptotic():
    xs = np.geomspace(1.0, 1e18, 400)
    ys = [fk.Y_correction(x) for x in xs]
    assert np.all(np.diff(ys) > 0)
    assert 0.999 <= fk.Y_correction(1e6) / 1e6 <= 1.0


def test_Y_continuous_across_large_argument_switch():
    b = fk.B_CONST
    x_switch = b * (700.0 + log(b))
    lo, hi = fk.Y_correction(x_switch * (1 - 1e-12)), fk.Y_correction(x_switch * (1 + 1e-12))
    assert hi == pytest.approx(lo, rel=1e-10)
    y = fk.Y_correction(1e8)
    assert y + b * log(y / b) == pytest.approx(1e8 - b * log(b), rel=1e-14)


# ------------------------------------------------------------- protocol glue


def test_threshold_limits():
    S = 2.5
    assert fk.omega_threshold(S, 0.01, 1e30) == pytest.approx((4 + S) / 8, abs=1e-12)
    gamma, n = 0.01, 1e10
    omega = (4 + TSIRELSON) / 8
    q = gamma * (1 - omega)
    expected_gap = 3 * sqrt(q * (1 - q) / n) / gamma
    assert omega - fk.omega_threshold(TSIRELSON, gamma, n) == pytest.approx(expected_gap, rel=1e-9)
    ks = [fk.omega_threshold(S, 0.01, 1e8, k) for k in (1, 2, 3, 4)]
    assert np.all(np.diff(ks) < 0)


def test_syndrome_examples():
    n, gamma = 1e8, 0.01
    m = fk.syndrome_length(n, gamma, 0.0, TSIRELSON)
    assert m == pytest.approx(n * gamma * binary_entropy((4 - TSIRELSON) / 8) + 50 * sqrt(n))
    assert fk.syndrome_length(n, 1e-15, 0.2, 2.5) == pytest.approx(n * 0.2 + 50 * sqrt(n), rel=1e-12)
    m1 = fk.syndrome_length(n, gamma, 0.1, 2.5)
    m4 = fk.syndrome_length(4 * n, gamma, 0.1, 2.5)
    assert m4 == pytest.approx(4 * (m1 - 50 * sqrt(n)) + 100 * sqrt(n), rel=1e-14)


# ----------------------------------------------------------------- key length


def test_default_epsilons_and_soundness():
    eps = fk.EpsilonSet()
    assert eps.soundness == pytest.approx(3e-6, rel=1e-12)


def test_epsilon_constraint():
    with pytest.raises(ValueError):
        fk.EpsilonSet(eps_s=1e-6, eps_s_p=5e-7, eps_s_pp=3e-7)
    with pytest.raises(ValueError):
        fk.EpsilonSet(eps_PA=0.0)


@pytest.mark.parametrize(
    "kw",
    [
        {"gamma": 0.0},
        {"gamma": 1.0},
        {"t": 0.75},
        {"t": fk.OMEGA_MAX + 1e-6},
        {"q_n": 0.6},
        {"alpha_p": 2.0},
        {"alpha_pp": fk.ALPHA_PP_MAX},
        {"n": 0.5},
    ],
)
def test_finite_params_validation(kw):
    with pytest.raises(ValueError):
        reference_params(1e10, **kw)


def test_small_n_has_no_key():
    kl = fk.key_length(2.7, 0.05, reference_params(1e3, gamma=0.1))
    assert kl.ell <= 0
    assert not kl.secure
    assert kl.ell == kl.l


def test_key_length_is_composition_of_terms():
    kl = fk.key_length(2.6, 0.1, reference_params(1e12))
    assert kl.l == pytest.approx(sum(kl.terms.values()), rel=1e-15)
    assert kl.ell == pytest.approx(fk.Y_correction(kl.l), rel=1e-15)
    assert kl.terms["fixed"] == -264.0
    assert kl.terms["privacy_amplification"] == pytest.approx(-5 * log2(1e6))


def test_key_length_monotone_in_n():
    ells = [fk.key_length(2.6, 0.1, reference_params(n)).ell for n in (1e8, 1e9, 1e10, 1e11)]
    assert np.all(np.diff(ells) >= 0)


# ------------------------------------------------------------- optimisation


@pytest.fixture(scope="module")
def optimum_1e10():
    return fk.optimize_finite(bsc_stats(), 1e10, n_starts=4, max_evals=1500)


def test_optimizer_dominates_fixed_point(optimum_1e10):
    stats = bsc_stats()
    for kw in ({}, {"gamma": 1e-2}, {"t": 0.8, "q_n": 0.05}):
        p = reference_params(1e10, **kw)
        assert optimum_1e10.ell >= fk.key_length(stats.S, stats.H(p.q_n), p).ell


def test_optimum_respects_intervals(optimum_1e10):
    p = optimum_1e10.params
    assert 0.0 < p.gamma < 1.0
    assert 0.75 < p.t <= fk.OMEGA_MAX
    assert 0.0 <= p.q_n <= 0.5
    assert 1.0 < p.alpha_p < 2.0
    assert 1.0 < p.alpha_pp < fk.ALPHA_PP_MAX
    assert optimum_1e10.H_A1_B3 == pytest.approx(bsc_stats().H(p.q_n))


def test_optimum_below_asymptotic(optimum_1e10):
    assert optimum_1e10.ell / 1e10 <= fk.asymptotic_reference(bsc_stats()) + 1e-6


@pytest.mark.parametrize("seed", [0, 1])
def test_test_fraction_small_at_large_n(seed):
    res = fk.optimize_finite(bsc_stats(), 1e12, n_starts=4, max_evals=1500, seed=seed)
    assert res.params.gamma < 0.25


def test_optimizer_deterministic():
    a = fk.optimize_finite(bsc_stats(), 1e9, n_starts=2, max_evals=500, seed=3)
    b = fk.optimize_finite(bsc_stats(), 1e9, n_starts=2, max_evals=500, seed=3)
    assert a.ell == b.ell and a.params == b.params


# ------------------------------------------------------------- rates per second


def test_finite_rate_per_second():
    p = SetupParams(T=0.005, nu=5e6)
    assert fk.finite_rate_per_second(-5.0, 1e8, p) == 0.0
    base = fk.finite_rate_per_second(1e6, 1e8, p)
    far = fk.finite_rate_per_second(1e6, 1e8, SetupParams(T=0.005, nu=5e6, L=100.0))
    assert far / base == pytest.approx(0.1, rel=1e-13)
    fast = fk.finite_rate_per_second(1e6, 1e8, SetupParams(T=0.005, nu=1e7))
    assert fast == pytest.approx(2 * base, rel=1e-15)


@given(st.floats(2.05, TSIRELSON), st.floats(0.0, 0.3))
def test_key_never_exceeds_asymptotic_rate(S, err):
    stats = bsc_stats(S, err)
    r_inf = fk.asymptotic_reference(stats)
    for n in (1e8, 1e11, 1e14):
        p = reference_params(n, t=min(max((4 + S) / 8 - 1e-3, 0.7501), fk.OMEGA_MAX))
        kl = fk.key_length(S, stats.H(p.q_n), p)
        assert kl.ell / n <= r_inf + 1e-6
