"""Finite-size key length from the entropy accumulation bound.

The per-round entropy is lower bounded by the CHSH bound ``eta(s)`` with
noisy preprocessing. Tangents ``g_t`` of ``eta`` give affine min-tradeoff
functions whose second-order corrections ``V`` and ``K`` enter the key length

    l = n g_t(omega_thr) - (alpha' - 1) V - n (alpha' - 1)^2 K - n gamma
        - n (alpha'' - 1) log2(5)^2 - smoothing terms - m - 264,

and the final length is ``ell = Y_b(l)``. All logarithms are base 2 unless
written ``ln``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from math import e, log, log2, sqrt

import numpy as np
from scipy.special import lambertw

from .optimizer import SearchSpec, maximize
from .photonics import SetupParams, heralding_probability
from .protocol import (
    TSIRELSON,
    binary_entropy,
    conditional_entropy_from_joint,
    optimize_q,
)

log_ = logging.getLogger(__name__)

OMEGA_MIN = (1.0 - 1.0 / sqrt(2.0)) / 2.0
OMEGA_MAX = (1.0 + 1.0 / sqrt(2.0)) / 2.0
LOCAL_REGION = (0.25, 0.75)
B_CONST = 4.0 / log(2.0)
LOG2_5 = log2(5.0)
LOG2_33 = log2(33.0)
ALPHA_PP_MAX = 1.0 + 1.0 / LOG2_5

FIXED_OVERHEAD_BITS = 264.0
SYNDROME_SLACK = 50.0
COMPLETENESS_K = 3.0
EPS_HASH = 2.0 ** -61
COMPLETENESS_TARGET = 1e-2


# ------------------------------------------------------------------ entropy


def _check_s(s: float) -> None:
    if not OMEGA_MIN - 1e-15 <= s <= OMEGA_MAX + 1e-15:
        raise ValueError(f"winning probability {s} outside [{OMEGA_MIN:.6f}, {OMEGA_MAX:.6f}]")


def eta_bound(s: float, q_n: float, variant: str = "main") -> float:
    """CHSH entropy bound as a function of the winning probability ``s``.

    On ``[1/4, 3/4]`` only the private bit flip is certain, which leaves
    ``h(q)`` (zero without noise); this is also the limit of the outer
    branches at the edges, so ``eta`` is continuous. Elsewhere in
    ``[omega_min, omega_max]``

        1 - h((1 + sqrt(16 s^2 - 16 s + 3)) / 2)
          + h((1 + sqrt(1 - q (1 - q)(64 s - 64 s^2 - 8))) / 2).

    ``variant="factored"`` takes the noise factor outside the square root,
    ``h((1 + q (1 - q) sqrt(64 s - 64 s^2 - 8)) / 2)``, for comparison only.
    """
    _check_s(s)
    if LOCAL_REGION[0] <= s <= LOCAL_REGION[1]:
        return float(binary_entropy(q_n))
    u = (1.0 + sqrt(max(16.0 * s * s - 16.0 * s + 3.0, 0.0))) / 2.0
    c = max(64.0 * s - 64.0 * s * s - 8.0, 0.0)
    noise = q_n * (1.0 - q_n)
    if variant == "main":
        v = (1.0 + sqrt(max(1.0 - noise * c, 0.0))) / 2.0
    elif variant == "factored":
        v = (1.0 + noise * sqrt(c)) / 2.0
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return 1.0 - binary_entropy(u) + binary_entropy(v)


def _dh(x: float) -> float:
    """``h'(x) = log2((1 - x) / x)``; ``-inf`` at ``x = 1``."""
    if x >= 1.0:
        return -np.inf
    return log2((1.0 - x) / x)


def deta_dt(t: float, q_n: float) -> float:
    """Analytic slope of :func:`eta_bound` on the nonlocal branches."""
    _check_s(t)
    if t == 0.75 or t == 0.25:
        raise ValueError("eta is not differentiable at the edge of the local region")
    if LOCAL_REGION[0] < t < LOCAL_REGION[1]:
        return 0.0
    r1 = sqrt(max(16.0 * t * t - 16.0 * t + 3.0, 0.0))
    noise = q_n * (1.0 - q_n)
    r2 = sqrt(max(1.0 - noise * (64.0 * t - 64.0 * t * t - 8.0), 0.0))
    u, v = (1.0 + r1) / 2.0, (1.0 + r2) / 2.0
    du = (8.0 * t - 4.0) / r1
    dv = -noise * (16.0 - 32.0 * t) / r2 if noise > 0 else 0.0
    with np.errstate(invalid="ignore"):
        slope = -_dh(u) * du + (_dh(v) * dv if dv != 0.0 else 0.0)
    return float(slope)


def g_linear(t: float, omega, q_n: float):
    """Tangent of ``eta`` at ``t`` evaluated at ``omega``."""
    slope = deta_dt(t, q_n)
    omega = np.asarray(omega, dtype=float)
    with np.errstate(invalid="ignore"):
        out = eta_bound(t, q_n) + (omega - t) * slope
    out = np.where(omega == t, eta_bound(t, q_n), out)
    return float(out) if out.ndim == 0 else out


def delta(t: float, omega: float, q_n: float) -> float:
    """``eta(omega) - g_t(omega)``; zero at ``omega = t`` by construction."""
    if omega == t:
        return 0.0
    return eta_bound(omega, q_n) - g_linear(t, omega, q_n)


# --------------------------------------------------------- tradeoff function


def f_affine(t: float, gamma: float, q_n: float) -> tuple[float, float, float]:
    """Values of the min-tradeoff function on ``delta_0, delta_1, delta_perp``."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    g0 = g_linear(t, 0.0, q_n)
    g1 = g_linear(t, 1.0, q_n)
    return g0 / gamma + (1.0 - 1.0 / gamma) * g1, g1, g1


def tradeoff_distribution(omega: float, gamma: float) -> np.ndarray:
    """``q(omega) = (gamma (1 - omega), gamma omega, 1 - gamma)``."""
    return np.array([gamma * (1.0 - omega), gamma * omega, 1.0 - gamma])


def f_expect(fvals, p) -> float:
    return float(np.dot(p, fvals))


def f_variance(fvals, p) -> float:
    fvals = np.asarray(fvals, dtype=float)
    mean = f_expect(fvals, p)
    return float(max(np.dot(p, fvals ** 2) - mean ** 2, 0.0))


def variance_bound(t: float, gamma: float, q_n: float) -> float:
    """Upper bound ``(2 + sqrt 2) / (4 gamma) (g_t(1) - g_t(0))^2`` on the variance over ``Q``."""
    g0 = g_linear(t, 0.0, q_n)
    g1 = g_linear(t, 1.0, q_n)
    return (2.0 + sqrt(2.0)) / (4.0 * gamma) * (g1 - g0) ** 2


# ------------------------------------------------------------ correction terms


def theta_eps(eps: float) -> float:
    """Upper bound ``log2(2 / eps^2)`` of the smoothing cost."""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {eps}")
    return log2(2.0 / (eps * eps))


def theta_eps_exact(eps: float) -> float:
    """``log2(1 / (1 - sqrt(1 - eps^2)))`` in a cancellation-free form."""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {eps}")
    return log2((1.0 + sqrt(1.0 - eps * eps)) / (eps * eps))


def K_term(alpha_p: float, t: float, q_n: float) -> float:
    """Third-order correction of the entropy accumulation bound."""
    if not 1.0 < alpha_p < 2.0:
        raise ValueError(f"alpha' must lie in (1, 2), got {alpha_p}")
    span = 2.0 + g_linear(t, 1.0, q_n) - g_linear(t, OMEGA_MIN, q_n)
    # ln(2^span + e^2) without overflow
    ln_arg = float(np.logaddexp(span * log(2.0), 2.0))
    with np.errstate(over="ignore"):
        pref = float(np.exp2((alpha_p - 1.0) * span))
    return pref * ln_arg ** 3 / (6.0 * (2.0 - alpha_p) ** 3 * log(2.0))


def V_term(t: float, gamma: float, q_n: float, variance: float | None = None) -> float:
    """Second-order correction at the worst-case variance.

    ``variance`` overrides the bound from :func:`variance_bound`.
    """
    var = variance_bound(t, gamma, q_n) if variance is None else variance
    return log(2.0) / 2.0 * (LOG2_33 + sqrt(2.0 + var)) ** 2


def lambert_w0(x):
    """Principal branch of the Lambert W function for real ``x >= -1/e``."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr < -1.0 / e - 1e-15):
        raise ValueError("Lambert W0 is real only for x >= -1/e")
    arr = np.maximum(arr, -1.0 / e)
    w = lambertw(arr, 0).real
    # the float nearest -1/e sits just past the branch point
    w = np.where(np.isnan(w) & (arr <= -1.0 / e + 1e-15), -1.0, w)
    return float(w) if w.ndim == 0 else w


def Y_correction(x: float, b: float = B_CONST) -> float:
    """``b W(exp(x / b) / b)``.

    For large ``x`` the argument overflows, so ``Y + b ln Y = x`` is solved
    by Newton iteration instead.
    """
    z = x / b - log(b)
    if z < 700.0:
        return b * lambert_w0(np.exp(z))
    # w + ln w = z with w = Y / b
    w = z - log(z)
    for _ in range(50):
        step = (w + log(w) - z) / (1.0 + 1.0 / w)
        w -= step
        if abs(step) <= 1e-15 * w:
            break
    return b * w


# ------------------------------------------------------------ protocol glue


def omega_threshold(S: float, gamma: float, n: float, k: float = COMPLETENESS_K) -> float:
    """Acceptance threshold on the observed winning probability."""
    omega = (4.0 + S) / 8.0
    q = gamma * (1.0 - omega)
    q_thr = q + k * sqrt(q * (1.0 - q) / n)
    return 1.0 - q_thr / gamma


def syndrome_length(n: float, gamma: float, H_A1_B3: float, S: float) -> float:
    """Error correction leakage ``n((1 - gamma) H + gamma h((4 - S) / 8)) + 50 sqrt n``."""
    return n * ((1.0 - gamma) * H_A1_B3 + gamma * binary_entropy((4.0 - S) / 8.0)) + SYNDROME_SLACK * sqrt(n)


@dataclass(frozen=True)
class EpsilonSet:
    eps_s: float = 1e-6
    eps_s_p: float = 3e-7
    eps_s_pp: float = 3e-7
    eps_EA: float = 1e-6
    eps_PA: float = 1e-6
    eps_h: float = EPS_HASH

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if not self.eps_s_p + 2.0 * self.eps_s_pp < self.eps_s:
            raise ValueError("smoothing parameters must satisfy eps_s' + 2 eps_s'' < eps_s")

    @property
    def soundness(self) -> float:
        return max(self.eps_EA, self.eps_PA + 2.0 * self.eps_s) + 4.0 * self.eps_h


@dataclass(frozen=True)
class FiniteSizeParams:
    """Free and fixed parameters of one finite-size evaluation."""

    n: float
    gamma: float
    t: float
    q_n: float = 0.0
    alpha_p: float = 1.01
    alpha_pp: float = 1.001
    epsilons: EpsilonSet = field(default_factory=EpsilonSet)
    k: float = COMPLETENESS_K

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.75 < self.t <= OMEGA_MAX:
            raise ValueError(f"t must lie in (3/4, {OMEGA_MAX:.6f}], got {self.t}")
        if not 0.0 <= self.q_n <= 0.5:
            raise ValueError(f"q_n must lie in [0, 1/2], got {self.q_n}")
        if not 1.0 < self.alpha_p < 2.0:
            raise ValueError(f"alpha' must lie in (1, 2), got {self.alpha_p}")
        if not 1.0 < self.alpha_pp < ALPHA_PP_MAX:
            raise ValueError(f"alpha'' must lie in (1, {ALPHA_PP_MAX:.6f}), got {self.alpha_pp}")
        if self.k <= 0:
            raise ValueError("k must be positive")


@dataclass
class KeyLength:
    """Result of :func:`key_length`.

    ``ell`` is ``Y_b(l)`` when ``l > 0`` and the raw ``l`` otherwise, so a
    non-positive ``ell`` means no secure key.
    """

    ell: float
    l: float
    soundness: float
    terms: dict

    @property
    def secure(self) -> bool:
        return self.l > 0.0


def key_length(S: float, H_A1_B3: float, params: FiniteSizeParams) -> KeyLength:
    """Finite-size key length for observed CHSH score ``S`` and key entropy."""
    p = params
    eps = p.epsilons
    n = float(p.n)
    a1, a2 = p.alpha_p - 1.0, p.alpha_pp - 1.0
    omega_thr = omega_threshold(S, p.gamma, n, p.k)
    terms = {
        "entropy": n * g_linear(p.t, omega_thr, p.q_n),
        "second_order": -a1 * V_term(p.t, p.gamma, p.q_n),
        "third_order": -n * a1 * a1 * K_term(p.alpha_p, p.t, p.q_n),
        "testing": -n * p.gamma,
        "renyi_pp": -n * a2 * LOG2_5 ** 2,
        "smoothing_p": -(theta_eps(eps.eps_s_p) + p.alpha_p * log2(1.0 / eps.eps_EA)) / a1,
        "smoothing_pp": -(theta_eps(eps.eps_s_pp) + p.alpha_pp * log2(1.0 / eps.eps_EA)) / a2,
        "smoothing": -3.0 * theta_eps(eps.eps_s - eps.eps_s_p - 2.0 * eps.eps_s_pp),
        "privacy_amplification": -5.0 * log2(1.0 / eps.eps_PA),
        "syndrome": -syndrome_length(n, p.gamma, H_A1_B3, S),
        "fixed": -FIXED_OVERHEAD_BITS,
    }
    l = float(sum(terms.values()))
    if not np.isfinite(l):
        l = -np.inf
    ell = Y_correction(l) if l > 0.0 else l
    return KeyLength(ell, l, eps.soundness, terms)


# ------------------------------------------------------------- optimisation


@dataclass(frozen=True)
class KeyStatistics:
    """CHSH score and the key-round joint distribution ``p(a1, b3)``."""

    S: float
    joint: np.ndarray

    def H(self, q_n: float) -> float:
        return conditional_entropy_from_joint(self.joint, q_n)

    def asymptotic(self) -> tuple[float, float]:
        """``(r_inf, q_n)`` maximised over the noise level."""
        return optimize_q(min(self.S, TSIRELSON), self.joint)


@dataclass
class FiniteResult:
    ell: float
    params: FiniteSizeParams
    key: KeyLength
    H_A1_B3: float
    n_evals: int


_LOG_GAMMA = (-9.0, log(0.5) / log(10.0))
_LOG_A1 = (-9.0, -0.05)
_LOG_A2 = (-10.0, log(ALPHA_PP_MAX - 1.0) / log(10.0) - 0.01)


def _decode(x, t_hi):
    t = 0.75 + (t_hi - 0.75) * x[0]
    return t, 10.0 ** x[1], 1.0 + 10.0 ** x[2], 1.0 + 10.0 ** x[3], x[4]


def optimize_finite(
    stats: KeyStatistics,
    n: float,
    epsilons: EpsilonSet | None = None,
    *,
    k: float = COMPLETENESS_K,
    n_starts: int = 16,
    seed: int = 0,
    max_evals: int = 3000,
) -> FiniteResult:
    """Maximise the key length over ``t, gamma, alpha', alpha'', q_n``.

    ``gamma`` and the Renyi offsets are searched in log10; ``H(A1|B3)`` is
    recomputed for every candidate ``q_n``.
    """
    eps = epsilons or EpsilonSet()
    S = min(stats.S, TSIRELSON)
    omega = (4.0 + S) / 8.0
    t_hi = OMEGA_MAX - 1e-12

    def make(x):
        t, gamma, ap, app, q = _decode(x, t_hi)
        return FiniteSizeParams(n, gamma, t, q, ap, app, eps, k)

    def objective(x):
        p = make(x)
        return key_length(S, stats.H(p.q_n), p).ell

    _, q0 = stats.asymptotic()
    lower = [1e-9, _LOG_GAMMA[0], _LOG_A1[0], _LOG_A2[0], 0.0]
    upper = [1.0 - 1e-9, _LOG_GAMMA[1], _LOG_A1[1], _LOG_A2[1], 0.5]
    frac = min(max((omega - 0.75) / (t_hi - 0.75), 0.01), 0.99)
    lg = log(float(n)) / log(10.0)
    warm = [
        [frac * 0.999, -lg / 3.0, -lg / 3.0, -lg / 2.0, min(q0, 0.49)],
        [frac * 0.99, -lg / 4.0, -lg / 3.0 - 0.5, -lg / 2.0 - 0.5, 0.5 * min(q0, 0.49)],
    ]
    warm = [np.clip(w, lower, upper) for w in warm]
    spec = SearchSpec(lower, upper, n_starts=n_starts, seed=seed, max_evals=max_evals)
    res = maximize(objective, spec, warm)
    best = make(res.x)
    H = stats.H(best.q_n)
    kl = key_length(S, H, best)
    return FiniteResult(kl.ell, best, kl, H, res.n_evals)


def finite_rate_per_second(ell: float, n: float, params: SetupParams) -> float:
    """``P_H nu max(ell, 0) / n``."""
    return heralding_probability(params) * params.nu * max(ell, 0.0) / n


def asymptotic_reference(stats: KeyStatistics) -> float:
    """Asymptotic rate from the same statistics, maximised over ``q_n``."""
    r, _ = stats.asymptotic()
    return r


__all__ = [
    "EpsilonSet",
    "FiniteSizeParams",
    "FiniteResult",
    "KeyLength",
    "KeyStatistics",
    "K_term",
    "V_term",
    "Y_correction",
    "delta",
    "deta_dt",
    "eta_bound",
    "f_affine",
    "f_expect",
    "f_variance",
    "finite_rate_per_second",
    "g_linear",
    "key_length",
    "lambert_w0",
    "omega_threshold",
    "optimize_finite",
    "syndrome_length",
    "tradeoff_distribution",
    "theta_eps",
    "theta_eps_exact",
    "variance_bound",
]
