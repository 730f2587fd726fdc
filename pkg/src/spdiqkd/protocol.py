"""CHSH scores, key-round entropies and asymptotic key rates.

Alice measures ``A_1, A_2`` and Bob ``B_1, B_2, B_3``. Test rounds use the
first two settings of each party for CHSH; key rounds use ``(A_1, B_3)``.
Outcomes are ``+1``/``-1``; arrays indexed by outcome use index 0 for ``+1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from .measurements import (
    ALPHA_CAP,
    DEFAULT_CUTOFF,
    PHASE_SPAN,
    XI_CAP,
    MeasurementSetting,
    QubitPOVM,
    noclick_blocks,
    povm_noclick_full,
)
from . import kernels
from .fock import FockDim
from .optimizer import SearchSpec, maximize
from .photonics import HeraldedState, SetupParams, heralding_probability

log = logging.getLogger(__name__)

TSIRELSON = 2.0 * np.sqrt(2.0)
S_TOL = 1e-9
# rates below this are roundoff on the q_n = 1/2 plateau
RATE_FLOOR = 1e-12

Measurement = Union[MeasurementSetting, QubitPOVM]

# sign bits (A1, A2, B1, B2) turning each correlator pattern into the standard
# E11 + E12 + E21 - E22; index matches _PATTERNS below
_PATTERNS = np.array(
    [
        [[1, 1], [1, -1]],
        [[1, 1], [-1, 1]],
        [[1, -1], [1, 1]],
        [[-1, 1], [1, 1]],
    ],
    dtype=float,
)
_PATTERN_SIGNS = [(1, 1, 1, 1), (1, -1, 1, 1), (1, 1, 1, -1), (-1, 1, 1, -1)]


@dataclass(frozen=True)
class ProtocolSettings:
    """Two settings for Alice and three for Bob.

    Entries are usually :class:`MeasurementSetting`; exact qubit POVMs may be
    injected instead (click reported as ``+1``).
    """

    alice: tuple
    bob: tuple

    def __post_init__(self):
        object.__setattr__(self, "alice", tuple(self.alice))
        object.__setattr__(self, "bob", tuple(self.bob))
        if len(self.alice) != 2 or len(self.bob) != 3:
            raise ValueError("Alice needs exactly 2 settings and Bob exactly 3")

    @property
    def all(self) -> tuple:
        return self.alice + self.bob

    def rows(self) -> np.ndarray:
        return np.array([s.as_row() for s in self.all])

    def to_dict(self) -> dict:
        names = ("a1", "a2", "b1", "b2", "b3")
        out = {}
        for name, s in zip(names, self.all):
            if isinstance(s, MeasurementSetting):
                out[name] = {
                    "xi_amp": s.xi_amp,
                    "xi_phase": s.xi_phase,
                    "alpha_amp": s.alpha_amp,
                    "alpha_phase": s.alpha_phase,
                    "sign": s.sign,
                }
        return out


@dataclass
class KeyRateReport:
    """Optimised asymptotic figures for one state.

    ``r_inf`` is clamped at zero; ``raw`` keeps the unclamped bound.
    ``R_inf`` is ``nan`` when no scenario was supplied.
    """

    S: float
    H_A1_B3: float
    q_n: float
    r_inf: float
    settings: ProtocolSettings
    R_inf: float = float("nan")
    raw: float = 0.0
    diagnostics: dict = field(default_factory=dict)


# --------------------------------------------------------------- elementary


def binary_entropy(p) -> np.ndarray | float:
    """``h(p)`` in bits, with ``h(0) = h(1) = 0``."""
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    inside = (p > 0.0) & (p < 1.0)
    x = p[inside]
    out[inside] = -(x * np.log2(x) + (1.0 - x) * np.log2(1.0 - x))
    return float(out) if out.ndim == 0 else out


def _shannon(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=float).ravel()
    p = p[p > 0.0]
    return float(-(p * np.log2(p)).sum())


def _elements(m: Measurement, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """``(Pi_{+1}, Pi_{-1})`` restricted to photon numbers below ``dim``."""
    if isinstance(m, QubitPOVM):
        if dim != 2:
            raise ValueError("qubit POVMs only act on two-level modes")
        return m.pi_click, m.pi_noclick
    if dim == 2:
        noclick = noclick_blocks(np.array([m.as_row()]), m.eta_tilde_D)[0]
    else:
        full = povm_noclick_full(m, FockDim(max(DEFAULT_CUTOFF, dim + 10))).matrix
        noclick = full[:dim, :dim]
    click = np.eye(dim) - noclick
    return (click, noclick) if m.sign > 0 else (noclick, click)


def _state_tensor(state) -> tuple[np.ndarray, int]:
    if isinstance(state, HeraldedState):
        rho, dims = state.matrix, state.state.dims
    else:
        rho = np.asarray(state)
        d = int(round(np.sqrt(rho.shape[0])))
        dims = (d, d)
    if len(dims) != 2 or dims[0] != dims[1]:
        raise ValueError("expected a two-mode state with equal cutoffs")
    d = dims[0]
    return rho.reshape(d, d, d, d), d


def outcome_distribution(state, a_set: Measurement, b_set: Measurement) -> np.ndarray:
    """Joint outcome probabilities ``p[a, b]``; index 0 is ``+1``.

    ``state`` is a :class:`HeraldedState` or a two-mode density matrix.
    """
    rho, d = _state_tensor(state)
    pa = _elements(a_set, d)
    pb = _elements(b_set, d)
    p = np.array(
        [[np.einsum("abcd,ca,db->", rho, pa[i], pb[j]).real for j in range(2)] for i in range(2)]
    )
    return p


def correlator(p: np.ndarray) -> float:
    """``<AB> = sum_ab a b p(a, b)``."""
    return float(p[0, 0] + p[1, 1] - p[0, 1] - p[1, 0])


def chsh_score(state, settings: ProtocolSettings) -> float:
    """``<A1B1> + <A1B2> + <A2B1> - <A2B2>`` with the settings' sign bits."""
    e = np.array(
        [[correlator(outcome_distribution(state, a, b)) for b in settings.bob[:2]] for a in settings.alice]
    )
    return float(e[0, 0] + e[0, 1] + e[1, 0] - e[1, 1])


def conditional_entropy_from_joint(p: np.ndarray, q_n: float) -> float:
    """``H(A|B)`` in bits after Alice flips her bit with probability ``q_n``."""
    if not 0.0 <= q_n <= 0.5:
        raise ValueError(f"q_n must lie in [0, 1/2], got {q_n}")
    p = np.asarray(p, dtype=float)
    noisy = (1.0 - q_n) * p + q_n * p[::-1, :]
    return _shannon(noisy) - _shannon(noisy.sum(axis=0))


def conditional_entropy_key(state, a1: Measurement, b3: Measurement, q_n: float) -> float:
    """``H(A_1|B_3)`` of the key rounds with noisy preprocessing."""
    return conditional_entropy_from_joint(outcome_distribution(state, a1, b3), q_n)


def entropy_bound_chsh(S, q_n) -> np.ndarray | float:
    """Eve's uncertainty part of the rate, ``r + H(A1|B3)``.

    Radicands are clamped at zero so that ``S < 2`` returns the vacuous value
    of the displayed formula instead of ``nan``.
    """
    S = np.asarray(S, dtype=float)
    q = np.asarray(q_n, dtype=float)
    first = np.sqrt(np.maximum((S / 2.0) ** 2 - 1.0, 0.0))
    second = np.sqrt(np.maximum(1.0 - q * (1.0 - q) * (8.0 - S * S), 0.0))
    out = 1.0 - binary_entropy((1.0 + first) / 2.0) + binary_entropy((1.0 + second) / 2.0)
    return float(out) if np.ndim(out) == 0 else out


def asymptotic_rate(S: float, H_A1_B3: float, q_n: float) -> float:
    """Devetak-Winter rate with noisy preprocessing, bits per round."""
    if S > TSIRELSON + S_TOL:
        raise ValueError(f"CHSH score {S} exceeds the quantum bound")
    S = min(S, TSIRELSON)
    return float(entropy_bound_chsh(S, q_n)) - H_A1_B3


def rate_per_second(r: float, params: SetupParams) -> float:
    """``R = P_H nu r``; negative rates are reported as zero."""
    return heralding_probability(params) * params.nu * max(r, 0.0)


# ------------------------------------------------------------- fast objective


def _best_pattern(e: np.ndarray) -> tuple[float, int]:
    """Largest ``|S|`` over relabellings; the code is ``pattern`` or ``-pattern - 1``."""
    vals = np.einsum("pxy,xy->p", _PATTERNS, e)
    k = int(np.argmax(np.abs(vals)))
    return float(abs(vals[k])), (k if vals[k] >= 0 else -k - 1)


class _Layout:
    """Packs settings (and optionally ``q_n``) into a bounded vector."""

    def __init__(self, k: int, xi_cap: float, alpha_cap: float, with_q: bool):
        self.k = k
        self.squeeze = xi_cap > 0
        self.with_q = with_q
        if self.squeeze:
            lo = [0.0, -PHASE_SPAN, 0.0, -PHASE_SPAN]
            hi = [xi_cap, PHASE_SPAN, alpha_cap, PHASE_SPAN]
        else:
            lo = [0.0, -PHASE_SPAN]
            hi = [alpha_cap, PHASE_SPAN]
        self.per = len(lo)
        self.lower = lo * k + ([0.0] if with_q else [])
        self.upper = hi * k + ([0.5] if with_q else [])

    def rows(self, x: np.ndarray) -> np.ndarray:
        r = np.asarray(x[: self.k * self.per]).reshape(self.k, self.per)
        if self.squeeze:
            return r
        return np.column_stack([np.zeros(self.k), np.zeros(self.k), r])

    def q(self, x: np.ndarray) -> float:
        return float(x[-1]) if self.with_q else 0.0

    def pack(self, rows: np.ndarray, q: float | None = None) -> np.ndarray:
        rows = np.asarray(rows, dtype=float).reshape(-1, 4)
        body = rows if self.squeeze else rows[:, 2:]
        lo = np.asarray(self.lower[: self.k * self.per]).reshape(self.k, self.per)
        hi = np.asarray(self.upper[: self.k * self.per]).reshape(self.k, self.per)
        body = np.clip(body, lo, hi).ravel()
        if self.with_q:
            return np.concatenate([body, [q if q is not None else 0.0]])
        return body


class _Model:
    """Qubit-block evaluation of correlators for one state."""

    def __init__(self, state, eta_tilde_D: float, cutoff: int = DEFAULT_CUTOFF):
        rho, d = _state_tensor(state)
        if d != 2:
            idx = [0, 1]
            rho = rho[np.ix_(idx, idx, idx, idx)]
        self.rho = rho
        self.eta_tilde_D = eta_tilde_D
        self.cutoff = cutoff
        self._lam = {k: np.full(k, 1.0 - eta_tilde_D) for k in range(1, 6)}

    def observables(self, rows: np.ndarray) -> np.ndarray:
        rows = np.ascontiguousarray(rows, dtype=float)
        n = kernels.noclick_blocks(rows, self._lam[rows.shape[0]], self.cutoff)
        return np.eye(2) - 2.0 * n

    def correlators(self, oa: np.ndarray, ob: np.ndarray) -> np.ndarray:
        return np.einsum("abcd,xca,ydb->xy", self.rho, oa, ob).real

    def joint(self, oa: np.ndarray, ob: np.ndarray) -> np.ndarray:
        """Joint outcome distribution of one pair, index 0 for ``+1``."""
        ea = np.einsum("abcb,ca->", self.rho, oa).real
        eb = np.einsum("abad,db->", self.rho, ob).real
        eab = np.einsum("abcd,ca,db->", self.rho, oa, ob).real
        s = np.array([1.0, -1.0])
        return 0.25 * (1.0 + s[:, None] * ea + s[None, :] * eb + s[:, None] * s[None, :] * eab)

    def chsh(self, rows4: np.ndarray) -> tuple[float, int]:
        o = self.observables(rows4)
        return _best_pattern(self.correlators(o[:2], o[2:4]))

    def rate(self, rows5: np.ndarray, q: float) -> tuple[float, float, float]:
        o = self.observables(rows5)
        S, _ = _best_pattern(self.correlators(o[:2], o[2:4]))
        H = conditional_entropy_from_joint(self.joint(o[0], o[4]), q)
        return asymptotic_rate(min(S, TSIRELSON), H, q), S, H


def _rate_objective(model: _Model, layout: _Layout):
    def f(x):
        rows = layout.rows(x)
        q = layout.q(x)
        r, S, _ = model.rate(rows, q)
        if S <= 2.0:
            # vacuous bound: climb towards a violation instead
            return S - 3.0
        return r

    return f


def _wrap_phases(row: np.ndarray) -> np.ndarray:
    out = np.array(row, dtype=float)
    out[1::2] = (out[1::2] + np.pi) % (2.0 * np.pi) - np.pi
    return out


def _settings_from_rows(rows: np.ndarray, eta_tilde_D: float, pattern: int) -> ProtocolSettings:
    signs = list(_PATTERN_SIGNS[pattern if pattern >= 0 else -pattern - 1]) + [1]
    if pattern < 0:
        signs[0], signs[1] = -signs[0], -signs[1]
    ms = [
        MeasurementSetting(float(r[0]), float(r[1]), float(r[2]), float(r[3]), eta_tilde_D, int(s))
        for r, s in zip(rows, signs)
    ]
    return ProtocolSettings(ms[:2], ms[2:])


def _caps_spec(layout: _Layout, n_starts: int, seed: int, max_evals: int) -> SearchSpec:
    return SearchSpec(layout.lower, layout.upper, n_starts=n_starts, seed=seed, max_evals=max_evals)


@dataclass
class ChshResult:
    S: float
    settings: ProtocolSettings
    n_evals: int


def optimize_chsh(
    state,
    eta_tilde_D: float,
    *,
    xi_cap: float = XI_CAP,
    alpha_cap: float = ALPHA_CAP,
    n_starts: int = 32,
    seed: int = 0,
    max_evals: int = 3000,
    cutoff: int = DEFAULT_CUTOFF,
    x0s: Sequence[np.ndarray] | None = None,
) -> ChshResult:
    """Maximise the CHSH score over ``A_1, A_2, B_1, B_2``.

    ``B_3`` of the returned settings is a copy of ``A_1``. ``x0s`` are warm
    starts given as ``(4, 4)`` setting rows.
    """
    model = _Model(state, eta_tilde_D, cutoff)
    layout = _Layout(4, xi_cap, alpha_cap, with_q=False)
    warm = [layout.pack(r) for r in (x0s or [])]
    res = maximize(lambda x: model.chsh(layout.rows(x))[0], _caps_spec(layout, n_starts, seed, max_evals), warm)
    rows = layout.rows(res.x)
    S, pattern = model.chsh(rows)
    rows5 = np.vstack([rows, rows[:1]])
    return ChshResult(S, _settings_from_rows(rows5, eta_tilde_D, pattern), res.n_evals)


def optimize_protocol(
    state: HeraldedState,
    eta_tilde_D: float,
    *,
    params: SetupParams | None = None,
    xi_cap: float = XI_CAP,
    alpha_cap: float = ALPHA_CAP,
    n_starts: int = 32,
    seed: int = 0,
    max_evals: int = 4000,
    cutoff: int = DEFAULT_CUTOFF,
    warm: ProtocolSettings | None = None,
    warm_q: float | None = None,
) -> KeyRateReport:
    """Maximise the asymptotic rate over all five settings and ``q_n``.

    The search runs in stages: CHSH settings first, then the key setting
    ``B_3`` and ``q_n`` from warm starts, then a joint polish of all 21
    parameters.

    Parameters
    ----------
    state
        Heralded two-mode state.
    eta_tilde_D
        Local detector efficiency of both parties.
    params
        Scenario used to convert bits per round into bits per second.
    warm
        Settings from a nearby run (for example the previous point of a
        scan), added as a start point of every stage.
    warm_q
        Noise level paired with ``warm`` in the joint polish.
    """
    model = _Model(state, eta_tilde_D, cutoff)
    lay4 = _Layout(4, xi_cap, alpha_cap, with_q=False)
    lay5 = _Layout(5, xi_cap, alpha_cap, with_q=True)
    warm_rows = warm.rows() if warm is not None else None

    chsh = optimize_chsh(
        state,
        eta_tilde_D,
        xi_cap=xi_cap,
        alpha_cap=alpha_cap,
        n_starts=n_starts,
        seed=seed,
        max_evals=max_evals,
        cutoff=cutoff,
        x0s=[warm_rows[:4]] if warm_rows is not None else None,
    )
    rows4 = chsh.settings.rows()[:4]
    evals = chsh.n_evals

    # B3 for the strongest key correlation with A1, CHSH settings frozen;
    # either of Alice's settings may serve as the key setting
    lay_b3 = _Layout(1, xi_cap, alpha_cap, with_q=False)
    best_stage = None
    for order in ((0, 1), (1, 0)):
        r4 = rows4[[order[0], order[1], 2, 3]]
        o4 = model.observables(r4)

        def b3_objective(x, o4=o4):
            ob = model.observables(lay_b3.rows(x))[0]
            return -conditional_entropy_from_joint(model.joint(o4[0], ob), 0.0)

        seeds = [r for r in r4] + [r + np.array([0.0, 0.0, 0.0, np.pi]) for r in r4]
        b3_starts = [lay_b3.pack(_wrap_phases(r)) for r in seeds]
        if warm_rows is not None:
            b3_starts.append(lay_b3.pack(warm_rows[4]))
        b3 = maximize(b3_objective, _caps_spec(lay_b3, max(2, n_starts // 8), seed + 1, max_evals), b3_starts)
        evals += b3.n_evals
        if best_stage is None or b3.value > best_stage[0]:
            best_stage = (b3.value, np.vstack([r4, lay_b3.rows(b3.x)]))
    rows5 = best_stage[1]
    o5 = model.observables(rows5)
    _, q_star = optimize_q(min(chsh.S, TSIRELSON), model.joint(o5[0], o5[4]))

    # joint polish from the staged point at a few noise levels
    objective = _rate_objective(model, lay5)
    q_starts = sorted({round(q_star, 6), 0.1, 0.25} - {0.5})
    polish_starts = [lay5.pack(rows5, min(q, 0.49)) for q in q_starts]
    if warm is not None and warm_q is not None:
        polish_starts.append(lay5.pack(warm_rows, warm_q))
    polish_spec = SearchSpec(
        lay5.lower, lay5.upper, n_starts=1, seed=seed + 2, max_evals=5 * max_evals, restarts=3, simplex_scale=0.3
    )
    res = maximize(objective, polish_spec, polish_starts, sobol=False)
    evals += res.n_evals

    rows = lay5.rows(res.x)
    q = lay5.q(res.x)
    raw, S, H = model.rate(rows, q)
    _, pattern = model.chsh(rows[:4])
    settings = _settings_from_rows(rows, eta_tilde_D, pattern)
    if S <= 2.0:
        raw = min(raw, 0.0)
    r = raw if raw > RATE_FLOOR else 0.0
    R = rate_per_second(r, params) if params is not None else float("nan")
    log.debug("optimize_protocol: S=%.6f H=%.6f q=%.4f r=%.6g", S, H, q, raw)
    return KeyRateReport(
        S=S,
        H_A1_B3=H,
        q_n=q,
        r_inf=r,
        settings=settings,
        R_inf=R,
        raw=raw,
        diagnostics={"n_evals": evals, "S_chsh_stage": chsh.S},
    )


def optimize_q(S: float, joint: np.ndarray, grid: int = 201) -> tuple[float, float]:
    """Best ``q_n`` for fixed statistics: grid scan refined by golden section.

    Returns ``(rate, q_n)``.
    """
    from scipy.optimize import minimize_scalar

    def r(q):
        return asymptotic_rate(S, conditional_entropy_from_joint(joint, q), q)

    qs = np.linspace(0.0, 0.5, grid)
    vals = np.array([r(q) for q in qs])
    i = int(np.argmax(vals))
    lo, hi = qs[max(i - 1, 0)], qs[min(i + 1, grid - 1)]
    if hi > lo:
        best = minimize_scalar(lambda q: -r(q), bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
        if -best.fun > vals[i]:
            return float(-best.fun), float(best.x)
    return float(vals[i]), float(qs[i])


def key_statistics(state, settings: ProtocolSettings) -> tuple[float, np.ndarray]:
    """``(S, p(a1, b3))`` for the given settings."""
    return chsh_score(state, settings), outcome_distribution(state, settings.alice[0], settings.bob[2])


def replace_efficiency(settings: ProtocolSettings, eta_tilde_D: float) -> ProtocolSettings:
    return ProtocolSettings(
        [replace(s, eta_tilde_D=eta_tilde_D) for s in settings.alice],
        [replace(s, eta_tilde_D=eta_tilde_D) for s in settings.bob],
    )
