"""Bounded, derivative-free, multi-start maximisation.

Every coordinate is mapped to an unbounded variable through a logistic
transform and searched with adaptive Nelder-Mead. Start points come from a
scrambled Sobol sequence, so a fixed seed reproduces the result bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

log = logging.getLogger(__name__)

INFEASIBLE = -1e30
_U_EPS = 1e-9


@dataclass(frozen=True)
class SearchSpec:
    """Search box and budget.

    ``max_evals`` is the objective-call budget per start, ``tol`` the stall
    tolerance on the objective used both by the simplex and by the
    restart-on-stall loop.
    """

    lower: Sequence[float]
    upper: Sequence[float]
    n_starts: int = 32
    seed: int = 0
    max_evals: int = 4000
    tol: float = 1e-10
    restarts: int = 2
    simplex_scale: float = 0.6

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size == 0:
            raise ValueError("lower and upper must be 1-d sequences of equal length")
        if np.any(lo >= hi):
            raise ValueError("each lower bound must be strictly below its upper bound")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if self.max_evals < 1:
            raise ValueError("max_evals must be >= 1")

    @property
    def dims(self) -> int:
        return len(self.lower)


@dataclass
class MaximizeResult:
    value: float
    x: np.ndarray
    n_evals: int
    status: str = "converged"
    start_values: list = field(default_factory=list)


class _Boxed:
    """Objective in logistic coordinates, with evaluation bookkeeping."""

    def __init__(self, fun, lo, hi):
        self.fun = fun
        self.lo = lo
        self.span = hi - lo
        self.n_evals = 0
        self.best = -np.inf
        self.best_x = None

    def to_box(self, z):
        # clip keeps exp finite; the mapped point is always inside the box
        u = 1.0 / (1.0 + np.exp(-np.clip(z, -700.0, 700.0)))
        return self.lo + self.span * u

    def to_z(self, x):
        u = (np.asarray(x, dtype=float) - self.lo) / self.span
        u = np.clip(u, _U_EPS, 1.0 - _U_EPS)
        return np.log(u) - np.log1p(-u)

    def __call__(self, z):
        x = self.to_box(z)
        self.n_evals += 1
        try:
            v = float(self.fun(x))
        except (ValueError, FloatingPointError, ZeroDivisionError):
            v = INFEASIBLE
        if not np.isfinite(v):
            v = INFEASIBLE
        if v > self.best:
            self.best = v
            self.best_x = x
        return -v


def start_points(spec: SearchSpec) -> np.ndarray:
    """Scrambled Sobol points in the box, ``n_starts`` rows."""
    sampler = qmc.Sobol(d=spec.dims, scramble=True, seed=np.random.default_rng(spec.seed))
    m = int(np.ceil(np.log2(max(spec.n_starts, 1))))
    u = sampler.random_base2(m)[: spec.n_starts]
    lo = np.asarray(spec.lower, dtype=float)
    hi = np.asarray(spec.upper, dtype=float)
    u = np.clip(u, 0.02, 0.98)
    return lo + (hi - lo) * u


def _simplex(z0, scale):
    n = z0.size
    pts = np.tile(z0, (n + 1, 1))
    pts[1:] += scale * np.eye(n)
    return pts


def maximize(
    objective: Callable[[np.ndarray], float],
    spec: SearchSpec,
    x0s: Sequence[Sequence[float]] | None = None,
    sobol: bool = True,
) -> MaximizeResult:
    """Best of several bounded Nelder-Mead runs.

    Parameters
    ----------
    objective
        Function of a point in the box; return a large negative value (or
        raise ``ValueError``) where the point is infeasible.
    spec
        Box, number of quasi-random starts, budget and seed.
    x0s
        Extra start points (warm starts), run before the quasi-random ones.
    sobol
        If false only the warm starts are run.
    """
    lo = np.asarray(spec.lower, dtype=float)
    hi = np.asarray(spec.upper, dtype=float)
    boxed = _Boxed(objective, lo, hi)
    starts = [np.asarray(x, dtype=float) for x in (x0s or [])]
    if sobol or not starts:
        starts.extend(start_points(spec))
    status = "converged"
    per_start = []
    for x0 in starts:
        z = boxed.to_z(np.clip(x0, lo, hi))
        prev = np.inf
        last = np.inf
        used = 0
        for _ in range(spec.restarts + 1):
            budget = spec.max_evals - used
            if budget <= spec.dims + 1:
                status = "max_evals"
                break
            res = minimize(
                boxed,
                z,
                method="Nelder-Mead",
                options={
                    "maxfev": budget,
                    "xatol": 1e-9,
                    "fatol": spec.tol,
                    "adaptive": True,
                    "initial_simplex": _simplex(z, spec.simplex_scale),
                },
            )
            used += res.nfev
            z = res.x
            last = min(last, res.fun)
            if res.nfev >= budget:
                status = "max_evals"
            if prev - res.fun <= spec.tol:
                break
            prev = res.fun
        per_start.append(-float(last))
    if boxed.best_x is None:
        return MaximizeResult(INFEASIBLE, (lo + hi) / 2, boxed.n_evals, "infeasible", per_start)
    log.debug("maximize: best %.12g after %d evaluations", boxed.best, boxed.n_evals)
    return MaximizeResult(boxed.best, np.array(boxed.best_x), boxed.n_evals, status, per_start)
