"""Squeezed-displaced photodetection and its restriction to the photonic qubit.

A setting displaces the mode by ``alpha``, squeezes it by ``xi`` and sends it
to an on/off detector of efficiency ``eta``. The no-click element is

    N = S(xi) D(alpha) (1 - eta)^n D(alpha)^dag S(xi)^dag,

and the click element is ``I - N``. Only the block on ``{|0>, |1>}`` matters
for states carrying at most one photon per mode.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from math import cosh, log, log10, tanh

import numpy as np

from . import fock, kernels
from .fock import FockDim, ModeOperator
from .optimizer import SearchSpec, maximize

log_ = logging.getLogger(__name__)

DEFAULT_CUTOFF = 20
SQUEEZE_CAP_DB = 4.08
XI_CAP = SQUEEZE_CAP_DB * log(10.0) / 20.0  # ~0.4697
ALPHA_CAP = 0.9
PHASE_SPAN = 2.0 * np.pi

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def xi_to_db(xi_amp: float) -> float:
    return 20.0 * xi_amp * log10(np.e)


def db_to_xi(db: float) -> float:
    return db * log(10.0) / 20.0


@dataclass(frozen=True)
class MeasurementSetting:
    """One binary measurement.

    ``sign`` relabels the outcomes: with ``sign=+1`` a click is reported as
    ``+1``, with ``sign=-1`` as ``-1``.
    """

    xi_amp: float = 0.0
    xi_phase: float = 0.0
    alpha_amp: float = 0.0
    alpha_phase: float = 0.0
    eta_tilde_D: float = 1.0
    sign: int = 1

    def __post_init__(self):
        if self.xi_amp < 0 or self.alpha_amp < 0:
            raise ValueError("squeezing and displacement amplitudes must be non-negative")
        if not 0.0 <= self.eta_tilde_D <= 1.0:
            raise ValueError(f"detector efficiency must lie in [0, 1], got {self.eta_tilde_D}")
        if self.sign not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")

    def within_caps(self, xi_cap: float = XI_CAP, alpha_cap: float = ALPHA_CAP) -> bool:
        return self.xi_amp <= xi_cap + 1e-12 and self.alpha_amp <= alpha_cap + 1e-12

    def as_row(self) -> tuple[float, float, float, float]:
        return (self.xi_amp, self.xi_phase, self.alpha_amp, self.alpha_phase)

    def flipped(self) -> "MeasurementSetting":
        return replace(self, sign=-self.sign)


@dataclass(frozen=True)
class QubitPOVM:
    pi_click: np.ndarray
    pi_noclick: np.ndarray

    def __post_init__(self):
        for name in ("pi_click", "pi_noclick"):
            m = np.asarray(getattr(self, name), dtype=complex)
            if m.shape != (2, 2):
                raise ValueError(f"{name} must be 2x2")
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @classmethod
    def from_noclick(cls, noclick: np.ndarray) -> "QubitPOVM":
        noclick = np.asarray(noclick, dtype=complex)
        return cls(np.eye(2) - noclick, noclick)

    def observable(self, sign: int = 1) -> np.ndarray:
        """``Pi_{+1} - Pi_{-1}`` under the given outcome labelling."""
        return sign * (self.pi_click - self.pi_noclick)

    def element(self, outcome: int, sign: int = 1) -> np.ndarray:
        """POVM element reporting ``outcome`` (+1 or -1)."""
        return self.pi_click if outcome * sign > 0 else self.pi_noclick

    def check(self, tol: float = 1e-10) -> "QubitPOVM":
        if np.max(np.abs(self.pi_click + self.pi_noclick - np.eye(2))) > tol:
            raise ValueError("POVM elements do not sum to the identity")
        for m in (self.pi_click, self.pi_noclick):
            if np.max(np.abs(m - m.conj().T)) > tol:
                raise ValueError("POVM element is not Hermitian")
            ev = np.linalg.eigvalsh(m)
            if ev.min() < -tol or ev.max() > 1 + tol:
                raise ValueError(f"POVM eigenvalues {ev} outside [0, 1]")
        return self


@dataclass(frozen=True)
class BlochDirection:
    """Unit vector ``n`` with polar angle ``theta_n`` and azimuth ``phi_n``."""

    theta_n: float
    phi_n: float = 0.0

    @classmethod
    def x(cls):
        return cls(np.pi / 2, 0.0)

    @classmethod
    def y(cls):
        return cls(np.pi / 2, np.pi / 2)

    @classmethod
    def z(cls):
        return cls(0.0, 0.0)

    @property
    def vector(self) -> np.ndarray:
        t, p = self.theta_n, self.phi_n
        return np.array([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)])

    def sigma(self) -> np.ndarray:
        """``|n><n| - |-n><-n|`` in the basis ``{|0>, |1>}``."""
        nx, ny, nz = self.vector
        return nx * PAULI_X + ny * PAULI_Y + nz * PAULI_Z


# ------------------------------------------------------------ full operators


def _loss_weights(eta_tilde_D: float, dim: int) -> np.ndarray:
    n = np.arange(dim)
    lam = 1.0 - eta_tilde_D
    with np.errstate(invalid="ignore"):
        return np.where(n == 0, 1.0, lam ** n)


def povm_noclick_full(setting: MeasurementSetting, dim=FockDim(DEFAULT_CUTOFF)) -> ModeOperator:
    d = dim if isinstance(dim, FockDim) else FockDim(int(dim))
    u = fock.squeezing(setting.xi_amp, setting.xi_phase, d).matrix @ fock.displacement(
        setting.alpha_amp, setting.alpha_phase, d
    ).matrix
    mid = np.diag(_loss_weights(setting.eta_tilde_D, d.dim))
    return ModeOperator(u @ mid @ u.conj().T)


def povm_click_full(setting: MeasurementSetting, dim=FockDim(DEFAULT_CUTOFF)) -> ModeOperator:
    """Click element ``I - S D (1 - eta)^n D^dag S^dag`` on the truncated mode."""
    noclick = povm_noclick_full(setting, dim)
    return ModeOperator(np.eye(noclick.dim) - noclick.matrix)


def apply_local_loss_to_povm(povm_full: ModeOperator, eta_tilde_L: float) -> ModeOperator:
    """Heisenberg-picture local loss: ``Tr(rho L*(P)) = Tr(L(rho) P)``."""
    return fock.loss_adjoint(povm_full, povm_full.modes[0], eta_tilde_L)


# ------------------------------------------------------------- qubit blocks


def lossy_qubit_block(block: np.ndarray, eta_tilde_L: float) -> np.ndarray:
    """Qubit block of ``L*(P)`` computed from the qubit block of ``P``.

    Loss never raises photon number, so only ``K_0`` and ``K_1`` reach the
    qubit space: ``P00``, ``sqrt(eta) P01`` and ``eta P11 + (1 - eta) P00``.
    """
    b = np.asarray(block, dtype=complex)
    out = np.empty_like(b)
    root = np.sqrt(eta_tilde_L)
    out[..., 0, 0] = b[..., 0, 0]
    out[..., 0, 1] = root * b[..., 0, 1]
    out[..., 1, 0] = root * b[..., 1, 0]
    out[..., 1, 1] = eta_tilde_L * b[..., 1, 1] + (1.0 - eta_tilde_L) * b[..., 0, 0]
    return out


def noclick_blocks(rows: np.ndarray, eta_tilde_D, cutoff: int = DEFAULT_CUTOFF) -> np.ndarray:
    """Batched qubit blocks of the no-click element, shape ``(k, 2, 2)``.

    ``rows`` has columns ``(xi_amp, xi_phase, alpha_amp, alpha_phase)``.
    """
    rows = np.ascontiguousarray(rows, dtype=float).reshape(-1, 4)
    lam = np.ascontiguousarray(1.0 - np.broadcast_to(np.asarray(eta_tilde_D, dtype=float), (rows.shape[0],)))
    return kernels.noclick_blocks(rows, lam, int(cutoff))


def qubit_povm(setting: MeasurementSetting, cutoff: int = DEFAULT_CUTOFF) -> QubitPOVM:
    """Restriction of the photodetection POVM to ``span{|0>, |1>}``."""
    block = noclick_blocks(np.array([setting.as_row()]), setting.eta_tilde_D, cutoff)[0]
    return QubitPOVM.from_noclick(block)


def noclick_block_closed_form(setting: MeasurementSetting) -> np.ndarray:
    """Untruncated qubit block for a perfect detector.

    With ``alpha = |alpha| e^{i theta}`` and ``xi = r e^{i phi}``,
    ``theta_w = exp(|alpha|^2 (cos(phi - 2 theta) tanh r - 1))`` and

        N = theta_w [[sech r,            alpha^* sech^2 r],
                     [alpha sech^2 r,    |alpha|^2 sech^3 r]].

    Only valid for ``eta_tilde_D = 1``; used to cross-check the truncated
    numerics.
    """
    r, phi = setting.xi_amp, setting.xi_phase
    alpha = setting.alpha_amp * np.exp(1j * setting.alpha_phase)
    theta = setting.alpha_phase
    sech = 1.0 / cosh(r)
    w = np.exp(setting.alpha_amp ** 2 * (np.cos(phi - 2 * theta) * tanh(r) - 1.0))
    return w * np.array(
        [[sech, np.conj(alpha) * sech ** 2], [alpha * sech ** 2, abs(alpha) ** 2 * sech ** 3]],
        dtype=complex,
    )


def closed_form_discrepancy(setting: MeasurementSetting, cutoff: int = DEFAULT_CUTOFF) -> float:
    """Max deviation between numeric and closed-form blocks (perfect detector)."""
    numeric = qubit_povm(replace(setting, eta_tilde_D=1.0), cutoff).pi_noclick
    diff = float(np.max(np.abs(numeric - noclick_block_closed_form(setting))))
    if diff > 1e-6:
        log_.info("closed-form qubit block deviates by %.3e at %s (numeric kept)", diff, setting)
    return diff


def projective_part(povm: QubitPOVM, n: BlochDirection) -> float:
    """Weight of the ideal projective component along ``n``.

    ``|Tr((Pi_click - Pi_noclick) sigma_n)| / 2``: a perfect Pauli measurement
    along ``n`` gives 1, whichever outcome is called ``+1``.
    """
    return 0.5 * abs(float(np.trace(povm.observable() @ n.sigma()).real))


def optimize_mu(
    n: BlochDirection,
    eta_tilde_D: float = 1.0,
    *,
    eta_tilde_L: float = 1.0,
    xi_cap: float = XI_CAP,
    alpha_cap: float = ALPHA_CAP,
    n_starts: int = 16,
    seed: int = 0,
    cutoff: int = DEFAULT_CUTOFF,
    max_evals: int = 1500,
):
    """Largest projective part along ``n`` over settings within the caps.

    A local efficiency ``eta_tilde_L < 1`` is pushed onto the measurement
    (Heisenberg picture). Returns ``(mu_max, setting)``.
    """

    def block_povm(x):
        block = noclick_blocks(x[None, :], eta_tilde_D, cutoff)[0]
        if eta_tilde_L < 1.0:
            block = lossy_qubit_block(block, eta_tilde_L)
        return QubitPOVM.from_noclick(block)

    def objective(x):
        return projective_part(block_povm(x), n)

    if xi_cap <= 0:
        # displacement only
        spec = SearchSpec([0.0, -PHASE_SPAN], [alpha_cap, PHASE_SPAN], n_starts=n_starts, seed=seed, max_evals=max_evals)
        res = maximize(lambda y: objective(np.array([0.0, 0.0, y[0], y[1]])), spec, x0s=[[0.0, 0.0]])
        x = np.array([0.0, 0.0, res.x[0], res.x[1]])
    else:
        spec = SearchSpec(
            [0.0, -PHASE_SPAN, 0.0, -PHASE_SPAN],
            [xi_cap, PHASE_SPAN, alpha_cap, PHASE_SPAN],
            n_starts=n_starts,
            seed=seed,
            max_evals=max_evals,
        )
        res = maximize(objective, spec, x0s=[[0.0, 0.0, 0.0, 0.0]])
        x = res.x
    best = MeasurementSetting(float(x[0]), float(x[1]), float(x[2]), float(x[3]), eta_tilde_D)
    return float(res.value), best
