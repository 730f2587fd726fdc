"""Heralded single-photon path entanglement: channel model and heralded states.

Two single photons hit unbalanced beamsplitters of transmittance ``T``. The
transmitted parts travel ``L/2`` each to a central 50/50 beamsplitter whose
outputs are watched by two detectors. One click heralds the path-entangled
state ``(|10> + |01>)/sqrt(2)`` on the reflected modes ``A`` and ``B``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from math import sqrt

import numpy as np

from . import fock
from .fock import DensityOperator, FockDim

DEFAULT_ATTENUATION_DB_PER_KM = 0.2
DEFAULT_SOURCE_RATE_HZ = 5e6
ORACLE_CUTOFF = 3

# two-mode basis order |n_A n_B>: 00, 01, 10, 11
_VAC, _01, _10 = 0, 1, 2


@dataclass(frozen=True)
class SetupParams:
    """Physical scenario.

    Attributes
    ----------
    T : float
        Transmittance of the unbalanced source beamsplitters, in (0, 1).
    L : float
        Alice-Bob distance in km; the heralding station sits at ``L/2``.
    alpha_att : float
        Fibre attenuation in dB/km.
    eta_D : float
        Efficiency of the heralding detectors.
    eta_tilde_L : float
        Local transmission efficiency between source and measurement.
    eta_tilde_D : float
        Efficiency of Alice's and Bob's photodetectors.
    nu : float
        Source repetition rate in Hz.
    """

    T: float = 0.005
    L: float = 0.0
    alpha_att: float = DEFAULT_ATTENUATION_DB_PER_KM
    eta_D: float = 1.0
    eta_tilde_L: float = 1.0
    eta_tilde_D: float = 0.95
    nu: float = DEFAULT_SOURCE_RATE_HZ

    def __post_init__(self):
        if not 0.0 < self.T < 1.0:
            raise ValueError(f"T must lie in (0, 1), got {self.T}")
        if self.L < 0:
            raise ValueError(f"distance must be non-negative, got {self.L}")
        if self.alpha_att < 0:
            raise ValueError(f"attenuation must be non-negative, got {self.alpha_att}")
        for name in ("eta_D", "eta_tilde_L", "eta_tilde_D"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.nu <= 0:
            raise ValueError(f"source rate must be positive, got {self.nu}")

    @property
    def eta_L(self) -> float:
        """Overall local efficiency ``eta_tilde_L * eta_tilde_D``."""
        return self.eta_tilde_L * self.eta_tilde_D

    @property
    def eta_H(self) -> float:
        """Heralding efficiency ``eta_D * sqrt(eta_C)``."""
        return self.eta_D * sqrt(channel_efficiency(self.L, self.alpha_att))

    def with_eta_L(self, eta_L: float) -> "SetupParams":
        """Copy with the local channel efficiency set from an overall ``eta_L``."""
        return replace(self, eta_tilde_L=eta_L / self.eta_tilde_D)


@dataclass(frozen=True)
class HeraldedState:
    state: DensityOperator
    herald_prob: float

    def __post_init__(self):
        if not -1e-15 <= self.herald_prob <= 1.0 + 1e-15:
            raise ValueError(f"herald probability outside [0, 1]: {self.herald_prob}")

    @property
    def matrix(self) -> np.ndarray:
        return self.state.matrix

    def qubit_matrix(self) -> np.ndarray:
        """4x4 block on ``{0, 1}`` photons per mode, basis ``|n_A n_B>``."""
        m = self.state.matrix
        d = self.state.dims
        idx = [i * d[1] + j for i in (0, 1) for j in (0, 1)]
        return m[np.ix_(idx, idx)]


def channel_efficiency(L: float, alpha_att: float = DEFAULT_ATTENUATION_DB_PER_KM) -> float:
    """Fibre transmittance ``10^(-alpha_att L / 10)`` over ``L`` km."""
    if L < 0:
        raise ValueError(f"distance must be non-negative, got {L}")
    return 10.0 ** (-alpha_att * L / 10.0)


def heralding_probability(params: SetupParams) -> float:
    """Leading-order herald rate per pulse, ``T * eta_D * sqrt(eta_C)``."""
    return params.T * params.eta_H


def heralding_probability_twophoton(params: SetupParams) -> float:
    """Herald rate of two-photon-interference schemes, ``(T eta_H)^2``.

    Only used as a scaling comparator.
    """
    return params.T ** 2 * params.eta_D ** 2 * channel_efficiency(params.L, params.alpha_att)


def qubit_pair_state(eta_tilde_L: float, T: float = 0.0) -> np.ndarray:
    """4x4 matrix of the heralded pair after local loss.

    Half of ``eta_tilde_L (1 - T)`` sits on each entry of the ``{|01>, |10>}``
    block and ``1 - eta_tilde_L + T eta_tilde_L`` on ``|00>``.
    """
    rho = np.zeros((4, 4))
    block = 0.5 * eta_tilde_L * (1.0 - T)
    rho[_01, _01] = rho[_01, _10] = rho[_10, _01] = rho[_10, _10] = block
    rho[_VAC, _VAC] = 1.0 - eta_tilde_L + T * eta_tilde_L
    return rho


def heralded_state_analytic(params: SetupParams) -> HeraldedState:
    rho = qubit_pair_state(params.eta_tilde_L, params.T)
    state = DensityOperator(rho, ("A", "B"), (2, 2), weight=1.0)
    return HeraldedState(state, heralding_probability(params))


def heralded_state_ideal(eta_tilde_L: float = 1.0) -> HeraldedState:
    """``T -> 0`` limit: ``eta |Psi_H><Psi_H| + (1 - eta) |00><00|``."""
    state = DensityOperator(qubit_pair_state(eta_tilde_L, 0.0), ("A", "B"), (2, 2), weight=1.0)
    return HeraldedState(state, 0.0)


def charlie_projectors(cutoff: int = ORACLE_CUTOFF):
    """Single-detector click projectors in the detector (post-50/50) basis.

    Each detector clicking alone with ``n`` photons carries the weight
    ``1/(2n)``. Returns the operators for detector 1 and detector 2 on the
    two detector modes.
    """
    dim = cutoff + 1
    p1 = np.zeros((dim * dim, dim * dim))
    p2 = np.zeros_like(p1)
    for n in range(1, dim):
        w = 1.0 / (2 * n)
        p1[n * dim, n * dim] = w
        p2[n, n] = w
    return p1, p2


def heralded_state_oracle(params: SetupParams, cutoff: int = ORACLE_CUTOFF) -> HeraldedState:
    """Brute-force heralded state in the four-mode space ``A, B, C1, C2``.

    No expansion in ``T`` is made. With the mixing convention of
    :func:`spdiqkd.fock.beamsplitter` a click on the first detector heralds
    ``(|01> - |10>)/sqrt(2)``; the announced phase flip ``(-1)^n_A`` maps it
    onto the second detector's ``(|01> + |10>)/sqrt(2)`` before the branches
    are summed.
    """
    dim = FockDim(cutoff)
    modes = ("A", "B", "C1", "C2")
    rho = fock.fock_state((1, 1, 0, 0), modes, dim)
    rho = fock.beamsplitter(rho, "A", "C1", params.T)
    rho = fock.beamsplitter(rho, "B", "C2", params.T)
    eta_h = params.eta_H
    rho = fock.loss_channel(rho, "C1", eta_h)
    rho = fock.loss_channel(rho, "C2", eta_h)
    rho = fock.beamsplitter(rho, "C1", "C2", 0.5)

    p1, p2 = charlie_projectors(cutoff)
    d = dim.dim
    full = rho.matrix
    eye_ab = np.eye(d * d)
    flip = np.diag((-1.0) ** np.arange(d))
    flip_ab = np.kron(flip, np.eye(d))

    total = np.zeros((d * d, d * d), dtype=complex)
    for proj, correction in ((p1, flip_ab), (p2, None)):
        root = np.kron(eye_ab, np.sqrt(proj))
        post = DensityOperator(root @ full @ root, modes, rho.dims, check=False)
        branch = fock.partial_trace(post, ("A", "B")).matrix
        if correction is not None:
            branch = correction @ branch @ correction.conj().T
        total += branch

    prob = float(np.trace(total).real)
    if prob <= 0.0:
        vac = fock.fock_state((0, 0), ("A", "B"), dim)
        return HeraldedState(vac, 0.0)
    state = DensityOperator(total / prob, ("A", "B"), (d, d), weight=1.0)
    state = fock.loss_channel(state, "A", params.eta_tilde_L)
    state = fock.loss_channel(state, "B", params.eta_tilde_L)
    return HeraldedState(state, min(prob, 1.0))
