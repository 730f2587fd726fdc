"""Key rates for device-independent QKD with heralded single-photon path entanglement."""

from .finitekey import (
    EpsilonSet,
    FiniteSizeParams,
    KeyStatistics,
    eta_bound,
    finite_rate_per_second,
    key_length,
    optimize_finite,
)
from .fock import DensityOperator, FockDim, ModeOperator
from .kernels import BACKEND
from .measurements import MeasurementSetting, QubitPOVM, optimize_mu, qubit_povm
from .optimizer import SearchSpec, maximize
from .photonics import (
    HeraldedState,
    SetupParams,
    heralded_state_analytic,
    heralded_state_ideal,
    heralded_state_oracle,
    heralding_probability,
)
from .protocol import (
    KeyRateReport,
    ProtocolSettings,
    asymptotic_rate,
    chsh_score,
    conditional_entropy_key,
    optimize_chsh,
    optimize_protocol,
    outcome_distribution,
    rate_per_second,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DensityOperator",
    "EpsilonSet",
    "FiniteSizeParams",
    "FockDim",
    "HeraldedState",
    "KeyRateReport",
    "KeyStatistics",
    "MeasurementSetting",
    "ModeOperator",
    "ProtocolSettings",
    "QubitPOVM",
    "SearchSpec",
    "SetupParams",
    "asymptotic_rate",
    "chsh_score",
    "conditional_entropy_key",
    "eta_bound",
    "finite_rate_per_second",
    "heralded_state_analytic",
    "heralded_state_ideal",
    "heralded_state_oracle",
    "heralding_probability",
    "key_length",
    "maximize",
    "optimize_chsh",
    "optimize_finite",
    "optimize_mu",
    "optimize_protocol",
    "outcome_distribution",
    "qubit_povm",
    "rate_per_second",
]
