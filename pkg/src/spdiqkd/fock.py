"""Truncated Fock-space linear algebra for a handful of bosonic modes.

States and operators are dense NumPy matrices over the tensor product of
per-mode spaces ``{|0>, ..., |cutoff>}``, ordered as listed in ``modes``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import expm

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_FLOOR = -1e-9
MAX_MODES = 4


class FockError(ValueError):
    """Invalid mode label, dimension mismatch or broken state invariant."""


@dataclass(frozen=True)
class FockDim:
    """Single-mode truncation: photon numbers 0..cutoff."""

    cutoff: int = 20

    def __post_init__(self):
        if int(self.cutoff) != self.cutoff or self.cutoff < 1:
            raise FockError(f"cutoff must be an integer >= 1, got {self.cutoff!r}")

    @property
    def dim(self) -> int:
        return self.cutoff + 1


def _as_dim(dim) -> FockDim:
    return dim if isinstance(dim, FockDim) else FockDim(int(dim))


@dataclass(frozen=True, eq=False)
class ModeOperator:
    """Dense operator over one or more truncated modes."""

    matrix: np.ndarray
    modes: tuple[str, ...] = ("a",)
    dims: tuple[int, ...] | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "modes", tuple(self.modes))
        dims = self.dims
        if dims is None:
            if len(self.modes) != 1:
                raise FockError("dims must be given for multimode operators")
            dims = (m.shape[0],)
        object.__setattr__(self, "dims", tuple(int(d) for d in dims))
        if len(set(self.modes)) != len(self.modes):
            raise FockError(f"duplicate mode labels in {self.modes}")
        if len(self.modes) != len(self.dims):
            raise FockError("one dimension per mode is required")
        if len(self.modes) > MAX_MODES:
            raise FockError(f"at most {MAX_MODES} modes are supported")
        size = int(np.prod(self.dims))
        if m.shape != (size, size):
            raise FockError(f"matrix shape {m.shape} does not match dims {self.dims}")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dag(self) -> "ModeOperator":
        return type(self)(self.matrix.conj().T, self.modes, self.dims)

    def __matmul__(self, other):
        if isinstance(other, ModeOperator):
            _check_same_space(self, other)
            return ModeOperator(self.matrix @ other.matrix, self.modes, self.dims)
        return self.matrix @ np.asarray(other)

    def unitarity_defect(self) -> float:
        """``max |U^dag U - I|``: truncation diagnostic for Gaussian unitaries."""
        m = self.matrix
        return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))))


@dataclass(frozen=True, eq=False)
class DensityOperator(ModeOperator):
    """Density matrix over named modes.

    ``weight`` is the trace the matrix is expected to carry. Normalised states
    have weight 1; unnormalised post-selected states keep their probability.
    """

    weight: float = 1.0

    def __init__(self, matrix, modes=("a",), dims=None, weight=None, check=True):
        super().__init__(matrix, modes, dims)
        if weight is None:
            weight = float(np.trace(self.matrix).real)
        object.__setattr__(self, "weight", float(weight))
        if check:
            self.validate()

    def validate(self, hermitian_tol=HERMITIAN_TOL, trace_tol=TRACE_TOL, psd_floor=PSD_FLOOR):
        m = self.matrix
        herm = float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0
        if herm > hermitian_tol:
            raise FockError(f"state not Hermitian: defect {herm:.3e}")
        tr = float(np.trace(m).real)
        if abs(tr - self.weight) > trace_tol * max(1.0, abs(self.weight)):
            raise FockError(f"trace {tr!r} differs from weight {self.weight!r}")
        if m.size:
            lo = float(np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min())
            if lo < psd_floor * max(1.0, abs(self.weight)):
                raise FockError(f"state not positive semidefinite: min eigenvalue {lo:.3e}")
        return self

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def normalized(self) -> "DensityOperator":
        tr = self.trace
        if tr <= 0:
            raise FockError("cannot normalise a state of zero weight")
        return DensityOperator(self.matrix / tr, self.modes, self.dims, weight=1.0)

    def expect(self, op) -> complex:
        mat = op.matrix if isinstance(op, ModeOperator) else np.asarray(op)
        return complex(np.trace(self.matrix @ mat))

    def populations(self) -> np.ndarray:
        """Diagonal reshaped to one axis per mode."""
        return np.real(np.diag(self.matrix)).reshape(self.dims)


def _check_same_space(x: ModeOperator, y: ModeOperator):
    if x.modes != y.modes or x.dims != y.dims:
        raise FockError(f"operators live on different spaces: {x.modes} vs {y.modes}")


# ---------------------------------------------------------------- operators


def annihilation(dim=FockDim(), mode: str = "a") -> ModeOperator:
    """Lowering operator with ``A[n-1, n] = sqrt(n)``."""
    d = _as_dim(dim)
    mat = np.diag(np.sqrt(np.arange(1, d.dim, dtype=float)), 1)
    return ModeOperator(mat, (mode,))


def number(dim=FockDim(), mode: str = "a") -> ModeOperator:
    d = _as_dim(dim)
    return ModeOperator(np.diag(np.arange(d.dim, dtype=float)), (mode,))


def identity(dim=FockDim(), mode: str = "a") -> ModeOperator:
    return ModeOperator(np.eye(_as_dim(dim).dim), (mode,))


def displacement(alpha_amp: float, alpha_phase: float = 0.0, dim=FockDim(), mode="a") -> ModeOperator:
    """``D(alpha) = exp(alpha a^dag - alpha^* a)`` by dense matrix exponential."""
    a = annihilation(dim).matrix
    alpha = alpha_amp * np.exp(1j * alpha_phase)
    return ModeOperator(expm(alpha * a.conj().T - np.conj(alpha) * a), (mode,))


def squeezing(xi_amp: float, xi_phase: float = 0.0, dim=FockDim(), mode="a") -> ModeOperator:
    """``S(xi) = exp((xi^* a^2 - xi a^dag^2) / 2)`` by dense matrix exponential.

    With this sign ``|<0|S(xi)|0>|^2 = 1/cosh|xi|``.
    """
    a = annihilation(dim).matrix
    xi = xi_amp * np.exp(1j * xi_phase)
    gen = 0.5 * (np.conj(xi) * (a @ a) - xi * (a.conj().T @ a.conj().T))
    return ModeOperator(expm(gen), (mode,))


def truncation_defect(build, amp: float, phase: float, cutoff: int, levels: int = 2, reference_cutoff: int = 80) -> float:
    """Truncation error of a Gaussian unitary on its lowest Fock columns.

    The exponential of a truncated generator is unitary to rounding, so
    ``U^dag U - I`` says nothing about truncation. Instead the first
    ``levels`` columns are compared with the same operator built at
    ``reference_cutoff``; the result is the largest column error norm.

    Parameters
    ----------
    build : callable
        :func:`displacement` or :func:`squeezing`.
    amp, phase : float
        Operator parameters.
    cutoff : int
        Truncation under test, below ``reference_cutoff``.
    """
    if not levels <= cutoff < reference_cutoff:
        raise FockError("need levels <= cutoff < reference_cutoff")
    ref = build(amp, phase, FockDim(reference_cutoff)).matrix[:, :levels]
    test = np.zeros_like(ref)
    test[: cutoff + 1] = build(amp, phase, FockDim(cutoff)).matrix[:, :levels]
    return float(np.max(np.linalg.norm(ref - test, axis=0)))


def fock_ket(n: int, dim=FockDim()) -> np.ndarray:
    d = _as_dim(dim)
    if not 0 <= n <= d.cutoff:
        raise FockError(f"photon number {n} outside truncation 0..{d.cutoff}")
    v = np.zeros(d.dim, dtype=complex)
    v[n] = 1.0
    return v


def ket_state(ket, modes: Sequence[str], dims: Sequence[int]) -> DensityOperator:
    """Projector onto a (not necessarily normalised) multimode ket."""
    v = np.asarray(ket, dtype=complex).reshape(-1)
    return DensityOperator(np.outer(v, v.conj()), tuple(modes), tuple(dims))


def fock_state(occupations: Sequence[int], modes: Sequence[str], dim=FockDim()) -> DensityOperator:
    """Product Fock state ``|n_1, n_2, ...>`` with a common truncation."""
    d = _as_dim(dim)
    ket = np.ones(1, dtype=complex)
    for n in occupations:
        ket = np.kron(ket, fock_ket(n, d))
    return ket_state(ket, modes, [d.dim] * len(occupations))


def tensor(*states: DensityOperator) -> DensityOperator:
    mat = np.ones((1, 1), dtype=complex)
    modes: list[str] = []
    dims: list[int] = []
    weight = 1.0
    for s in states:
        mat = np.kron(mat, s.matrix)
        modes.extend(s.modes)
        dims.extend(s.dims)
        weight *= s.weight
    return DensityOperator(mat, tuple(modes), tuple(dims), weight=weight)


# ------------------------------------------------------- local application


def _mode_index(state: ModeOperator, mode: str) -> int:
    try:
        return state.modes.index(mode)
    except ValueError:
        raise FockError(f"unknown mode {mode!r}; state has {state.modes}") from None


def _apply_sandwich(mat: np.ndarray, dims: tuple[int, ...], axes: Sequence[int], left: np.ndarray, right: np.ndarray):
    """Return ``L rho R`` where L, R act on the listed axes only."""
    n = len(dims)
    k = len(axes)
    sub = tuple(dims[i] for i in axes)
    t = mat.reshape(dims + dims)
    left = left.reshape(sub + sub)
    right = right.reshape(sub + sub)
    # contract left on ket axes
    t = np.tensordot(left, t, axes=(list(range(k, 2 * k)), list(axes)))
    t = np.moveaxis(t, list(range(k)), list(axes))
    # contract right on bra axes
    bra_axes = [n + i for i in axes]
    t = np.tensordot(t, right, axes=(bra_axes, list(range(k))))
    t = np.moveaxis(t, list(range(2 * n - k, 2 * n)), bra_axes)
    size = int(np.prod(dims))
    return t.reshape(size, size)


def apply_unitary(state: DensityOperator, op: ModeOperator | np.ndarray, modes: Sequence[str]) -> DensityOperator:
    """Conjugate ``state`` by ``op`` acting on the listed modes."""
    axes = [_mode_index(state, m) for m in modes]
    u = op.matrix if isinstance(op, ModeOperator) else np.asarray(op, dtype=complex)
    mat = _apply_sandwich(state.matrix, state.dims, axes, u, u.conj().T)
    return DensityOperator(mat, state.modes, state.dims, weight=state.weight)


def apply_kraus(state: DensityOperator, kraus: Iterable[np.ndarray], modes: Sequence[str], weight=None) -> DensityOperator:
    axes = [_mode_index(state, m) for m in modes]
    out = np.zeros_like(state.matrix)
    for k in kraus:
        out += _apply_sandwich(state.matrix, state.dims, axes, k, k.conj().T)
    return DensityOperator(out, state.modes, state.dims, weight=state.weight if weight is None else weight)


def beamsplitter_unitary(transmittance: float, dim_a: int, dim_b: int) -> np.ndarray:
    """Two-mode mixing unitary on ``(a, b)``.

    Maps ``a^dag -> sqrt(1-T) a^dag + sqrt(T) b^dag`` and
    ``b^dag -> sqrt(1-T) b^dag - sqrt(T) a^dag``, so a photon entering ``a``
    leaves in ``b`` with amplitude ``+sqrt(T)``. Exact on the subspace with at
    most ``min(dim_a, dim_b) - 1`` photons in total.
    """
    if not 0.0 <= transmittance <= 1.0:
        raise FockError(f"transmittance must lie in [0, 1], got {transmittance}")
    theta = np.arcsin(np.sqrt(transmittance))
    a = np.kron(annihilation(dim_a - 1).matrix, np.eye(dim_b))
    b = np.kron(np.eye(dim_a), annihilation(dim_b - 1).matrix)
    gen = theta * (a @ b.conj().T - a.conj().T @ b)
    return expm(gen)


def beamsplitter(state: DensityOperator, mode_a: str, mode_b: str, transmittance: float) -> DensityOperator:
    ia, ib = _mode_index(state, mode_a), _mode_index(state, mode_b)
    u = beamsplitter_unitary(transmittance, state.dims[ia], state.dims[ib])
    return apply_unitary(state, u, (mode_a, mode_b))


def loss_kraus(eta: float, dim: int) -> list[np.ndarray]:
    """Kraus operators ``sqrt((1-eta)^k / k!) eta^(n/2) a^k`` of pure loss."""
    if not 0.0 <= eta <= 1.0:
        raise FockError(f"efficiency must lie in [0, 1], got {eta}")
    a = annihilation(dim - 1).matrix
    n = np.arange(dim)
    with np.errstate(invalid="ignore", divide="ignore"):
        damp = np.diag(np.where(n == 0, 1.0, eta ** (n / 2.0)))
    ops = []
    ak = np.eye(dim)
    for k in range(dim):
        coeff = np.sqrt((1.0 - eta) ** k / factorial(k)) if k else 1.0
        ops.append(coeff * damp @ ak)
        ak = ak @ a
    return ops


def loss_channel(state: DensityOperator, mode: str, eta: float) -> DensityOperator:
    """Pure-loss channel of efficiency ``eta`` on one mode."""
    idx = _mode_index(state, mode)
    return apply_kraus(state, loss_kraus(eta, state.dims[idx]), (mode,))


def loss_adjoint(op: ModeOperator, mode: str, eta: float) -> ModeOperator:
    """Heisenberg-picture loss: ``sum_k K_k^dag X K_k``."""
    idx = _mode_index(op, mode)
    out = np.zeros_like(op.matrix)
    for k in loss_kraus(eta, op.dims[idx]):
        out += _apply_sandwich(op.matrix, op.dims, [idx], k.conj().T, k)
    return ModeOperator(out, op.modes, op.dims)


def partial_trace(state: DensityOperator, keep: Sequence[str]) -> DensityOperator:
    """Reduce to the modes in ``keep`` (their original order is kept)."""
    keep = list(keep)
    if not keep:
        raise FockError("keep-set must not be empty; use DensityOperator.trace")
    for m in keep:
        _mode_index(state, m)
    n = len(state.modes)
    kept = [i for i, m in enumerate(state.modes) if m in keep]
    gone = [i for i in range(n) if i not in kept]
    t = state.matrix.reshape(state.dims + state.dims)
    letters = "abcdefghijklmnop"
    ket = [letters[i] for i in range(n)]
    bra = [letters[n + i] for i in range(n)]
    for i in gone:
        bra[i] = ket[i]
    out = "".join(ket[i] for i in kept) + "".join(bra[i] for i in kept)
    red = np.einsum("".join(ket) + "".join(bra) + "->" + out, t)
    dims = tuple(state.dims[i] for i in kept)
    size = int(np.prod(dims))
    return DensityOperator(red.reshape(size, size), tuple(state.modes[i] for i in kept), dims, weight=state.weight)


def trace_distance(rho: DensityOperator | np.ndarray, sigma: DensityOperator | np.ndarray) -> float:
    r = rho.matrix if isinstance(rho, ModeOperator) else np.asarray(rho)
    s = sigma.matrix if isinstance(sigma, ModeOperator) else np.asarray(sigma)
    diff = r - s
    return 0.5 * float(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))).sum())
