"""Pure-Python fallback for the compiled kernels (dense matrix exponentials)."""

import numpy as np
from scipy.linalg import expm


def _ladder(dim):
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)


def noclick_blocks(params, lam, cutoff):
    """Qubit blocks of the no-click operators, shape (k, 2, 2).

    Same contract as the compiled version: ``params`` rows hold
    (xi_amp, xi_phase, alpha_amp, alpha_phase), ``lam`` holds 1 - eta_D.
    """
    params = np.ascontiguousarray(params, dtype=float)
    lam = np.ascontiguousarray(lam, dtype=float)
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    if lam.shape[0] != params.shape[0]:
        raise ValueError("lam length must match params rows")
    dim = cutoff + 1
    a = _ladder(dim)
    ad = a.conj().T
    a2, ad2 = a @ a, ad @ ad
    out = np.zeros((params.shape[0], 2, 2), dtype=complex)
    powers = np.arange(dim)
    for i, (xa, xp, aa, ap) in enumerate(params):
        xi = xa * np.exp(1j * xp)
        alpha = aa * np.exp(1j * ap)
        s_dag = expm(-0.5 * (np.conj(xi) * a2 - xi * ad2))
        d_dag = expm(-(alpha * ad - np.conj(alpha) * a))
        w = (d_dag @ s_dag)[:, :2]
        with np.errstate(invalid="ignore"):
            weights = np.where(powers == 0, 1.0, lam[i] ** powers)
        out[i] = (w.conj().T * weights) @ w
    return out
