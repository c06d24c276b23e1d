"""Thomas algorithm for tridiagonal systems (no pivoting).

Row i of the system reads ``lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]``;
``lower[0]`` and ``upper[-1]`` are ignored. The matrices built by the PDE
solvers are diagonally dominant M-matrices, so elimination without pivoting
is stable.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def thomas_factor(lower, diag, upper):
    """Forward-elimination coefficients reusable across right-hand sides."""
    n = diag.shape[0]
    cp = np.empty(n)
    inv = np.empty(n)
    inv[0] = 1.0 / diag[0]
    cp[0] = upper[0] * inv[0]
    for i in range(1, n):
        inv[i] = 1.0 / (diag[i] - lower[i] * cp[i - 1])
        cp[i] = upper[i] * inv[i]
    return cp, inv


@njit(cache=True, nogil=True)
def thomas_solve_factored(lower, cp, inv, rhs, out):
    n = rhs.shape[0]
    out[0] = rhs[0] * inv[0]
    for i in range(1, n):
        out[i] = (rhs[i] - lower[i] * out[i - 1]) * inv[i]
    for i in range(n - 2, -1, -1):
        out[i] -= cp[i] * out[i + 1]
    return out


@njit(cache=True, nogil=True)
def thomas_solve(lower, diag, upper, rhs):
    cp, inv = thomas_factor(lower, diag, upper)
    out = np.empty(rhs.shape[0])
    return thomas_solve_factored(lower, cp, inv, rhs, out)
