"""Backward HJB solve for the value function of a single producer.

The producer faces the price intercept l(t) = 1 - kappa*qbar(t) and earns the
Hamiltonian ((l - u_x)^+)^2 / 4. Each time step is backward Euler with
implicit diffusion and discounting; the Hamiltonian is frozen at the latest
inner iterate and the step is re-solved until it stops moving. Boundary
conditions: Dirichlet u = 0 at x = 0 (eliminated) and a reflected ghost node
u[nx+1] = u[nx-1] at x = L.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import NewtonDivergence
from .model import DiscreteField, Grid, ModelParams, TerminalPayoff
from .tridiag import thomas_factor, thomas_solve_factored

HJB_TOL = 1e-11  # sweep target; the step contract is 1e-10
MAX_SWEEPS = 50


@dataclass
class HjbSolution:
    u: DiscreteField
    ux: DiscreteField
    q: DiscreteField
    ell: np.ndarray
    newton_residuals: np.ndarray
    sweeps: np.ndarray


@njit(cache=True, nogil=True)
def _slope(v, dx, out):
    n = v.shape[0] - 1
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dx)
    for j in range(1, n):
        out[j] = (v[j + 1] - v[j - 1]) / (2.0 * dx)
    out[n] = 0.0
    return out


@njit(cache=True, nogil=True)
def _hamiltonian(v, ell, dx, slope, out):
    _slope(v, dx, slope)
    for j in range(v.shape[0]):
        gap = ell - slope[j]
        out[j] = 0.25 * gap * gap if gap > 0.0 else 0.0
    return out


@njit(cache=True, nogil=True)
def _backward_sweep(uT, ell, dx, dt, sigma, r, tol, max_sweeps):
    nt = ell.shape[0] - 1
    nx = uT.shape[0] - 1
    u = np.empty((nt + 1, nx + 1))
    u[nt] = uT
    beta = dt * sigma * sigma / (2.0 * dx * dx)
    lower = np.full(nx, -beta)
    diag = np.full(nx, 1.0 + r * dt + 2.0 * beta)
    upper = np.full(nx, -beta)
    lower[nx - 1] = -2.0 * beta       # ghost node at L
    cp, inv = thomas_factor(lower, diag, upper)

    resid = np.zeros(nt)
    sweeps = np.zeros(nt, dtype=np.int64)
    h_old = np.empty(nx + 1)
    h_new = np.empty(nx + 1)
    slope = np.empty(nx + 1)
    rhs = np.empty(nx)
    sol = np.empty(nx)
    v = np.empty(nx + 1)
    failed = -1
    for n in range(nt - 1, -1, -1):
        v[:] = u[n + 1]
        v[0] = 0.0
        _hamiltonian(v, ell[n], dx, slope, h_old)
        res = np.inf
        k = 0
        while k < max_sweeps:
            for j in range(nx):
                rhs[j] = u[n + 1, j + 1] + dt * h_old[j + 1]
            thomas_solve_factored(lower, cp, inv, rhs, sol)
            v[0] = 0.0
            v[1:] = sol
            _hamiltonian(v, ell[n], dx, slope, h_new)
            res = 0.0
            for j in range(1, nx + 1):
                d = abs(h_new[j] - h_old[j])
                if d > res:
                    res = d
            h_old[:] = h_new
            k += 1
            if res <= tol:
                break
        u[n] = v
        resid[n] = res
        sweeps[n] = k
        if res > tol and failed < 0:
            failed = n
    return u, resid, sweeps, failed


def derivative_field(u, dx: float) -> np.ndarray:
    """Discrete u_x: centered inside, one-sided second order at x = 0, zero at x = L.

    The zero at x = L is the centered stencil applied with the reflected
    ghost node that encodes u_x(t, L) = 0.
    """
    values = u.values if isinstance(u, DiscreteField) else np.asarray(u, dtype=float)
    out = np.empty_like(values)
    out[..., 1:-1] = (values[..., 2:] - values[..., :-2]) / (2 * dx)
    out[..., 0] = (-3 * values[..., 0] + 4 * values[..., 1] - values[..., 2]) / (2 * dx)
    out[..., -1] = 0.0
    return out


def production_rate(ux: np.ndarray, ell: np.ndarray) -> np.ndarray:
    """q = (l(t) - u_x)^+ / 2 on every slice."""
    return 0.5 * np.maximum(np.asarray(ell)[:, None] - ux, 0.0)


def solve_hjb_backward(params: ModelParams, grid: Grid, uT: TerminalPayoff, ell,
                       tol: float = HJB_TOL, max_sweeps: int = MAX_SWEEPS) -> HjbSolution:
    """Solve the HJB equation backward from u(T) = u_T for a given intercept path.

    Raises:
        NewtonDivergence: if some step's frozen-coefficient sweeps do not bring
            the nonlinear residual under ``tol`` within ``max_sweeps``.
    """
    ell = np.asarray(ell, dtype=float)
    if ell.shape != (grid.nt + 1,):
        raise ValueError(f"ell must have {grid.nt + 1} entries")
    if ell.max() > 1.0 + 1e-9:
        raise ValueError("intercept path exceeds 1; qbar must be nonnegative")
    u, resid, sweeps, failed = _backward_sweep(
        np.asarray(uT.values, dtype=float), ell, grid.dx, grid.dt,
        params.sigma, params.r, tol, max_sweeps)
    if failed >= 0:
        raise NewtonDivergence(
            f"HJB step {failed} residual {resid[failed]:.3e} after {max_sweeps} sweeps; "
            "reduce dt")
    ux = derivative_field(u, grid.dx)
    q = production_rate(ux, ell)
    return HjbSolution(DiscreteField(u, "value"), DiscreteField(ux, "value"),
                       DiscreteField(q, "rate"), ell, resid, sweeps)


def hjb_residual(sol: HjbSolution, params: ModelParams, grid: Grid) -> np.ndarray:
    """Per-step sup norm of the discrete equation residual, recomputed from u."""
    u = sol.u.values
    dx, dt = grid.dx, grid.dt
    out = np.zeros(grid.nt)
    for n in range(grid.nt):
        v = u[n]
        ghost = np.concatenate([v, v[-2:-1]])
        lap = (ghost[2:] - 2 * ghost[1:-1] + ghost[:-2]) / dx**2
        ux = derivative_field(v, dx)
        ham = 0.25 * np.maximum(sol.ell[n] - ux, 0.0) ** 2
        res = (u[n + 1] - v)[1:] / dt + 0.5 * params.sigma**2 * lap - params.r * v[1:] + ham[1:]
        out[n] = np.max(np.abs(res))
    return out
