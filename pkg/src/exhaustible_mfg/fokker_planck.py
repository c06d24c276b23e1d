"""Forward Fokker-Planck solve for the density of active producers.

Finite volumes on the nodes: node j owns the dual cell around x_j (half a
cell at each end), so the trapezoidal mass equals the sum of cell masses.
The leftward flux through the face between nodes j and j+1 is

    G = sigma^2/2 * (m[j+1] - m[j]) / dx + q[j+1] * m[j+1],

i.e. centered diffusion plus donor-cell upwinding for the drift -q toward the
absorbing end. The face at L carries no flux (zero total flux, the discrete
Robin condition) and m = 0 at x = 0. Backward Euler in time makes each step
an M-matrix solve, so the density stays nonnegative for any dt, and the mass
lost over a step equals dt times the flux through the first face.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import TruncationFailure
from .model import DiscreteField, Grid, InitialMeasure, ModelParams, trapezoid
from .tridiag import thomas_solve


@dataclass
class FpSolution:
    """Density path with its mass bookkeeping.

    ``exit_flux[n]`` is the flux through the first face evaluated on m(t_n);
    ``absorbed[n]`` is the mass removed during step n -> n+1.
    """

    m: DiscreteField
    eta: np.ndarray
    exit_flux: np.ndarray
    absorbed: np.ndarray


@njit(cache=True, nogil=True)
def _forward_steps(q, m0, dx, dt, sigma, absorbing):
    nt = q.shape[0] - 1
    nx = m0.shape[0] - 1
    D = 0.5 * sigma * sigma / dx
    m = np.zeros((nt + 1, nx + 1))
    m[0] = m0
    flux = np.zeros(nt + 1)
    absorbed = np.zeros(nt)
    first = 1 if absorbing else 0
    size = nx + 1 - first
    vol = np.full(size, dx)
    vol[size - 1] = 0.5 * dx
    if not absorbing:
        vol[0] = 0.5 * dx
    lower = np.zeros(size)
    diag = np.zeros(size)
    upper = np.zeros(size)
    rhs = np.zeros(size)
    flux[0] = D * m0[1] + q[0, 1] * m0[1]
    for n in range(nt):
        qn = q[n + 1]
        for k in range(size):
            j = k + first
            diag[k] = vol[k] / dt
            # face j-1/2 (absent for the reflecting node 0 in test mode)
            if j > 0:
                diag[k] += D + qn[j]
                lower[k] = -D
            # face j+1/2 (absent at L)
            if j < nx:
                diag[k] += D
                upper[k] = -(D + qn[j + 1])
            else:
                upper[k] = 0.0
            rhs[k] = vol[k] / dt * m[n, j]
        if absorbing:
            lower[0] = 0.0
        sol = thomas_solve(lower, diag, upper, rhs)
        for k in range(size):
            m[n + 1, k + first] = sol[k]
        if absorbing:
            m[n + 1, 0] = 0.0
            flux[n + 1] = D * sol[0] + qn[1] * sol[0]
            absorbed[n] = dt * flux[n + 1]
    return m, flux, absorbed


def solve_fp_forward(params: ModelParams, grid: Grid, q, m0_cells,
                     absorbing: bool = True) -> FpSolution:
    """Evolve the density under drift -q with absorption at 0 and no flux at L.

    Args:
        q: (nt+1, nx+1) nonnegative production-rate samples.
        m0_cells: nodal initial density (see ``project_measure_to_cells``).
        absorbing: ``False`` swaps the Dirichlet end for a zero-flux one;
            used to check conservation.
    """
    qv = q.values if isinstance(q, DiscreteField) else np.asarray(q, dtype=float)
    m0 = np.asarray(m0_cells, dtype=float)
    if qv.shape != (grid.nt + 1, grid.nx + 1):
        raise ValueError("q must be sampled on the full grid")
    if qv.min() < 0:
        raise ValueError("production rate must be nonnegative")
    if m0.min() < 0:
        raise ValueError("initial density must be nonnegative")
    m, flux, absorbed = _forward_steps(qv, m0, grid.dx, grid.dt, params.sigma, absorbing)
    if absorbing and m0[0] != 0.0:
        # mass sitting on the absorbing node leaves at the first step
        absorbed[0] += m0[0] * grid.weights[0]
    eta = trapezoid(m, grid)
    if not absorbing:
        flux[:] = 0.0
    return FpSolution(DiscreteField(m, "density"), eta, flux, absorbed)


def eta_of(m_slice, grid: Grid) -> float:
    """Surviving mass of one density slice (trapezoidal rule)."""
    return float(trapezoid(np.asarray(m_slice, dtype=float), grid))


def _modes_needed(sigma: float, L: float, t: float, tol: float = 1e-12) -> int:
    # |A_n| <= 2/L and successive decay factors shrink at least geometrically
    # with ratio exp(-sigma^2 pi^2 t / L^2); bound the tail by a geometric sum.
    rho = math.exp(-sigma**2 * math.pi**2 * t / L**2)
    if rho >= 1.0:
        return 10**7
    scale = 2.0 / L / (1.0 - rho)
    # smallest N with scale * exp(-sigma^2 lam_{N+1}^2 t / 2) <= tol
    need = math.log(scale / tol) * 2.0 / (sigma**2 * t)
    if need <= 0:
        return 1
    lam = math.sqrt(need)
    n_plus_1 = lam * 2 * L / math.pi / 2 + 0.5
    return max(1, int(math.ceil(n_plus_1)))


def fourier_oracle(params: ModelParams, grid: Grid, m0: InitialMeasure, t: float,
                   x=None, tol: float = 1e-12) -> np.ndarray:
    """Drift-free density at time t by its sine series.

    Eigenfunctions sin(lam_n x), lam_n = (2n-1) pi / (2L), vanish at 0 and are
    flat at L; mode n decays like exp(-sigma^2 lam_n^2 t / 2).
    """
    if t <= 0:
        raise ValueError("t must be positive")
    L = params.L
    n_modes = _modes_needed(params.sigma, L, t, tol)
    if n_modes > 10**6:
        raise TruncationFailure(f"series needs {n_modes} modes at t={t}")
    lam = (2 * np.arange(1, n_modes + 1) - 1) * np.pi / (2 * L)
    coef = (2.0 / L) * m0.sine_moments(lam) * np.exp(-0.5 * params.sigma**2 * lam**2 * t)
    xs = grid.x if x is None else np.asarray(x, dtype=float)
    out = np.zeros_like(xs, dtype=float)
    block = max(1, 2_000_000 // max(len(xs), 1))
    for s in range(0, n_modes, block):
        out += np.sin(np.outer(xs, lam[s:s + block])) @ coef[s:s + block]
    return out


def fourier_mass(params: ModelParams, m0: InitialMeasure, t: float, tol: float = 1e-12) -> float:
    """Exact surviving mass of the drift-free problem: integral of the series over [0, L]."""
    L = params.L
    n_modes = _modes_needed(params.sigma, L, t, tol)
    if n_modes > 10**6:
        raise TruncationFailure(f"series needs {n_modes} modes at t={t}")
    lam = (2 * np.arange(1, n_modes + 1) - 1) * np.pi / (2 * L)
    coef = (2.0 / L) * m0.sine_moments(lam) * np.exp(-0.5 * params.sigma**2 * lam**2 * t)
    # integral of sin(lam x) over [0, L] is 1/lam since cos(lam L) = 0
    return float(np.sum(coef / lam))


def weak_residual(m, q, m0_cells, phi, phi_t, phi_x, phi_xx, params: ModelParams,
                  grid: Grid) -> float:
    """Discrete weak-form defect against a test function phi(t, x).

    Evaluates the double integral of m(-phi_t - sigma^2/2 phi_xx + q phi_x)
    minus the integral of phi(0, .) m0, with trapezoidal weights in t and x.
    The test functions are callables of (t, x) on meshgrids.
    """
    mv = m.values if isinstance(m, DiscreteField) else np.asarray(m)
    qv = q.values if isinstance(q, DiscreteField) else np.asarray(q)
    tt, xx = np.meshgrid(grid.t, grid.x, indexing="ij")
    integrand = mv * (-phi_t(tt, xx) - 0.5 * params.sigma**2 * phi_xx(tt, xx)
                      + qv * phi_x(tt, xx))
    wt = np.full(grid.nt + 1, grid.dt)
    wt[0] = wt[-1] = 0.5 * grid.dt
    lhs = wt @ (integrand @ grid.weights)
    rhs = trapezoid(phi(np.zeros_like(grid.x), grid.x) * np.asarray(m0_cells), grid)
    return float(abs(lhs - rhs))
