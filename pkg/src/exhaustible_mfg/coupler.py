"""Outer fixed point coupling the HJB, Fokker-Planck and market solvers.

The only quantity exchanged between the two PDEs is the aggregate production
path qbar(t): the HJB sees it through l = 1 - kappa*qbar, and the density it
produces returns qbar_new(t) = integral of q*m. The loop is damped Picard,

    qbar <- (1 - theta) qbar + theta qbar_new,

stopped when sup_t |qbar_new - qbar| <= tol.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, OuterNoConvergence
from .fokker_planck import FpSolution, solve_fp_forward
from .hjb import HjbSolution, solve_hjb_backward
from .market import MarketSlice, clear_market_slice
from .model import DiscreteField, Model, ModelParams, project_measure_to_cells, trapezoid

DEFAULT_DAMPING = 0.5
DEFAULT_TOL = 1e-6
DEFAULT_MAX_OUTER = 500


@dataclass
class MfgSolution:
    model: Model
    u: DiscreteField
    ux: DiscreteField
    m: DiscreteField
    q: DiscreteField
    p: DiscreteField
    market: list[MarketSlice]
    qbar: np.ndarray
    picard_history: list[float]
    converged: bool
    hjb: HjbSolution = field(repr=False)
    fp: FpSolution = field(repr=False)
    m0_cells: np.ndarray = field(repr=False)

    @property
    def eta(self) -> np.ndarray:
        return self.fp.eta

    @property
    def ell(self) -> np.ndarray:
        return np.array([s.ell for s in self.market])

    def value_at_start(self) -> float:
        """Trapezoidal integral of u(0, .) against the projected initial density."""
        return float(trapezoid(self.u.values[0] * self.m0_cells, self.model.grid))


def _aggregate(q: np.ndarray, m: np.ndarray, model: Model) -> np.ndarray:
    return trapezoid(q * m, model.grid)


def price_field(ux: np.ndarray, m: np.ndarray, model: Model, tol: float = 1e-13):
    """Clear the market on every time slice; returns (p, slices)."""
    p = np.empty_like(ux)
    slices = []
    for n in range(ux.shape[0]):
        p[n], _, sl, _ = clear_market_slice(ux[n], m[n], model.params.kappa, tol=tol,
                                            dx=model.grid.dx)
        slices.append(sl)
    return p, slices


def solve_decoupled(model: Model, ell=None):
    """One HJB pass with a prescribed intercept (default l = 1) followed by one FP pass."""
    grid = model.grid
    ell = np.ones(grid.nt + 1) if ell is None else np.asarray(ell, dtype=float)
    hjb = solve_hjb_backward(model.params, grid, model.terminal, ell)
    m0 = project_measure_to_cells(model.initial, grid)
    fp = solve_fp_forward(model.params, grid, hjb.q, m0)
    return hjb, fp


def solve_mfg(model: Model, damping: float = DEFAULT_DAMPING, tol: float = DEFAULT_TOL,
              max_outer: int = DEFAULT_MAX_OUTER, qbar0=None,
              raise_on_failure: bool = True) -> MfgSolution:
    """Compute the equilibrium (u, m, q, p) by damped iteration on qbar.

    Args:
        model: validated model.
        damping: relaxation weight theta in (0, 1].
        tol: stopping threshold on sup_t |qbar_new - qbar|.
        max_outer: iteration cap.
        qbar0: initial aggregate path (scalar or nt+1 vector); default 0.
        raise_on_failure: raise ``OuterNoConvergence`` at the cap (the partial
            solution is attached) instead of returning it with
            ``converged=False``.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    grid, kappa = model.grid, model.params.kappa
    m0 = project_measure_to_cells(model.initial, grid)
    qbar = np.zeros(grid.nt + 1) if qbar0 is None else np.broadcast_to(
        np.asarray(qbar0, dtype=float), (grid.nt + 1,)).copy()

    history: list[float] = []
    converged = False
    for _ in range(max_outer):
        ell = 1.0 - kappa * qbar
        hjb = solve_hjb_backward(model.params, grid, model.terminal, ell)
        fp = solve_fp_forward(model.params, grid, hjb.q, m0)
        qbar_new = _aggregate(hjb.q.values, fp.m.values, model)
        gap = float(np.max(np.abs(qbar_new - qbar)))
        history.append(gap)
        if gap <= tol:
            converged = True
            break
        qbar = (1.0 - damping) * qbar + damping * qbar_new

    p, slices = price_field(hjb.ux.values, fp.m.values, model)
    sol = MfgSolution(model, hjb.u, hjb.ux, fp.m, hjb.q, DiscreteField(p, "price"), slices,
                      qbar_new, history, converged, hjb, fp, m0)
    if not converged and raise_on_failure:
        raise OuterNoConvergence(
            f"outer loop stalled at gap {history[-1]:.3e} after {max_outer} iterations",
            solution=sol)
    return sol


def uniqueness_residual(sol_a: MfgSolution, sol_b: MfgSolution, params: ModelParams | None = None):
    """Both terms of the monotonicity identity for two candidate equilibria.

    Returns ``(weighted_G_residual, qbar_gap)`` where the first is the
    discounted integral of (q_a - q_b)^2 (m_a + m_b) and the second is kappa
    times the discounted integral of (qbar_a - qbar_b)^2. Both vanish when the
    two solutions coincide.
    """
    ga, gb = sol_a.model.grid, sol_b.model.grid
    if not ga.same_as(gb):
        raise GridMismatch("solutions live on different grids")
    params = params or sol_a.model.params
    disc = np.exp(-params.r * ga.t)
    wt = np.full(ga.nt + 1, ga.dt)
    wt[0] = wt[-1] = 0.5 * ga.dt
    qa, qb = sol_a.q.values, sol_b.q.values
    ma, mb = sol_a.m.values, sol_b.m.values
    inner = trapezoid((qa - qb) ** 2 * (ma + mb), ga)
    first = float(wt @ (disc * inner))
    bar_a = _aggregate(qa, ma, sol_a.model)
    bar_b = _aggregate(qb, mb, sol_b.model)
    second = float(params.kappa * (wt @ (disc * (bar_a - bar_b) ** 2)))
    return first, second
