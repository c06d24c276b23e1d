"""Pass/fail diagnostics on a solved model, shared by the CLI and the tests.

Each check returns a plain dict ``{"name", "passed", "value", "tolerance"}``
(plus optional detail fields) so it can be dumped to JSON unchanged.
"""

from __future__ import annotations

import numpy as np

from .coupler import MfgSolution, solve_decoupled, solve_mfg, uniqueness_residual
from .game import (StrategySpec, default_deviation_family, mean_field_payoff,
                   nash_gap_experiment)
from .hjb import hjb_residual
from .model import Model


def _check(name, passed, value, tolerance, **detail) -> dict:
    out = {"name": name, "passed": bool(passed), "value": value, "tolerance": tolerance}
    out.update(detail)
    return out


def bound_checks(sol: MfgSolution) -> list[dict]:
    """Sign and range properties every equilibrium must satisfy."""
    q, u, ux, p, eta = sol.q.values, sol.u.values, sol.ux.values, sol.p.values, sol.eta
    steps = np.diff(eta)
    return [
        _check("q_lower", q.min() >= 0.0, float(q.min()), 0.0),
        _check("q_upper", q.max() <= 0.5 + 1e-10, float(q.max()), 0.5 + 1e-10),
        _check("u_lower", u.min() >= -1e-10, float(u.min()), -1e-10),
        _check("ux_lower", ux.min() >= -1e-8, float(ux.min()), -1e-8),
        _check("p_range", p.min() >= 0.0 and p.max() <= 1.0, [float(p.min()), float(p.max())],
               [0.0, 1.0]),
        _check("eta_start", abs(eta[0] - 1.0) <= 1e-10, float(eta[0]), 1e-10),
        _check("eta_nonincreasing", steps.max() <= 1e-14, float(steps.max()), 1e-14),
    ]


def consistency_checks(sol: MfgSolution, outer_tol: float = 1e-6) -> list[dict]:
    """Discrete identities that hold by construction of the schemes.

    The market intercept (cleared on the final density) and the intercept the
    last HJB pass saw differ by at most 2*kappa*outer_tol once the outer loop
    has stopped.
    """
    grid = sol.model.grid
    mass = float(abs(sol.eta[0] - sol.eta[-1] - sol.fp.absorbed.sum()))
    res = float(hjb_residual(sol.hjb, sol.model.params, grid).max())
    kappa = sol.model.params.kappa
    self_err = float(max(abs(s.ell - (1.0 - kappa * s.qbar)) for s in sol.market))
    ell_err = float(np.max(np.abs(sol.ell - sol.hjb.ell)))
    ell_tol = 2 * kappa * outer_tol + 1e-12
    return [
        _check("fp_mass_balance", mass <= 1e-10, mass, 1e-10),
        _check("hjb_step_residual", res <= 1e-10, res, 1e-10),
        _check("market_intercept_identity", self_err <= 1e-10, self_err, 1e-10),
        _check("intercept_consistency", ell_err <= ell_tol, ell_err, ell_tol),
    ]


def uniqueness_check(model: Model, damping: float, tol: float, max_outer: int) -> list[dict]:
    """Solve from qbar = 0 and qbar = 1/2 and compare."""
    a = solve_mfg(model, damping, tol, max_outer, qbar0=0.0)
    b = solve_mfg(model, damping, tol, max_outer, qbar0=0.5)
    first, second = uniqueness_residual(a, b)
    gap = float(np.max(np.abs(a.qbar - b.qbar)))
    return [
        _check("uniqueness_weighted", first <= 1e-8, first, 1e-8),
        _check("uniqueness_aggregate", second <= 1e-8, second, 1e-8),
        _check("uniqueness_qbar_gap", gap <= 1e-4, gap, 1e-4),
    ]


def decoupled_limit_check(sol: MfgSolution, kappa_max: float = 1e-6) -> dict:
    """For negligible kappa the equilibrium matches the single-producer problem (l = 1)."""
    kappa = sol.model.params.kappa
    if kappa > kappa_max:
        return _check("decoupled_limit", True, None, None, skipped=True,
                      reason=f"kappa={kappa:g} above {kappa_max:g}")
    hjb, _ = solve_decoupled(sol.model)
    diff = float(np.max(np.abs(hjb.u.values - sol.u.values)))
    return _check("decoupled_limit", diff <= 1e-6, diff, 1e-6, skipped=False)


def verification_identity_check(sol: MfgSolution, N_mc: int, seed: int,
                                substeps: int = 4) -> dict:
    """Monte Carlo feedback payoff against the integral of u(0, .) dm0."""
    mc, se = mean_field_payoff(sol, StrategySpec.feedback(), N_mc, seed, substeps, bridge=True)
    ref = sol.value_at_start()
    tol = 3 * se + 2e-2
    return _check("verification_identity", abs(mc - ref) <= tol, abs(mc - ref), tol,
                  mc_mean=mc, mc_stderr=se, value_at_start=ref, n_mc=N_mc)


def rounds_schedule(N_list, budget: int, minimum: int = 10) -> dict:
    """Rounds per N so that every N uses about ``budget`` player-rounds."""
    return {int(N): max(minimum, int(budget) // int(N)) for N in N_list}


def nash_gap_check(sol: MfgSolution, N_list, rounds, seed: int, substeps: int = 1):
    """Gap shrinks from the smallest to the largest N and ends small."""
    rep = nash_gap_experiment(sol, N_list, default_deviation_family(), rounds, seed,
                              substeps=substeps)
    jf = abs(rep.j_feedback[-1][0])
    g_small, g_big, se_big = rep.gap[0], rep.gap[-1], rep.gap_stderr[-1]
    bound = 0.05 * jf + 3 * se_big
    checks = [
        _check("nash_gap_shrinks", g_big <= g_small, [g_small, g_big], None),
        _check("nash_gap_small", g_big <= bound, g_big, bound),
        _check("nash_gap_trend", rep.trend_sign <= 0, rep.spearman_rho, 0.0),
    ]
    return checks, rep
