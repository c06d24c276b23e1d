import numpy as np
import pytest

from exhaustible_mfg.errors import NewtonDivergence
from exhaustible_mfg.hjb import derivative_field, hjb_residual, solve_hjb_backward
from exhaustible_mfg.model import Grid, ModelParams, TerminalPayoff
from exhaustible_mfg.tridiag import thomas_solve

REF_PARAMS = ModelParams(1.0, 0.0, 1.0, 1.0, 0.25)


def _solve(params, nx, nt, ell=1.0, uT=None):
    g = Grid(nx, nt, params.L, params.T)
    uT = uT or TerminalPayoff.zero(g)
    return g, solve_hjb_backward(params, g, uT, np.full(nt + 1, ell))


def test_thomas_matches_dense():
    rng = np.random.default_rng(1)
    n = 30
    lo, up = rng.uniform(-1, 0, n), rng.uniform(-1, 0, n)
    d = 2.5 + rng.uniform(0, 1, n)
    rhs = rng.normal(size=n)
    A = np.diag(d) + np.diag(lo[1:], -1) + np.diag(up[:-1], 1)
    assert np.allclose(thomas_solve(lo, d, up, rhs), np.linalg.solve(A, rhs), atol=1e-13)


def test_zero_intercept_zero_solution():
    _, s = _solve(ModelParams(0.5, 0.1, 1.0, 1.0, 1.0), 50, 50, ell=0.0)
    assert np.all(s.u.values == 0.0) and np.all(s.q.values == 0.0)


def test_small_sigma_sign_structure():
    g, s = _solve(ModelParams(1e-3, 0.0, 1.0, 1.0, 1.0), 100, 200)
    interior = (g.x > 0.1) & (g.x < 0.9)
    assert s.u.values.min() >= -1e-10
    ux = s.ux.values[:, interior]
    assert ux.min() >= -1e-8 and ux.max() <= 1 + 1e-8


def test_boundary_conditions_and_bounds():
    g, s = _solve(ModelParams(0.5, 0.1, 1.0, 1.0, 1.0), 100, 200, ell=0.8)
    assert np.all(s.u.values[:, 0] == 0.0)
    assert np.all(s.ux.values[:, -1] == 0.0)
    assert s.u.values.min() >= -1e-10
    assert np.all(np.diff(s.u.values, axis=1) >= -1e-8)
    assert s.q.values.min() >= 0 and s.q.values.max() <= 0.5 + 1e-10


def test_step_residual_contract():
    params = ModelParams(0.5, 0.1, 1.0, 1.0, 1.0)
    g = Grid(200, 400, 1.0, 1.0)
    ell = 1 - 0.3 * np.sin(3 * g.t) ** 2
    uT = TerminalPayoff.polynomial([0, 0.4, -0.2], g)
    s = solve_hjb_backward(params, g, uT, ell)
    assert hjb_residual(s, params, g).max() <= 1e-10
    assert np.array_equal(s.u.values[-1], uT.values)


def test_self_convergence_under_refinement():
    _, ref = _solve(REF_PARAMS, 400, 6400)
    errs = []
    for nx, nt in [(25, 25), (50, 100), (100, 400)]:
        _, s = _solve(REF_PARAMS, nx, nt)
        errs.append(np.max(np.abs(s.u.values - ref.u.values[::6400 // nt, ::400 // nx])))
    assert errs[0] / errs[1] >= 3 and errs[1] / errs[2] >= 3


def test_halving_dt_changes_by_order_dt():
    prev, diffs = None, []
    for nt in (50, 100, 200, 400):
        _, s = _solve(REF_PARAMS, 100, nt)
        if prev is not None:
            diffs.append(np.max(np.abs(s.u.values[0] - prev)))
        prev = s.u.values[0]
    assert all(diffs[i] / diffs[i + 1] >= 1.8 for i in range(len(diffs) - 1))


def test_intercept_above_one_rejected():
    g = Grid(10, 10, 1.0, 1.0)
    with pytest.raises(ValueError):
        solve_hjb_backward(REF_PARAMS, g, TerminalPayoff.zero(g), np.full(11, 1.1))


def test_sweep_cap_raises():
    params = ModelParams(0.01, 0.0, 1.0, 1.0, 50.0)
    g = Grid(200, 8, 1.0, 50.0)
    with pytest.raises(NewtonDivergence):
        solve_hjb_backward(params, g, TerminalPayoff.zero(g), np.ones(9), max_sweeps=2)


def test_derivative_stencils():
    g = Grid(40, 8, 1.0, 1.0)
    x = g.x
    assert np.allclose(derivative_field(x, g.dx)[:-1], 1.0, atol=1e-13)
    assert np.allclose(derivative_field(x**2, g.dx)[1:-1], 2 * x[1:-1], atol=1e-12)
    lam = np.pi / 2
    err = np.abs(derivative_field(np.sin(lam * x), g.dx)[1:-1] - lam * np.cos(lam * x[1:-1]))
    assert err.max() <= lam**3 * g.dx**2 / 6 * 1.1
    assert derivative_field(x**2, g.dx)[-1] == 0.0
