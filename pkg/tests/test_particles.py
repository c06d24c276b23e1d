import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exhaustible_mfg import rng
from exhaustible_mfg.fokker_planck import fourier_mass
from exhaustible_mfg.model import (Grid, InitialMeasure, ModelParams, project_measure_to_cells,
                                   trapezoid)
from exhaustible_mfg.particles import (default_test_functions, simulate_ensemble, skorokhod_map,
                                       w1_subprobability, weak_error)


def test_skorokhod_constant_excursion():
    X, xi = skorokhod_map(np.full(6, 2.0), 1.0)
    assert np.all(X == 1.0) and np.all(xi == 1.0)


def test_skorokhod_below_barrier():
    X, xi = skorokhod_map([0.2, 0.4, 0.6], 1.0)
    assert np.array_equal(X, [0.2, 0.4, 0.6]) and np.all(xi == 0)


def test_skorokhod_formula():
    X, xi = skorokhod_map([0.8, 1.3, 0.9], 1.0)
    assert np.allclose(X, [0.8, 1.0, 0.6], atol=1e-15)
    assert np.allclose(xi, [0.0, 0.3, 0.3], atol=1e-15)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=1, max_size=60),
       st.floats(0.1, 2.0))
def test_skorokhod_properties(increments, L):
    Y = np.cumsum(increments)
    X, xi = skorokhod_map(Y, L)
    assert np.all(X <= L + 1e-14)
    assert np.all(np.diff(xi) >= 0)
    free = xi == 0
    assert np.array_equal(X[free], Y[free])
    X2, xi2 = skorokhod_map(X, L)
    assert np.max(np.abs(X2 - X)) <= 1e-14 and np.all(xi2 <= 1e-14)


def test_rng_uniforms_are_uniform_and_deterministic():
    from scipy import stats
    keys = rng.stream_keys(3, np.arange(20000))
    u = rng.uniforms(keys, 5)
    assert u.min() > 0 and u.max() < 1
    assert stats.kstest(u, "uniform").pvalue > 1e-3
    assert np.array_equal(u, rng.uniforms(rng.stream_keys(3, np.arange(20000)), 5))
    assert len(np.unique(keys)) == len(keys)
    assert not np.array_equal(keys, rng.stream_keys(3, np.arange(20000), group=1))


def test_small_sigma_deterministic_exhaustion():
    g = Grid(200, 400, 1.0, 1.0)
    ens, path = simulate_ensemble(ModelParams(1e-8, 0.1, 1.0, 1.0, 1.0), g,
                                  np.full((401, 201), 0.5), InitialMeasure.atoms([[0.4, 1.0]]),
                                  50, 3)
    assert not ens.alive.any()
    assert np.allclose(ens.tau, 0.8, atol=g.dt)
    assert path.exit_rate[-1] == 1.0
    assert path.exit_rate[np.searchsorted(g.t, 0.79)] == 0.0


def test_single_particle_reproducible():
    g = Grid(50, 100, 1.0, 1.0)
    q = np.full((101, 51), 0.2)
    a = simulate_ensemble(ModelParams(0.5, 0.1, 1, 1, 1), g, q, InitialMeasure.uniform(0.5, 1), 1, 9)
    b = simulate_ensemble(ModelParams(0.5, 0.1, 1, 1, 1), g, q, InitialMeasure.uniform(0.5, 1), 1, 9)
    assert np.array_equal(a[0].positions, b[0].positions)
    assert np.array_equal(a[1].positions[-1], b[1].positions[-1])
    assert a[0].tau[0] == b[0].tau[0]


def test_thread_count_does_not_change_output(monkeypatch, coarse_solution):
    model = coarse_solution.model
    outs = []
    for threads in ("1", "4"):
        monkeypatch.setenv("THREADS", threads)
        ens, path = simulate_ensemble(model.params, model.grid, coarse_solution.q, model.initial,
                                      9000, 5)
        outs.append((ens.positions, ens.tau, ens.local_time, path.exit_rate))
    for x, y in zip(*outs):
        assert np.array_equal(x, y)


def test_ensemble_invariants(coarse_solution):
    model = coarse_solution.model
    ens, path = simulate_ensemble(model.params, model.grid, coarse_solution.q, model.initial,
                                  3000, 1)
    L, T = model.params.L, model.params.T
    assert np.all(ens.positions[ens.alive] > 0) and np.all(ens.positions[ens.alive] <= L)
    assert np.all(ens.positions[~ens.alive] == 0)
    assert np.all(ens.tau <= T) and np.all(ens.tau[ens.alive] == T)
    assert np.all(ens.local_time >= 0) and ens.local_time.max() > 0
    assert path.exit_rate[-1] + ens.alive.mean() == 1.0
    assert np.all(np.diff(path.exit_rate) >= 0)
    af = path.alive_fraction
    assert np.all(np.diff(af) <= 0)
    assert np.allclose(af, 1 - path.exit_rate[path.step_indices])


def test_monotone_coupling(coarse_solution):
    model = coarse_solution.model
    g = model.grid
    low = np.full((g.nt + 1, g.nx + 1), 0.1)
    high = low + 0.15 * (1 + np.sin(g.x))[None, :]
    a, pa = simulate_ensemble(model.params, g, low, model.initial, 4000, 2)
    b, pb = simulate_ensemble(model.params, g, high, model.initial, 4000, 2)
    assert np.all(b.tau <= a.tau)
    both = a.alive & b.alive
    assert np.all(b.positions[both] <= a.positions[both])


def test_zero_drift_matches_fourier_mass():
    # mass far from 0 and a short horizon: almost nothing is absorbed
    params = ModelParams(0.5, 0.0, 1.0, 1.0, 0.1)
    g = Grid(50, 100, 1.0, 0.1)
    m0 = InitialMeasure.uniform(0.5, 1.0)
    ens, _ = simulate_ensemble(params, g, np.zeros((101, 51)), m0, 100_000, 0,
                               output_steps=[100])
    eta = fourier_mass(params, m0, 0.1)
    se = np.sqrt(eta * (1 - eta) / 1e5)
    assert abs(ens.alive.mean() - eta) <= 3 * se


def test_reflection_bias_shrinks_with_substeps():
    # the one-step projection at L monitors the barrier only at step ends, so
    # survival is biased upward by O(sqrt(dt)); refining the clock shrinks it
    params = ModelParams(1.0, 0.0, 1.0, 1.0, 0.5)
    g = Grid(50, 25, 1.0, 0.5)
    m0 = InitialMeasure.uniform(0.5, 1.0)
    eta = fourier_mass(params, m0, 0.5)
    N = 100_000
    bias = [simulate_ensemble(params, g, np.zeros((26, 51)), m0, N, 21, substeps=sub,
                              output_steps=[25])[0].alive.mean() - eta for sub in (1, 16)]
    se = np.sqrt(2 * eta * (1 - eta) / N)
    assert bias[0] > 3 * se / np.sqrt(2)
    assert bias[0] - bias[1] > 4 * se


def test_weak_error_examples():
    g = Grid(100, 8, 1.0, 1.0)
    m = np.full(101, 0.8)
    one = {"one": lambda x: np.ones_like(x)}
    pos = np.linspace(0.05, 0.95, 30)
    assert weak_error(pos, 40, m, g, one) == pytest.approx(abs(30 / 40 - 0.8), abs=1e-12)
    assert weak_error(np.zeros(0), 10, np.zeros(101), g) == 0.0
    assert w1_subprobability(np.zeros(0), 10, np.zeros(101), g) == 0.0


def test_weak_error_clt_scaling():
    g = Grid(200, 8, 1.0, 1.0)
    x = g.x
    dens = np.where(x >= 0.5, 2.0, 0.0)
    m = dens * 0.7   # sub-probability with mass 0.7
    N = 2000
    stats = []
    for seed in range(30):
        keys = rng.stream_keys(seed, np.arange(N), 99)
        u = rng.uniforms(keys, 0)
        alive = rng.uniforms(keys, 1) < 0.7
        pos = (0.5 + 0.5 * u)[alive]
        stats.append(weak_error(pos, N, m, g))
    assert np.mean(stats) <= 3 / np.sqrt(N)
    assert len(default_test_functions(1.0)) == 5


def test_w1_of_exact_quantiles_is_small():
    g = Grid(200, 8, 1.0, 1.0)
    m = project_measure_to_cells(InitialMeasure.uniform(0.5, 1.0), g)
    N = 10_000
    pos = 0.5 + 0.5 * (np.arange(N) + 0.5) / N
    assert w1_subprobability(pos, N, m, g) <= 1e-3
    assert trapezoid(m, g) == pytest.approx(1.0, abs=1e-10)
