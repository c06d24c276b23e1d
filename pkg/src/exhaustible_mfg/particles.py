"""Reflected/absorbed particle dynamics and empirical-measure statistics.

Each particle follows

    dX = -rate(t, X) dt + sigma dW - dxi,

reflected below L (xi is the local time pushing it back) and frozen at the
first time it reaches 0. Time stepping is Euler-Maruyama with the one-step
Skorokhod projection X <- min(X + dY, L); an optional Brownian-bridge test
kills particles whose continuous path would have touched 0 between two
positive endpoints.

The kernel below is particle-major: for one particle it advances several
"rows" (strategies) with the same noise draws, which gives common random
numbers for payoff comparisons at no extra RNG cost.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import rng
from .model import DiscreteField, Grid, InitialMeasure, ModelParams, TerminalPayoff

CHUNK = 2048

KIND_SCALED = 0
KIND_CONSTANT = 1
KIND_MYOPIC = 2

MODE_FROZEN = 0
MODE_LIVE = 1


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("THREADS", "1")))
    except ValueError:
        return 1


def skorokhod_map(path, L: float):
    """Reflect a discrete path below L.

    Returns ``(X, xi)`` with xi_k = max_{j<=k} (Y_j - L)^+ and X = Y - xi.
    """
    y = np.asarray(path, dtype=float)
    xi = np.maximum.accumulate(np.maximum(y - L, 0.0))
    return y - xi, xi


@njit(cache=True, nogil=True, inline="always")
def _interp(field, t, x, dt_grid, dx, L):
    nt = field.shape[0] - 1
    nx = field.shape[1] - 1
    tt = t / dt_grid
    n = int(tt)
    if n > nt - 1:
        n = nt - 1
    if n < 0:
        n = 0
    wt = tt - n
    if wt > 1.0:
        wt = 1.0
    xc = x
    if xc < 0.0:
        xc = 0.0
    if xc > L:
        xc = L
    xx = xc / dx
    j = int(xx)
    if j > nx - 1:
        j = nx - 1
    wx = xx - j
    lo = (1.0 - wx) * field[n, j] + wx * field[n, j + 1]
    hi = (1.0 - wx) * field[n + 1, j] + wx * field[n + 1, j + 1]
    return (1.0 - wt) * lo + wt * hi


@njit(cache=True, nogil=True)
def _terminal(x, coeffs, samples, use_coeffs, dx):
    if use_coeffs:
        acc = 0.0
        for c in range(coeffs.shape[0] - 1, -1, -1):
            acc = acc * x + coeffs[c]
        return acc
    nx = samples.shape[0] - 1
    xx = x / dx
    j = int(xx)
    if j > nx - 1:
        j = nx - 1
    if j < 0:
        j = 0
    w = xx - j
    return (1.0 - w) * samples[j] + w * samples[j + 1]


@njit(cache=True, nogil=True)
def _simulate_chunk(x0, keys, group, g_lo, n_groups, qf, uxf, dt_grid, dx, L, sigma, r,
                    kappa, T, substeps, bridge, kinds, sparams, mode, qbar_src, n_players,
                    ut_coeffs, ut_samples, use_coeffs, rec_steps, want_sums):
    n = x0.shape[0]
    S = kinds.shape[0]
    nt = qf.shape[0] - 1
    K = nt * substeps
    dts = dt_grid / substeps
    sq = sigma * math.sqrt(dts)
    two_pi = 2.0 * math.pi
    inv_bridge = 2.0 / (sigma * sigma * dts)
    R = rec_steps.shape[0]
    discount = np.empty(K + 1)
    for k in range(K + 1):
        discount[k] = math.exp(-r * (k * dts))

    payoff = np.zeros((S, n))
    absorbed = np.zeros((S, n), dtype=np.bool_)
    tau = np.full((S, n), T)
    xT = np.zeros((S, n))
    ltime = np.zeros((S, n))
    rec = np.full((R, n), np.nan)
    sums = np.zeros((n_groups if want_sums else 1, K + 1))

    xs = np.empty(S)
    alive = np.empty(S, dtype=np.bool_)
    rate = np.empty(S)
    denom = 1.0 / (n_players - 1) if n_players > 1 else 0.0

    for i in range(n):
        key = keys[i]
        g = group[i]
        for s in range(S):
            xs[s] = x0[i]
            alive[s] = True
        ri = 0
        for k in range(K + 1):
            t = k * dts
            disc = discount[k]
            w = 0.5 * dts if (k == 0 or k == K) else dts
            # own feedback contribution (row 0 is the reference population)
            own = 0.0
            if alive[0]:
                own = _interp(qf, t, xs[0], dt_grid, dx, L)
            if want_sums:
                sums[g - g_lo, k] += own
            while ri < R and rec_steps[ri] == k:
                if alive[0]:
                    rec[ri, i] = xs[0]
                ri += 1
            if mode == 0:
                qb = qbar_src[0, k]
            else:
                qb = (qbar_src[g, k] - own) * denom
            for s in range(S):
                if not alive[s]:
                    rate[s] = 0.0
                    continue
                kind = kinds[s]
                if kind == 0:
                    if s == 0:
                        rs = own
                    else:
                        rs = _interp(qf, t, xs[s], dt_grid, dx, L)
                    rs *= sparams[s]
                elif kind == 1:
                    rs = sparams[s]
                else:
                    gap = 1.0 - kappa * qb - _interp(uxf, t, xs[s], dt_grid, dx, L)
                    rs = 0.5 * gap if gap > 0.0 else 0.0
                rate[s] = rs
                payoff[s, i] += w * disc * (1.0 - kappa * qb - rs) * rs
            if k == K:
                break
            c = np.uint64(3 * k)
            u1 = rng.uniform01(key, c)
            u2 = rng.uniform01(key, c + np.uint64(1))
            z = math.sqrt(-2.0 * math.log(u1)) * math.cos(two_pi * u2)
            ub = rng.uniform01(key, c + np.uint64(2))
            for s in range(S):
                if not alive[s]:
                    continue
                xpre = xs[s]
                y = xpre - rate[s] * dts + sq * z
                if y > L:
                    ltime[s, i] += y - L
                    y = L
                dead = y <= 0.0
                if not dead and bridge:
                    if ub < math.exp(-inv_bridge * xpre * y):
                        dead = True
                if dead:
                    alive[s] = False
                    absorbed[s, i] = True
                    tau[s, i] = t + dts
                    xs[s] = 0.0
                else:
                    xs[s] = y
        disc_T = math.exp(-r * T)
        for s in range(S):
            xT[s, i] = xs[s]
            payoff[s, i] += disc_T * _terminal(xs[s], ut_coeffs, ut_samples, use_coeffs, dx)
    return payoff, absorbed, tau, xT, ltime, rec, sums


@dataclass
class KernelInputs:
    """Everything the kernel needs besides the particles themselves."""

    params: ModelParams
    grid: Grid
    q: np.ndarray
    ux: np.ndarray
    terminal: TerminalPayoff
    substeps: int = 4
    bridge: bool = True

    @property
    def n_steps(self) -> int:
        return self.grid.nt * self.substeps

    def sim_times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * (self.grid.dt / self.substeps)


@dataclass
class KernelOutput:
    payoff: np.ndarray
    absorbed: np.ndarray
    tau: np.ndarray
    x_final: np.ndarray
    local_time: np.ndarray
    recorded: np.ndarray
    group_sums: np.ndarray | None


def initial_positions(m0: InitialMeasure, keys: np.ndarray) -> np.ndarray:
    u1 = rng.uniforms(keys, rng.INIT_OFFSET)
    u2 = rng.uniforms(keys, rng.INIT_OFFSET + 1)
    return m0.sample(u1, u2)


def run_kernel(inp: KernelInputs, x0, keys, group, kinds, sparams, mode=MODE_FROZEN,
               qbar_src=None, n_players=1, rec_steps=(), want_sums=False) -> KernelOutput:
    """Chunk the particles, run the kernel on a thread pool and stitch the results.

    Chunks have a fixed size and partial group sums are combined in chunk
    order, so the output does not depend on the number of threads.
    """
    n = len(x0)
    K = inp.n_steps
    kinds = np.ascontiguousarray(kinds, dtype=np.int64)
    sparams = np.ascontiguousarray(sparams, dtype=float)
    group = np.ascontiguousarray(group, dtype=np.int64)
    if qbar_src is None:
        qbar_src = np.zeros((1, K + 1))
    qbar_src = np.ascontiguousarray(qbar_src, dtype=float)
    rec_steps = np.ascontiguousarray(sorted(rec_steps), dtype=np.int64)
    coeffs = inp.terminal.coeffs
    use_coeffs = coeffs is not None
    ut_coeffs = np.asarray(coeffs if use_coeffs else (0.0,), dtype=float)
    ut_samples = np.ascontiguousarray(inp.terminal.values, dtype=float)
    p, g = inp.params, inp.grid

    starts = list(range(0, n, CHUNK))

    def work(start):
        sl = slice(start, min(start + CHUNK, n))
        gs = group[sl]
        g_lo = int(gs.min()) if len(gs) else 0
        n_groups = int(gs.max()) - g_lo + 1 if len(gs) else 1
        out = _simulate_chunk(
            np.ascontiguousarray(x0[sl], dtype=float), np.ascontiguousarray(keys[sl]), gs, g_lo,
            n_groups, inp.q, inp.ux, float(g.dt), float(g.dx), float(p.L), float(p.sigma),
            float(p.r), float(p.kappa), float(p.T),
            inp.substeps, inp.bridge, kinds, sparams, mode, qbar_src, n_players,
            ut_coeffs, ut_samples, use_coeffs, rec_steps, want_sums)
        return g_lo, out

    threads = thread_count()
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, starts))
    else:
        results = [work(s) for s in starts]

    parts = [res for _, res in results]
    payoff = np.concatenate([r[0] for r in parts], axis=1)
    absorbed = np.concatenate([r[1] for r in parts], axis=1)
    tau = np.concatenate([r[2] for r in parts], axis=1)
    xT = np.concatenate([r[3] for r in parts], axis=1)
    lt = np.concatenate([r[4] for r in parts], axis=1)
    rec = np.concatenate([r[5] for r in parts], axis=1)
    sums = None
    if want_sums:
        total = int(group.max()) + 1 if n else 1
        sums = np.zeros((total, K + 1))
        for g_lo, r in results:
            sums[g_lo:g_lo + r[6].shape[0]] += r[6]
    return KernelOutput(payoff, absorbed, tau, xT, lt, rec, sums)


@dataclass
class ParticleEnsemble:
    n_particles: int
    positions: np.ndarray
    alive: np.ndarray
    tau: np.ndarray
    local_time: np.ndarray
    rng_streams: np.ndarray
    dt_sim: float


@dataclass
class EmpiricalPath:
    """Empirical sub-probability measures at recorded grid times.

    ``positions[r]`` are the alive atoms at ``times[r]``, each carrying mass
    1/N. ``exit_rate`` is recorded on every grid time.
    """

    n_particles: int
    step_indices: np.ndarray
    times: np.ndarray
    positions: list
    grid_times: np.ndarray
    exit_rate: np.ndarray

    @property
    def alive_fraction(self) -> np.ndarray:
        return np.array([len(p) for p in self.positions]) / self.n_particles


def simulate_ensemble(params: ModelParams, grid: Grid, q_field, m0: InitialMeasure, N: int,
                      seed: int, substeps: int = 4, bridge_correction: bool = True,
                      output_steps=None, terminal: TerminalPayoff | None = None):
    """Simulate N independent particles under the feedback rate field ``q_field``.

    Args:
        output_steps: grid time indices at which alive positions are kept;
            default is every grid time when that fits in ~2e7 numbers and
            otherwise 11 evenly spaced indices.

    Returns:
        ``(ParticleEnsemble, EmpiricalPath)`` for the final state and the
        recorded empirical measures.
    """
    if N < 1 or substeps < 1:
        raise ValueError("N and substeps must be positive")
    q = q_field.values if isinstance(q_field, DiscreteField) else np.asarray(q_field, dtype=float)
    if output_steps is None:
        if N * (grid.nt + 1) <= 20_000_000:
            output_steps = np.arange(grid.nt + 1)
        else:
            output_steps = np.unique(np.linspace(0, grid.nt, 11).round().astype(int))
    output_steps = np.asarray(output_steps, dtype=int)
    terminal = terminal or TerminalPayoff.zero(grid)
    inp = KernelInputs(params, grid, np.ascontiguousarray(q, dtype=float),
                       np.zeros_like(q), terminal, substeps, bridge_correction)
    keys = rng.stream_keys(seed, np.arange(N))
    x0 = initial_positions(m0, keys)
    out = run_kernel(inp, x0, keys, np.zeros(N, dtype=np.int64), [KIND_SCALED], [1.0],
                     rec_steps=output_steps * substeps)
    alive = ~out.absorbed[0]
    ens = ParticleEnsemble(N, out.x_final[0], alive, out.tau[0], out.local_time[0], keys,
                           grid.dt / substeps)
    positions = [row[~np.isnan(row)] for row in out.recorded]
    exit_rate = _exit_rate(out.absorbed[0], out.tau[0], grid.t, N)
    path = EmpiricalPath(N, output_steps, grid.t[output_steps], positions, grid.t, exit_rate)
    return ens, path


def _exit_rate(absorbed, tau, times, N):
    taus = np.sort(tau[absorbed])
    # absorption is registered at the end of a sim step; tolerate rounding of t
    return np.searchsorted(taus, times * (1 + 1e-12) + 1e-15, side="right") / N


def default_test_functions(L: float):
    lam1 = math.pi / (2 * L)
    width = 0.02 * L
    return {
        "one": lambda x: np.ones_like(x),
        "x": lambda x: x,
        "x2": lambda x: x**2,
        "sin1": lambda x: np.sin(lam1 * x),
        "upper_half": lambda x: 0.5 * (1.0 + np.tanh((x - 0.5 * L) / width)),
    }


def weak_error(positions, n_particles: int, m_slice, grid: Grid, test_functions=None) -> float:
    """Largest gap between empirical and PDE integrals over a family of test functions."""
    positions = np.asarray(positions, dtype=float)
    funcs = test_functions or default_test_functions(grid.L)
    if isinstance(funcs, dict):
        funcs = list(funcs.values())
    m_slice = np.asarray(m_slice, dtype=float)
    worst = 0.0
    for phi in funcs:
        emp = float(np.sum(phi(positions))) / n_particles if len(positions) else 0.0
        ref = float(np.dot(phi(grid.x) * m_slice, grid.weights))
        worst = max(worst, abs(emp - ref))
    return worst


def w1_subprobability(positions, n_particles: int, m_slice, grid: Grid, refine: int = 50) -> float:
    """L1 distance between the distribution functions of two sub-probability measures.

    The empirical CDF counts alive atoms (mass 1/N each); the PDE CDF is the
    cumulative trapezoid of the density, interpolated linearly on a mesh
    ``refine`` times finer than the grid.
    """
    m_slice = np.asarray(m_slice, dtype=float)
    x = grid.x
    cdf_nodes = np.concatenate([[0.0], np.cumsum(0.5 * grid.dx * (m_slice[1:] + m_slice[:-1]))])
    fine = np.linspace(0.0, grid.L, grid.nx * refine + 1)
    cdf_m = np.interp(fine, x, cdf_nodes)
    pos = np.sort(np.asarray(positions, dtype=float))
    cdf_n = np.searchsorted(pos, fine, side="right") / n_particles
    diff = np.abs(cdf_n - cdf_m)
    h = fine[1] - fine[0]
    return float(h * (diff.sum() - 0.5 * (diff[0] + diff[-1])))
