"""Monte Carlo payoffs for the mean-field problem and the N-player game.

A producer's payoff is the discounted running profit e^{-rs} p_s rho_s up to
its exhaustion time plus e^{-rT} u_T(X_T). In the mean-field problem the price
is 1 - kappa*qbar(t) - rho with qbar frozen at the equilibrium path; in the
N-player game it is 1 - (rho^i + kappa*qbar^{-i}) with qbar^{-i} the sum of the
other players' rates divided by N - 1 (dead players contribute zero).

Because the other players follow the equilibrium feedback, their paths do not
depend on what player i does. The N-player estimator exploits this in two
passes: the first simulates every player under feedback and records, per
round, the total feedback production on the simulation clock; the second
replays selected players under each deviation with the same noise, reading
qbar^{-i} off the recorded totals minus the player's own feedback rate.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import rng
from .coupler import MfgSolution
from .particles import (KIND_CONSTANT, KIND_MYOPIC, KIND_SCALED, MODE_FROZEN, MODE_LIVE,
                        KernelInputs, initial_positions, run_kernel)

FEEDBACK = "feedback_mfg"
SCALED = "scaled_feedback"
CONSTANT = "constant_rate"
MYOPIC = "myopic_best_response"

_KIND_CODES = {FEEDBACK: KIND_SCALED, SCALED: KIND_SCALED, CONSTANT: KIND_CONSTANT,
               MYOPIC: KIND_MYOPIC}

# key groups: mean-field runs use group 0, round k of a game uses group k + 1
_MF_GROUP = 0


@dataclass(frozen=True)
class StrategySpec:
    """A single-state Markov strategy, or an open-loop constant rate."""

    kind: str
    param: float = 1.0

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if not (math.isfinite(self.param) and self.param >= 0):
            raise ValueError("strategy parameter must be finite and >= 0")

    @classmethod
    def feedback(cls) -> "StrategySpec":
        return cls(FEEDBACK, 1.0)

    @classmethod
    def scaled(cls, alpha: float) -> "StrategySpec":
        return cls(SCALED, float(alpha))

    @classmethod
    def constant(cls, c: float) -> "StrategySpec":
        return cls(CONSTANT, float(c))

    @classmethod
    def myopic(cls) -> "StrategySpec":
        return cls(MYOPIC, 0.0)

    @property
    def label(self) -> str:
        if self.kind in (FEEDBACK, MYOPIC):
            return self.kind
        return f"{self.kind}({self.param:g})"

    def code(self) -> tuple[int, float]:
        return _KIND_CODES[self.kind], (1.0 if self.kind == FEEDBACK else self.param)


def default_deviation_family() -> list[StrategySpec]:
    """Scaled feedback, constant rates and the myopic best response."""
    fam = [StrategySpec.scaled(a) for a in (0.0, 0.5, 0.8, 1.2, 1.5, 2.0)]
    fam += [StrategySpec.constant(c) for c in (0.1, 0.25, 0.5)]
    fam.append(StrategySpec.myopic())
    return fam


def _kernel_inputs(sol: MfgSolution, substeps: int, bridge: bool) -> KernelInputs:
    m = sol.model
    return KernelInputs(m.params, m.grid, np.ascontiguousarray(sol.q.values),
                        np.ascontiguousarray(sol.ux.values), m.terminal, substeps, bridge)


def _rows(strategies) -> tuple[np.ndarray, np.ndarray]:
    # row 0 is always the equilibrium feedback; it drives the recorded sums
    codes = [StrategySpec.feedback().code()] + [s.code() for s in strategies]
    return (np.array([c[0] for c in codes], dtype=np.int64),
            np.array([c[1] for c in codes], dtype=float))


def _mean_stderr(samples: np.ndarray) -> tuple[float, float]:
    samples = np.asarray(samples, dtype=float)
    mean = float(np.mean(samples))
    if samples.size < 2:
        return mean, float("nan")
    return mean, float(np.std(samples, ddof=1) / math.sqrt(samples.size))


def mean_field_payoffs(sol: MfgSolution, strategies, N_mc: int, seed: int, substeps: int = 4,
                       bridge: bool = True) -> np.ndarray:
    """Per-particle payoffs against the frozen equilibrium aggregate.

    Returns an array of shape (1 + len(strategies), N_mc); row 0 is the
    feedback strategy and all rows share the same noise.
    """
    if N_mc < 1:
        raise ValueError("N_mc must be positive")
    inp = _kernel_inputs(sol, substeps, bridge)
    keys = rng.stream_keys(seed, np.arange(N_mc), _MF_GROUP)
    x0 = initial_positions(sol.model.initial, keys)
    qbar = np.interp(inp.sim_times(), sol.model.grid.t, sol.qbar)[None, :]
    kinds, sparams = _rows(strategies)
    out = run_kernel(inp, x0, keys, np.zeros(N_mc, dtype=np.int64), kinds, sparams,
                     mode=MODE_FROZEN, qbar_src=qbar)
    return out.payoff


def mean_field_payoff(sol: MfgSolution, strategy: StrategySpec, N_mc: int, seed: int,
                      substeps: int = 4, bridge: bool = True) -> tuple[float, float]:
    """Monte Carlo estimate (mean, stderr) of the mean-field payoff of ``strategy``."""
    pay = mean_field_payoffs(sol, [strategy], N_mc, seed, substeps, bridge)
    return _mean_stderr(pay[1])


@dataclass
class _GameSamples:
    """Per-round averages of the replayed players' payoffs (rows as in ``_rows``)."""

    per_round: np.ndarray   # (rows, rounds)
    n_players: int
    n_rounds: int
    deviators: int


def _play_rounds(sol: MfgSolution, strategies, N: int, n_rounds: int, seed: int,
                 deviator_ids, substeps: int, bridge: bool) -> _GameSamples:
    if N < 2:
        raise ValueError("the game needs N >= 2")
    if n_rounds < 1:
        raise ValueError("n_rounds must be positive")
    inp = _kernel_inputs(sol, substeps, bridge)
    ids = np.arange(N)
    keys = np.concatenate([rng.stream_keys(seed, ids, k + 1) for k in range(n_rounds)])
    group = np.repeat(np.arange(n_rounds, dtype=np.int64), N)
    x0 = initial_positions(sol.model.initial, keys)
    first = run_kernel(inp, x0, keys, group, [KIND_SCALED], [1.0], want_sums=True)

    dev = np.asarray(deviator_ids, dtype=np.int64)
    sel = (np.arange(n_rounds)[:, None] * N + dev[None, :]).ravel()
    kinds, sparams = _rows(strategies)
    second = run_kernel(inp, x0[sel], keys[sel], group[sel], kinds, sparams, mode=MODE_LIVE,
                        qbar_src=first.group_sums, n_players=N)
    per_round = second.payoff.reshape(len(kinds), n_rounds, len(dev)).mean(axis=2)
    return _GameSamples(per_round, N, n_rounds, len(dev))


def nplayer_payoff(sol: MfgSolution, i: int, deviation: StrategySpec, N: int, n_rounds: int,
                   seed: int, substeps: int = 4, bridge: bool = True) -> tuple[float, float]:
    """Payoff (mean, stderr over rounds) of player i deviating while the others play feedback."""
    if not 0 <= i < N:
        raise ValueError("player index out of range")
    s = _play_rounds(sol, [deviation], N, n_rounds, seed, [i], substeps, bridge)
    return _mean_stderr(s.per_round[1])


@dataclass
class NashGapReport:
    """Feedback and deviation payoffs per N, with the resulting gap.

    Differences are paired (same noise for the feedback and the deviating
    copy of each replayed player), so their standard errors are much smaller
    than those of the payoffs themselves.
    """

    n_values: list[int]
    strategies: list[str]
    n_rounds: list[int]
    deviators: list[int]
    seed: int
    j_feedback: list[tuple[float, float]]
    j_dev: list[list[tuple[float, float]]]
    diff: list[list[tuple[float, float]]]
    gap: list[float]
    gap_stderr: list[float]
    argmax: list[str]
    spearman_rho: float
    trend_sign: int
    note: str = ("finite deviation family: a lower bound on the true gap over all "
                 "admissible controls")
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None, **extra) -> str:
        payload = self.to_dict()
        payload.update(extra)
        text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["N", "strategy", "j_mean", "j_stderr", "diff_mean", "diff_stderr",
                        "is_argmax"])
            for a, N in enumerate(self.n_values):
                jm, js = self.j_feedback[a]
                w.writerow([N, FEEDBACK, repr(jm), repr(js), repr(0.0), repr(0.0), 0])
                for b, label in enumerate(self.strategies):
                    dm, ds = self.diff[a][b]
                    jm, js = self.j_dev[a][b]
                    w.writerow([N, label, repr(jm), repr(js), repr(dm), repr(ds),
                                int(label == self.argmax[a])])


def _rounds_for(n_rounds, N: int) -> int:
    if isinstance(n_rounds, dict):
        if N in n_rounds:
            return int(n_rounds[N])
        if str(N) in n_rounds:
            return int(n_rounds[str(N)])
        raise KeyError(f"no round count for N={N}")
    return int(n_rounds)


def nash_gap_experiment(sol: MfgSolution, N_list, deviation_family, n_rounds, seed: int,
                        substeps: int = 4, bridge: bool = True,
                        max_deviators: int = 1000) -> NashGapReport:
    """Estimate gap(N) = max over the family of J_dev - J_feedback for each N.

    Args:
        n_rounds: rounds per N, an int or a mapping N -> int.
        max_deviators: how many players per round are replayed as the
            deviator. Every player sees the same law, so pooling the first
            ``min(N, max_deviators)`` of them is unbiased; rounds stay the
            independent unit for standard errors.
    """
    family = list(deviation_family)
    if not family:
        raise ValueError("deviation family must be nonempty")
    N_list = [int(N) for N in N_list]
    rep = dict(n_values=N_list, strategies=[s.label for s in family], n_rounds=[],
               deviators=[], seed=int(seed), j_feedback=[], j_dev=[], diff=[], gap=[],
               gap_stderr=[], argmax=[])
    for N in N_list:
        R = _rounds_for(n_rounds, N)
        D = min(N, max_deviators)
        s = _play_rounds(sol, family, N, R, seed, np.arange(D), substeps, bridge)
        fb = s.per_round[0]
        rep["n_rounds"].append(R)
        rep["deviators"].append(D)
        rep["j_feedback"].append(_mean_stderr(fb))
        rep["j_dev"].append([_mean_stderr(row) for row in s.per_round[1:]])
        diffs = [_mean_stderr(row - fb) for row in s.per_round[1:]]
        rep["diff"].append(diffs)
        best = int(np.argmax([d[0] for d in diffs]))
        rep["gap"].append(diffs[best][0])
        rep["gap_stderr"].append(diffs[best][1])
        rep["argmax"].append(family[best].label)
    if len(N_list) >= 2 and np.ptp(rep["gap"]) > 0:
        rho = float(stats.spearmanr(N_list, rep["gap"]).statistic)
    else:
        rho = float("nan")
    sign = 0 if not math.isfinite(rho) or rho == 0 else (1 if rho > 0 else -1)
    return NashGapReport(**rep, spearman_rho=rho, trend_sign=sign)
