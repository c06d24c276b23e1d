import json

import numpy as np
import pytest

from exhaustible_mfg.game import (StrategySpec, default_deviation_family, mean_field_payoff,
                                  mean_field_payoffs, nash_gap_experiment, nplayer_payoff)


def test_strategy_validation():
    with pytest.raises(ValueError):
        StrategySpec.scaled(-0.1)
    with pytest.raises(ValueError):
        StrategySpec("greedy")
    assert StrategySpec.constant(0.25).label == "constant_rate(0.25)"
    assert len(default_deviation_family()) == 10


def test_zero_production_earns_nothing(coarse_solution):
    assert mean_field_payoff(coarse_solution, StrategySpec.constant(0.0), 500, 1) == (0.0, 0.0)
    assert nplayer_payoff(coarse_solution, 1, StrategySpec.constant(0.0), 2, 30, 4)[0] == 0.0


def test_feedback_matches_value_function(coarse_solution):
    mean, se = mean_field_payoff(coarse_solution, StrategySpec.feedback(), 20_000, 2)
    assert abs(mean - coarse_solution.value_at_start()) <= 3 * se + 2e-2
    assert se > 0


def test_scaled_feedback_is_not_better(coarse_solution):
    alphas = (0.5, 0.8, 1.2, 1.5)
    pay = mean_field_payoffs(coarse_solution, [StrategySpec.scaled(a) for a in alphas],
                             20_000, 3, substeps=2)
    for row in pay[1:]:
        d = row - pay[0]
        assert d.mean() <= 3 * d.std(ddof=1) / np.sqrt(d.size)


def test_frozen_myopic_equals_feedback(coarse_solution):
    # against the frozen aggregate the myopic rate is the feedback rate itself
    pay = mean_field_payoffs(coarse_solution, [StrategySpec.myopic()], 2000, 5, substeps=1)
    assert np.max(np.abs(pay[1] - pay[0])) <= 1e-6


def test_large_game_matches_mean_field(coarse_solution):
    mf, mf_se = mean_field_payoff(coarse_solution, StrategySpec.feedback(), 20_000, 6, substeps=1)
    nn, nn_se = nplayer_payoff(coarse_solution, 0, StrategySpec.feedback(), 10_000, 10, 6,
                               substeps=1)
    assert abs(nn - mf) <= 3 * np.hypot(mf_se, nn_se) + 2e-2


def test_exchangeable_players(coarse_solution):
    a, sa = nplayer_payoff(coarse_solution, 0, StrategySpec.feedback(), 5, 1500, 8, substeps=1)
    b, sb = nplayer_payoff(coarse_solution, 3, StrategySpec.feedback(), 5, 1500, 8, substeps=1)
    assert abs(a - b) <= 3 * np.hypot(sa, sb)


def test_stderr_halves_with_double_rounds(coarse_solution):
    _, s1 = nplayer_payoff(coarse_solution, 0, StrategySpec.scaled(0.5), 4, 800, 10, substeps=1)
    _, s2 = nplayer_payoff(coarse_solution, 0, StrategySpec.scaled(0.5), 4, 1600, 11, substeps=1)
    assert 0.35 <= (s2 / s1) ** 2 <= 0.7


def test_feedback_only_family_has_zero_gap(coarse_solution):
    rep = nash_gap_experiment(coarse_solution, [5, 50], [StrategySpec.feedback()], 20, 1,
                              substeps=1)
    assert rep.gap == [0.0, 0.0]


def test_report_structure(coarse_solution, tmp_path):
    fam = [StrategySpec.scaled(0.5), StrategySpec.constant(0.25), StrategySpec.myopic()]
    rep = nash_gap_experiment(coarse_solution, [4, 40, 400], fam, {4: 400, 40: 40, 400: 10},
                              7, substeps=1)
    assert rep.n_rounds == [400, 40, 10] and rep.deviators == [4, 40, 400]
    for a in range(3):
        assert all(se > 0 for _, se in rep.j_dev[a])
        assert all(d[0] <= rep.gap[a] for d in rep.diff[a])
        assert rep.gap_stderr[a] > 0
    rep.to_csv(tmp_path / "gap.csv")
    lines = (tmp_path / "gap.csv").read_text().splitlines()
    assert lines[0] == "N,strategy,j_mean,j_stderr,diff_mean,diff_stderr,is_argmax"
    assert len(lines) == 1 + 3 * 4
    back = json.loads(rep.to_json(tmp_path / "gap.json"))
    assert back["n_values"] == [4, 40, 400] and "spearman_rho" in back


def test_reports_are_deterministic(coarse_solution):
    fam = [StrategySpec.myopic()]
    a = nash_gap_experiment(coarse_solution, [6], fam, 50, 3, substeps=1)
    b = nash_gap_experiment(coarse_solution, [6], fam, 50, 3, substeps=1)
    assert a.to_json() == b.to_json()


def test_myopic_against_scaled_family(coarse_solution):
    scaled = [StrategySpec.scaled(a) for a in (0.0, 0.5, 0.8, 1.2, 1.5, 2.0)]
    fam = scaled + [StrategySpec.myopic()]
    rep = nash_gap_experiment(coarse_solution, [10, 1000], fam, {10: 3000, 1000: 30}, 12,
                              substeps=1)
    # counting alpha = 1 (gain 0) among the scaled strategies
    small, big = rep.diff
    best_scaled = [max(0.0, max(d[0] for d in row[:-1])) for row in rep.diff]
    # large N: the myopic gain sits within noise of the scaled maximum
    assert abs(big[-1][0] - best_scaled[1]) <= 3 * big[-1][1]
    # small N: reacting to the live aggregate is a genuine improvement
    assert small[-1][0] - best_scaled[0] > 3 * small[-1][1]
