import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import runs
from conftest import one_player_game
from kefce.bench import gen_random_game
from kefce.errors import RangeError
from kefce.evaluate import kefce_gap
from kefce.game import counterfactual_losses, play_episodes
from kefce.kefr import (
    KEFRLearner,
    Rate,
    episodes_per_round,
    estimate_statistics,
    importance_values,
    learning_rate,
    run_kefr_bandit,
    run_kefr_full,
    sampling_plans,
    typeI_estimates,
    typeII_estimates,
)
from kefce.policy import CorrelatedPolicy, balanced_policy_set, uniform_policy


def test_learning_rate_examples():
    assert learning_rate("full", 1, 1, 2, 2, 4).eta == pytest.approx(math.sqrt(math.log(2)), rel=1e-15)
    etas = [learning_rate("full", 3, 2, 7, 3, t).eta for t in (1, 10, 100, 1000)]
    assert all(a > b for a, b in zip(etas, etas[1:]))
    for h in (1, 2, 5):
        assert learning_rate("bandit", h, 1, 4, 2, 100).loss_cap == h
    with pytest.raises(ValueError):
        learning_rate("full", 1, 1, 1, 2, 0)
    with pytest.raises(ValueError):
        learning_rate("bandit", 1, 1, 1, 2, 10, failure_prob=1.0)


def test_blind_budget_on_a_one_step_game_finds_the_best_arm():
    g = one_player_game([[[0.2, 0.8]]])
    run = run_kefr_full(g, 0, 2000)
    avg = run.policies[0].mean(axis=0)[0]
    assert avg[1] > 0.95
    assert run.policies[0][-1, 0, 1] > run.policies[0][10, 0, 1]


def test_episodes_per_round_examples():
    assert episodes_per_round(3, 1) == 6
    assert episodes_per_round(2, 1) == 3
    assert episodes_per_round(3, 3) == 3
    assert episodes_per_round(3, 0) == 3


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 8))
def test_one_exploration_episode_per_plan(horizon, k):
    g = gen_random_game(0, players=1, horizon=horizon, actions=2, signals=1)
    plans = sampling_plans(g, k)
    assert len(plans) == episodes_per_round(horizon, k)
    assert len({p.key for p in plans}) == len(plans)
    kh = min(k, horizon)
    assert len(plans) <= 3 * horizon * math.comb(horizon, kh)


def test_blind_budget_explores_every_earlier_layer():
    g = gen_random_game(0, horizon=3)
    plans = sampling_plans(g, 0)
    assert [(p.kind, p.layer, sorted(p.explore)) for p in plans] == [
        ("II", 0, [0]), ("II", 1, [0, 1]), ("II", 2, [0, 1, 2])]


@pytest.mark.parametrize("horizon,k", [(2, 1), (3, 1), (3, 2), (3, 3)])
def test_bandit_episode_counter(horizon, k):
    g = gen_random_game(3, horizon=horizon)
    rounds = 5
    run = run_kefr_bandit(g, k, rounds, seed=1)
    kh = min(k, horizon)
    assert run.episodes == 2 * rounds * (math.comb(horizon + 1, kh + 1) + kh - 1)
    assert run.episode_log == [run.episodes // rounds * (t + 1) for t in range(rounds)]


@pytest.mark.parametrize("feedback", ["full", "bandit"])
def test_time_selections_only_read_earlier_layers(feedback):
    g = gen_random_game(5, horizon=3, actions=2, states_per_layer=2)
    learner = KEFRLearner(g, 0, 2, Rate(0.1, 3.0 if feedback == "bandit" else None), feedback)
    table = learner.policy()
    assert np.isfinite(table).all()
    # Recomputing from the finished table reproduces what was used, and
    # the same computation on an unfinished table is rejected.
    blank = np.full_like(table, np.nan)
    for x, s in learner.selections.items():
        data = learner.infoset_data(x)
        again = data.own_probability(table)
        if data.weights is not None:
            again = again * data.weights
        assert np.array_equal(again, s)
        if data.layer > 0:
            assert np.isnan(data.own_probability(blank)).all()
            with pytest.raises(RangeError):
                learner.minimizer(x).observe_time_selection(data.own_probability(blank))


def test_full_feedback_is_deterministic():
    g = gen_random_game(9, horizon=3)
    a, b = run_kefr_full(g, 1, 30), run_kefr_full(g, 1, 30)
    assert all(np.array_equal(x, y) for x, y in zip(a.policies, b.policies))


def test_bandit_is_deterministic_given_the_seed():
    g = gen_random_game(9, horizon=3)
    a, b, c = (run_kefr_bandit(g, 2, 30, seed=s) for s in (4, 4, 5))
    assert all(np.array_equal(x, y) for x, y in zip(a.policies, b.policies))
    assert not all(np.array_equal(x, y) for x, y in zip(a.policies, c.policies))


def test_zero_sampling_probability_gives_zero_estimate():
    g = gen_random_game(2, horizon=2)
    table = uniform_policy(g, 0)
    table[:, 0], table[:, 1] = 1.0, 0.0
    batch = play_episodes(g, [table, uniform_policy(g, 1)], 50, np.random.default_rng(0))
    zeroed = table.copy()
    zeroed[:, 0], zeroed[:, 1] = 0.0, 1.0
    _, _, value = importance_values(g, 0, np.ones(50, dtype=int), zeroed[None],
                                    np.zeros(50, dtype=int), batch)
    assert (value == 0).all()


def test_estimators_cover_their_kinds():
    g = gen_random_game(6, horizon=3)
    rng = np.random.default_rng(0)
    profile = [uniform_policy(g, j) for j in range(2)]
    star = balanced_policy_set(g, 0)
    first, n1 = typeI_estimates(g, 0, 2, profile, star, rng)
    second, n2 = typeII_estimates(g, 0, 2, profile, star, rng)
    assert n1 + n2 == episodes_per_round(3, 2)
    assert all(r.kind == "I" for rs in first.histories.values() for r in rs)
    assert all(r.kind == "II" for rs in second.histories.values() for r in rs)
    for v in list(first.values.values()) + list(second.values.values()):
        assert v.min() >= 0


SNAPSHOTS = [(1, 2, 1, 3), (2, 2, 2, 7), (3, 3, 1, 5), (4, 3, 2, 2), (5, 3, 0, 4)]


def snapshot_check(seed, horizon, k, round_, repeats=2 * 10**5):
    """Largest estimate error in standard errors, and largest capped estimate over the horizon."""
    g = gen_random_game(seed, horizon=horizon, actions=2, states_per_layer=2)
    run = run_kefr_bandit(g, k, round_ + 1, seed=seed)
    profile = [p[round_] for p in run.policies]
    rng = np.random.default_rng(100 + seed)
    worst_z, worst_cap = 0.0, 0.0
    for i in range(g.num_players):
        star = balanced_policy_set(g, i)
        stats = estimate_statistics(g, i, k, profile, star, rng, repeats)
        exact = counterfactual_losses(g, profile, i).total
        learner = KEFRLearner(g, i, k, Rate(1.0, float(horizon)), "bandit", star)
        for x, mean in stats.mean.items():
            data = learner.infoset_data(x)
            select = data.own_probability(profile[i]) * data.weights
            # A cell never hit has no spread to measure; one draw at the cap bounds it.
            with np.errstate(divide="ignore"):
                floor = horizon / (select * stats.repeats)
            se = np.maximum(stats.standard_error(x), floor[:, None])
            worst_z = max(worst_z, float((np.abs(mean - exact[x][None, :]) / se).max()))
            worst_cap = max(worst_cap, float((select * stats.largest[x].max(axis=1)).max()) / horizon)
    return worst_z, worst_cap


@pytest.mark.parametrize("seed,horizon,k,round_", SNAPSHOTS)
def test_estimates_are_unbiased_and_capped(seed, horizon, k, round_):
    worst_z, worst_cap = snapshot_check(seed, horizon, k, round_)
    assert worst_z <= 4
    assert worst_cap <= 1 + 1e-12


def test_gap_shrinks_like_inverse_square_root():
    g = gen_random_game(7, horizon=2)
    sizes = [64, 128, 256, 512, 1024, 2048]
    gaps = [kefce_gap(g, run_kefr_full(g, 1, t).average(), 1).gap for t in sizes]
    slope = np.polyfit(np.log(sizes), np.log(gaps), 1)[0]
    assert -0.7 <= slope <= -0.3


def window_gaps(run, game):
    quarter = run.rounds // 4
    return [kefce_gap(game, CorrelatedPolicy([p[w * quarter:(w + 1) * quarter] for p in run.policies]), 1).gap
            for w in range(4)]


def test_window_averages_improve_on_the_random_game():
    g = runs.game("random")
    for run in [runs.full_run("random"), runs.bandit_run("random", 0)]:
        gaps = window_gaps(run, g)
        assert all(a >= b for a, b in zip(gaps, gaps[1:]))


def test_window_averages_on_the_containment_game_stay_at_zero():
    g = runs.game("containment")
    gaps = window_gaps(runs.full_run("containment"), g)
    assert max(gaps) <= 1e-12
