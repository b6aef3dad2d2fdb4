"""No-regret learning of correlated equilibria with bounded deviations.

Each player keeps one wide-range minimizer per infoset.  Its time-selection
indices are the recommendation histories of the infoset: the kind-I ones
compete against every swap map, the kind-II ones against constant actions.
A history's time selection is the probability that the player's own
current policy produced those recommendations.

Under full feedback the exact counterfactual losses are fed back.  Under
bandit feedback each player plays extra episodes with exploration policies
interleaved into its current policy and feeds importance-weighted loss
estimates instead.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .deviation import Rechistory, effective_k, enumerate_rechistories, fill
from .game import TreeGame, counterfactual_losses, play_episodes
from .policy import BalancedPolicySet, CorrelatedPolicy, balanced_policy_set
from .regret import WideRangeMinimizer


@dataclass(frozen=True)
class Rate:
    eta: float
    loss_cap: float | None = None


def learning_rate(mode: str, horizon: int, k: int, infosets: int, actions: int, rounds: int,
                  failure_prob: float = 0.05, total_size: int | None = None) -> Rate:
    """Default step size; ``total_size`` is the sum of ``X_j * A_j`` over all players."""
    if rounds < 1:
        raise ValueError("at least one round is needed")
    kh = min(k, horizon)
    base = math.comb(horizon, kh) * infosets
    if mode == "full":
        log_a = math.log(max(actions, 2))
        return Rate(math.sqrt(base * actions**kh * log_a / (horizon**2 * rounds)))
    if mode == "bandit":
        if not 0 < failure_prob < 1:
            raise ValueError("the failure probability must lie in (0, 1)")
        size = infosets * actions if total_size is None else total_size
        iota = math.log(8 * size / failure_prob)
        return Rate(math.sqrt(base * actions ** (kh + 1) * iota / (horizon**3 * rounds)), float(horizon))
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class SamplingPlan:
    """One exploration episode: explore at ``explore`` layers, aim at ``layer``."""

    kind: str
    layer: int
    explore: frozenset
    key: tuple


def sampling_plans(game: TreeGame, k: int) -> list[SamplingPlan]:
    """All exploration episodes one player plays per round, kind-I first."""
    k = effective_k(game, k)
    plans = []
    for h in range(game.horizon):
        if k >= 1:
            n = min(k - 1, h)
            for chosen in _subsets(range(1, h + 1), n):
                explore = frozenset(t - 1 for t in chosen) | {h}
                plans.append(SamplingPlan("I", h, explore, ("I", h, frozenset(chosen))))
    for h in range(game.horizon):
        if k == 0:
            plans.append(SamplingPlan("II", h, frozenset(range(h + 1)), ("II", 0, h, frozenset())))
            continue
        for length in range(k, h + 1):
            for head in _subsets(range(1, length), k - 1):
                chosen = frozenset(head) | {length}
                explore = frozenset(t - 1 for t in chosen) | frozenset(range(length, h + 1))
                plans.append(SamplingPlan("II", h, explore, ("II", length, h, chosen)))
    return plans


def _subsets(items, n):
    return [frozenset(c) for c in itertools.combinations(items, n)]


def episodes_per_round(horizon: int, k: int) -> int:
    kh = min(k, horizon)
    return math.comb(horizon + 1, kh + 1) + kh - 1


def plan_key(r: Rechistory, layer: int, k: int) -> tuple:
    """Which exploration episode estimates the loss seen by history ``r``."""
    chosen = frozenset(t + 1 for t in r.deviation_layers)
    if r.kind == "I":
        return ("I", layer, fill(chosen, min(k - 1, layer)))
    return ("II", r.length, layer, chosen)


class _InfosetData:
    __slots__ = ("x", "layer", "histories", "n_first", "anc", "recs", "mask", "weights", "plans",
                 "plan_rows")

    def __init__(self, game: TreeGame, player: int, k: int, x: int,
                 balanced: BalancedPolicySet | None):
        index = game.infosets[player]
        self.x = x
        self.layer = h = int(index.layer[x])
        first, second = enumerate_rechistories(game, player, k, x)
        self.histories = first + second
        self.n_first = len(first)
        self.anc = index.ancestor_infosets[x, :h].copy()
        path = index.ancestor_actions[x, :h]
        n = len(self.histories)
        self.recs = np.tile(path, (n, 1))
        self.mask = np.zeros((n, h), dtype=bool)
        for row, r in enumerate(self.histories):
            for t, b in r.deviations:
                self.recs[row, t] = b
            self.mask[row, : r.length] = True
        self.weights = None
        self.plans = [plan_key(r, h, k) for r in self.histories]
        self.plan_rows: dict[tuple, list[int]] = {}
        for row, key in enumerate(self.plans):
            self.plan_rows.setdefault(key, []).append(row)
        if balanced is not None:
            star = balanced.tables[h]
            uniform = 1.0 / game.action_counts[player]
            w = np.empty(n)
            for row, r in enumerate(self.histories):
                key = self.plans[row]
                layers = [t - 1 for t in key[2]] if r.kind == "I" else (
                    [t - 1 for t in key[3]] + list(range(r.length, h)))
                w[row] = uniform * np.prod([star[self.anc[t], path[t]] for t in layers])
            self.weights = w

    def own_probability(self, table: np.ndarray) -> np.ndarray:
        if self.layer == 0:
            return np.ones(len(self.histories))
        vals = table[self.anc[None, :], self.recs]
        return np.where(self.mask, vals, 1.0).prod(axis=1)


class KEFRLearner:
    """The per-player learner; drive it with :meth:`policy` then a feedback call."""

    def __init__(self, game: TreeGame, player: int, k: int, rate: Rate, feedback: str = "full",
                 balanced: BalancedPolicySet | None = None):
        self.game = game
        self.player = player
        self.k = effective_k(game, k)
        self.rate = rate
        self.feedback = feedback
        if feedback == "bandit" and balanced is None:
            balanced = balanced_policy_set(game, player)
        self.balanced = balanced if feedback == "bandit" else None
        self.num_actions = game.action_counts[player]
        self._data: dict[int, _InfosetData] = {}
        self._minimizers: dict[int, WideRangeMinimizer] = {}
        self.table: np.ndarray | None = None
        self.selections: dict[int, np.ndarray] = {}

    def infoset_data(self, x: int) -> _InfosetData:
        data = self._data.get(x)
        if data is None:
            data = self._data[x] = _InfosetData(self.game, self.player, self.k, x, self.balanced)
        return data

    def minimizer(self, x: int) -> WideRangeMinimizer:
        m = self._minimizers.get(x)
        if m is None:
            data = self.infoset_data(x)
            variant = "stochastic" if self.feedback == "bandit" else "exact"
            m = self._minimizers[x] = WideRangeMinimizer(
                self.num_actions, data.n_first, len(data.histories) - data.n_first,
                self.rate.eta, variant, self.rate.loss_cap,
            )
        return m

    def policy(self) -> np.ndarray:
        """This round's policy, fixed one layer at a time.

        Rows start as NaN so that reading a row of the current layer or
        below before it is set would surface as an invalid time selection.
        """
        index = self.game.infosets[self.player]
        table = np.full((index.count, self.num_actions), np.nan)
        for h in range(self.game.horizon):
            for x in index.by_layer[h]:
                x = int(x)
                data = self.infoset_data(x)
                s = data.own_probability(table)
                if data.weights is not None:
                    s = s * data.weights
                m = self.minimizer(x)
                m.observe_time_selection(s)
                self.selections[x] = s
                table[x] = m.recommend()
        self.table = table
        return table

    def observe_exact(self, losses: np.ndarray) -> float:
        """Feed the exact counterfactual losses; returns a local-regret proxy."""
        proxy = 0.0
        for x, m in self._minimizers.items():
            loss = losses[x]
            m.observe_loss(loss)
            proxy += float(self.selections[x].sum() * (m.strategy @ loss - loss.min()))
        return proxy

    def observe_estimates(self, estimates: dict[int, np.ndarray]) -> float:
        """Feed one estimate per history (missing infosets get zeros)."""
        proxy = 0.0
        for x, m in self._minimizers.items():
            est = estimates.get(x)
            if est is None:
                est = np.zeros((m.index_count, self.num_actions))
            m.observe_losses(est)
            proxy += float(self.selections[x] @ (est @ m.strategy - est.min(axis=1)))
        return proxy


@dataclass
class LossEstimate:
    """Loss estimates of one kind: rows follow each infoset's history order."""

    kind: str
    histories: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)


def exploration_table(plan: SamplingPlan, table: np.ndarray, balanced: BalancedPolicySet,
                      game: TreeGame, player: int) -> np.ndarray:
    """The player's current policy with exploration rows on the plan's layers."""
    out = np.array(table, copy=True)
    index = game.infosets[player]
    for t in plan.explore:
        xs = index.by_layer[t]
        out[xs] = balanced.tables[plan.layer][xs]
    return out


def importance_values(game: TreeGame, player: int, layers: np.ndarray, tables: np.ndarray,
                      which: np.ndarray, batch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per episode: the infoset and action at its target layer and the weighted loss-to-go.

    Episode ``n`` was played with ``tables[which[n]]`` and targets
    ``layers[n]``.  The loss-to-go from the target layer on is divided by
    the probability that the sampling policy took the recorded actions up
    to and including the target layer (0 if that probability is 0).
    """
    n = len(batch)
    rows = np.arange(n)
    xs = batch.infosets[:, :, player]
    acts = batch.actions[:, :, player]
    horizon = game.horizon
    steps = np.arange(horizon)
    probs = tables[which[:, None], xs, acts]
    probs = np.where(steps[None, :] <= layers[:, None], probs, 1.0)
    denom = probs.prod(axis=1)
    to_go = np.where(steps[None, :] >= layers[:, None], 1.0 - batch.rewards[:, :, player], 0.0).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.where(denom > 0, to_go / np.where(denom > 0, denom, 1.0), 0.0)
    return xs[rows, layers], acts[rows, layers], value


def _estimates(game: TreeGame, player: int, k: int, profile, balanced: BalancedPolicySet,
               rng: np.random.Generator, kinds: tuple[str, ...],
               learner: KEFRLearner | None = None) -> tuple[dict, int]:
    plans = [p for p in sampling_plans(game, k) if p.kind in kinds]
    if not plans:
        return {}, 0
    tables = np.stack([exploration_table(p, profile[player], balanced, game, player) for p in plans])
    batch_profile = [np.asarray(t)[None] for t in profile]
    batch_profile[player] = tables
    which = np.arange(len(plans))
    batch = play_episodes(game, batch_profile, len(plans), rng, components=which)
    layers = np.array([p.layer for p in plans])
    xs, acts, vals = importance_values(game, player, layers, tables, which, batch)
    if learner is None:
        learner = KEFRLearner(game, player, k, Rate(1.0), "full")
    out: dict[int, np.ndarray] = {}
    for plan, x, a, v in zip(plans, xs, acts, vals):
        data = learner.infoset_data(int(x))
        rows = data.plan_rows.get(plan.key, [])
        est = out.get(int(x))
        if est is None:
            est = out[int(x)] = np.zeros((len(data.histories), game.action_counts[player]))
        est[rows, a] = v
    return out, len(plans)


@dataclass
class EstimateStatistics:
    """Moments of every estimate over repeated rounds, rows in history order per infoset."""

    mean: dict
    second_moment: dict
    largest: dict
    repeats: int

    def standard_error(self, x: int) -> np.ndarray:
        var = np.maximum(self.second_moment[x] - self.mean[x] ** 2, 0.0)
        return np.sqrt(var / self.repeats)


def estimate_statistics(game: TreeGame, player: int, k: int, profile, balanced: BalancedPolicySet,
                        rng: np.random.Generator, repeats: int) -> EstimateStatistics:
    """Play every exploration episode ``repeats`` times and summarize the estimates."""
    learner = KEFRLearner(game, player, k, Rate(1.0), "full")
    plans = sampling_plans(game, k)
    tables = np.stack([exploration_table(p, profile[player], balanced, game, player) for p in plans])
    batch_profile = [np.asarray(t)[None] for t in profile]
    batch_profile[player] = tables
    which = np.repeat(np.arange(len(plans)), repeats)
    batch = play_episodes(game, batch_profile, len(which), rng, components=which)
    layers = np.array([p.layer for p in plans])[which]
    xs, acts, vals = importance_values(game, player, layers, tables, which, batch)
    n_x, n_a = game.num_infosets(player), game.action_counts[player]
    mean, second, largest = {}, {}, {}
    for p, plan in enumerate(plans):
        sel = which == p
        s1 = np.zeros((n_x, n_a))
        s2 = np.zeros((n_x, n_a))
        mx = np.zeros((n_x, n_a))
        np.add.at(s1, (xs[sel], acts[sel]), vals[sel])
        np.add.at(s2, (xs[sel], acts[sel]), vals[sel] ** 2)
        np.maximum.at(mx, (xs[sel], acts[sel]), vals[sel])
        for x in game.infosets[player].by_layer[plan.layer]:
            x = int(x)
            data = learner.infoset_data(x)
            if x not in mean:
                shape = (len(data.histories), n_a)
                mean[x], second[x], largest[x] = np.zeros(shape), np.zeros(shape), np.zeros(shape)
            rows = data.plan_rows.get(plan.key, [])
            mean[x][rows] = s1[x] / repeats
            second[x][rows] = s2[x] / repeats
            largest[x][rows] = mx[x]
    return EstimateStatistics(mean, second, largest, repeats)


def _split(out: dict, learner: KEFRLearner, kind: str) -> LossEstimate:
    result = LossEstimate(kind)
    for x, est in out.items():
        data = learner.infoset_data(x)
        sl = slice(0, data.n_first) if kind == "I" else slice(data.n_first, None)
        result.histories[x] = data.histories[sl]
        result.values[x] = est[sl]
    return result


def typeI_estimates(game: TreeGame, player: int, k: int, profile, balanced: BalancedPolicySet,
                    rng: np.random.Generator) -> tuple[LossEstimate, int]:
    """Estimates for the kind-I histories from one round of exploration episodes."""
    learner = KEFRLearner(game, player, k, Rate(1.0), "full")
    out, played = _estimates(game, player, k, profile, balanced, rng, ("I",), learner)
    return _split(out, learner, "I"), played


def typeII_estimates(game: TreeGame, player: int, k: int, profile, balanced: BalancedPolicySet,
                     rng: np.random.Generator) -> tuple[LossEstimate, int]:
    """Estimates for the kind-II histories from one round of exploration episodes."""
    learner = KEFRLearner(game, player, k, Rate(1.0), "full")
    out, played = _estimates(game, player, k, profile, balanced, rng, ("II",), learner)
    return _split(out, learner, "II"), played


@dataclass
class LearningRun:
    """Policies of every round: ``policies[j]`` has shape ``(T, X_j, A_j)``."""

    policies: list
    episodes: int = 0
    episode_log: list = field(default_factory=list)
    metrics: list = field(default_factory=list)

    @property
    def rounds(self) -> int:
        return self.policies[0].shape[0]

    def average(self, upto: int | None = None) -> CorrelatedPolicy:
        """Uniform mixture over the first ``upto`` rounds."""
        upto = self.rounds if upto is None else upto
        return CorrelatedPolicy([p[:upto] for p in self.policies])


def _rates(game: TreeGame, k: int, rounds: int, mode: str, failure_prob: float,
           override) -> list[Rate]:
    total = sum(game.num_infosets(j) * game.action_counts[j] for j in range(game.num_players))
    rates = []
    for j in range(game.num_players):
        if override is not None:
            eta = override[j] if isinstance(override, (list, tuple)) else override
            rates.append(Rate(float(eta), float(game.horizon) if mode == "bandit" else None))
        else:
            rates.append(learning_rate(mode, game.horizon, k, game.num_infosets(j),
                                       game.action_counts[j], rounds, failure_prob, total))
    return rates


def run_kefr_full(game: TreeGame, k: int, rounds: int, eta=None,
                  on_round: Callable[[dict], None] | None = None) -> LearningRun:
    """Self-play with exact counterfactual losses."""
    rates = _rates(game, k, rounds, "full", 0.05, eta)
    learners = [KEFRLearner(game, j, k, rates[j], "full") for j in range(game.num_players)]
    history = [np.empty((rounds, game.num_infosets(j), game.action_counts[j]))
               for j in range(game.num_players)]
    run = LearningRun(history)
    start = time.perf_counter()
    for t in range(rounds):
        profile = [lr.policy() for lr in learners]
        proxies = []
        for j, lr in enumerate(learners):
            history[j][t] = profile[j]
            proxies.append(lr.observe_exact(counterfactual_losses(game, profile, j).total))
        _emit(run, on_round, t, start, proxies)
    return run


def run_kefr_bandit(game: TreeGame, k: int, rounds: int, seed: int = 0, failure_prob: float = 0.05,
                    eta=None, on_round: Callable[[dict], None] | None = None) -> LearningRun:
    """Self-play from sampled episodes only.

    All players fix their round policy first; then each player in turn plays
    its exploration episodes against the others' round policies.
    """
    rng = np.random.default_rng(seed)
    rates = _rates(game, k, rounds, "bandit", failure_prob, eta)
    learners = [KEFRLearner(game, j, k, rates[j], "bandit") for j in range(game.num_players)]
    history = [np.empty((rounds, game.num_infosets(j), game.action_counts[j]))
               for j in range(game.num_players)]
    run = LearningRun(history)
    start = time.perf_counter()
    for t in range(rounds):
        profile = [lr.policy() for lr in learners]
        proxies = []
        for j, lr in enumerate(learners):
            history[j][t] = profile[j]
            est, played = _estimates(game, j, lr.k, profile, lr.balanced, rng, ("I", "II"), lr)
            run.episodes += played
            proxies.append(lr.observe_estimates(est))
        run.episode_log.append(run.episodes)
        _emit(run, on_round, t, start, proxies)
    return run


def _emit(run: LearningRun, on_round, t: int, start: float, proxies: list[float]) -> None:
    record = {"round": t + 1, "wall_s": time.perf_counter() - start, "proxy": proxies}
    run.metrics.append(record)
    if on_round is not None:
        on_round(record)
