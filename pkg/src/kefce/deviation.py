"""Recommendation histories and the modifications that act on them.

A deviating player sees the recommendation at each step until it has
departed from the recommendations ``K`` times.  From then on it no longer
sees them and acts on the frozen history.  A history that has seen fewer
than ``K`` departures is of kind ``"I"``; one frozen after exactly ``K``
departures is of kind ``"II"``.  For ``K = 0`` the empty history is of kind
``"II"`` at every infoset, so the player never sees anything.

Layers are 0-indexed: an infoset at layer ``h`` has ``h`` ancestors, and a
kind-I history there has length ``h``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .errors import BudgetExceeded, LengthError, SizeError
from .game import TreeGame, Trajectory

DEFAULT_CAP = 10**6


def fill(indices: Iterable[int], n: int) -> frozenset[int]:
    """Add the smallest positive integers missing from ``indices`` until it has ``n`` elements."""
    out = set(indices)
    if n < len(out):
        raise SizeError(f"cannot fill a set of size {len(out)} to {n}")
    k = 1
    while len(out) < n:
        if k not in out:
            out.add(k)
        k += 1
    return frozenset(out)


@dataclass(frozen=True, order=True)
class Rechistory:
    """Observed recommendations at an infoset.

    Only the departures are stored: ``deviations`` lists ``(layer, action)``
    for every layer where the recommendation differs from the action that
    led to ``infoset``.  The other entries equal those actions.
    """

    infoset: int
    kind: str
    length: int
    deviations: tuple[tuple[int, int], ...] = field(default=())

    @property
    def deviation_layers(self) -> tuple[int, ...]:
        return tuple(k for k, _ in self.deviations)

    def actions(self, game: TreeGame, player: int) -> tuple[int, ...]:
        out = list(game.infosets[player].ancestor_actions[self.infoset, : self.length])
        for k, b in self.deviations:
            out[k] = b
        return tuple(int(a) for a in out)

    def prefix(self, infoset: int, length: int) -> "Rechistory":
        """The kind-I history seen at an ancestor infoset on layer ``length``."""
        return Rechistory(infoset, "I", length, tuple(d for d in self.deviations if d[0] < length))

    def key(self) -> str:
        devs = ";".join(f"{k}={b}" for k, b in self.deviations)
        return f"{self.kind}:{self.length}:{devs}"

    @classmethod
    def from_key(cls, infoset: int, key: str) -> "Rechistory":
        kind, length, devs = key.split(":")
        pairs = tuple(
            (int(k), int(b)) for k, b in (d.split("=") for d in devs.split(";") if d)
        )
        return cls(infoset, kind, int(length), pairs)


def effective_k(game: TreeGame, k: int) -> int:
    """Budgets at or above the horizon all behave like the horizon."""
    if k < 0:
        raise ValueError("the deviation budget must be nonnegative")
    return min(int(k), game.horizon)


def classify(game: TreeGame, player: int, x: int, b, k: int) -> Rechistory | None:
    """Kind of the recommendation list ``b`` at ``x``, or ``None`` if it is neither."""
    index = game.infosets[player]
    h = int(index.layer[x])
    b = tuple(int(v) for v in b)
    if len(b) > h:
        raise LengthError(f"history of length {len(b)} at an infoset on layer {h}")
    if any(not 0 <= v < game.action_counts[player] for v in b):
        return None
    k = effective_k(game, k)
    path = index.ancestor_actions[x, : len(b)]
    devs = tuple((t, v) for t, v in enumerate(b) if v != path[t])
    if k == 0:
        return Rechistory(x, "II", 0) if not b else None
    if len(b) == h and len(devs) <= k - 1:
        return Rechistory(x, "I", h, devs)
    if len(devs) == k and devs[-1][0] == len(b) - 1:
        return Rechistory(x, "II", len(b), devs)
    return None


def count_kind_one(h: int, k: int, num_actions: int) -> int:
    """Number of kind-I histories at an infoset on (0-indexed) layer ``h``."""
    return sum(math.comb(h, d) * (num_actions - 1) ** d for d in range(min(k - 1, h) + 1))


def count_kind_two(h: int, k: int, num_actions: int) -> int:
    if k == 0:
        return 1
    return sum(
        math.comb(length - 1, k - 1) * (num_actions - 1) ** k for length in range(k, h + 1)
    )


def _departures(path, layers, num_actions) -> Iterator[tuple[tuple[int, int], ...]]:
    choices = [[b for b in range(num_actions) if b != path[t]] for t in layers]
    for picks in itertools.product(*choices):
        yield tuple(zip(layers, picks))


def enumerate_rechistories(game: TreeGame, player: int, k: int, x: int,
                           cap: int = DEFAULT_CAP) -> tuple[list[Rechistory], list[Rechistory]]:
    """All kind-I and kind-II histories at ``x``, in a fixed order."""
    index = game.infosets[player]
    num_actions = game.action_counts[player]
    h = int(index.layer[x])
    k = effective_k(game, k)
    total = (count_kind_one(h, k, num_actions) if k > 0 else 0) + count_kind_two(h, k, num_actions)
    if total > cap:
        raise BudgetExceeded(f"{total} histories at infoset {x} exceed the cap {cap}")
    path = index.ancestor_actions[x, :h]
    first: list[Rechistory] = []
    second: list[Rechistory] = []
    if k == 0:
        return first, [Rechistory(x, "II", 0)]
    for d in range(min(k - 1, h) + 1):
        for layers in itertools.combinations(range(h), d):
            for devs in _departures(path, layers, num_actions):
                first.append(Rechistory(x, "I", h, devs))
    for length in range(k, h + 1):
        for head in itertools.combinations(range(length - 1), k - 1):
            for devs in _departures(path, head + (length - 1,), num_actions):
                second.append(Rechistory(x, "II", length, devs))
    return first, second


class StrategyModification:
    """A deterministic deviation rule for one player.

    ``swaps`` maps each kind-I history to a table sending the observed
    recommendation to the action played; ``actions`` maps each kind-II
    history to the action played.
    """

    def __init__(self, player: int, k: int, swaps: dict, actions: dict):
        self.player = player
        self.k = k
        self.swaps = swaps
        self.actions = actions

    @classmethod
    def identity(cls, game: TreeGame, player: int, k: int) -> "StrategyModification":
        """Follow every recommendation; kind-II histories (never reached) play action 0."""
        k = effective_k(game, k)
        num_actions = game.action_counts[player]
        swaps, actions = {}, {}
        for x in range(game.num_infosets(player)):
            first, second = enumerate_rechistories(game, player, k, x)
            for r in first:
                swaps[r] = tuple(range(num_actions))
            for r in second:
                actions[r] = 0
        return cls(player, k, swaps, actions)

    def play(self, rech: Rechistory, recommendation: int | None = None) -> int:
        if rech.kind == "I":
            return self.swaps[rech][recommendation]
        return self.actions[rech]

    def to_json(self, game: TreeGame) -> dict:
        labels = game.infosets[self.player].labels
        return {
            "player": self.player,
            "K": self.k,
            "swaps": [
                {"infoset": str(labels[r.infoset]), "rechistory": r.key(), "table": list(t)}
                for r, t in sorted(self.swaps.items())
            ],
            "actions": [
                {"infoset": str(labels[r.infoset]), "rechistory": r.key(), "action": int(a)}
                for r, a in sorted(self.actions.items())
            ],
        }

    @classmethod
    def from_json(cls, game: TreeGame, data: dict) -> "StrategyModification":
        player = int(data["player"])
        lookup = {str(t): x for x, t in enumerate(game.infosets[player].labels)}
        swaps = {
            Rechistory.from_key(lookup[e["infoset"]], e["rechistory"]): tuple(e["table"])
            for e in data["swaps"]
        }
        actions = {
            Rechistory.from_key(lookup[e["infoset"]], e["rechistory"]): int(e["action"])
            for e in data["actions"]
        }
        return cls(player, int(data["K"]), swaps, actions)

    def digest(self) -> str:
        import hashlib
        import json

        blob = json.dumps(
            [[r.infoset, r.key(), list(t)] for r, t in sorted(self.swaps.items())]
            + [[r.infoset, r.key(), a] for r, a in sorted(self.actions.items())]
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def modification_count(game: TreeGame, player: int, k: int) -> int:
    num_actions = game.action_counts[player]
    k = effective_k(game, k)
    total = 1
    for x in range(game.num_infosets(player)):
        h = int(game.infosets[player].layer[x])
        n_one = count_kind_one(h, k, num_actions) if k > 0 else 0
        total *= (num_actions**num_actions) ** n_one * num_actions ** count_kind_two(h, k, num_actions)
    return total


def enumerate_modifications(game: TreeGame, player: int, k: int,
                            cap: int = 10**7) -> Iterator[StrategyModification]:
    """Every modification of the class, identity first."""
    total = modification_count(game, player, k)
    if total > cap:
        raise BudgetExceeded(f"{total} modifications exceed the cap {cap}")
    k = effective_k(game, k)
    num_actions = game.action_counts[player]
    first_all, second_all = [], []
    for x in range(game.num_infosets(player)):
        first, second = enumerate_rechistories(game, player, k, x)
        first_all += first
        second_all += second
    identity = tuple(range(num_actions))
    tables = [identity] + [t for t in itertools.product(range(num_actions), repeat=num_actions)
                           if t != identity]
    for picks in itertools.product(tables, repeat=len(first_all)):
        swaps = dict(zip(first_all, picks))
        for acts in itertools.product(range(num_actions), repeat=len(second_all)):
            yield StrategyModification(player, k, swaps, dict(zip(second_all, acts)))


def lift_modification(game: TreeGame, phi: StrategyModification) -> StrategyModification:
    """The same deviation rule expressed with one more allowed departure."""
    k = phi.k
    player = phi.player
    num_actions = game.action_counts[player]
    swaps, actions = {}, {}

    def frozen(r: Rechistory) -> Rechistory:
        # History at the moment the K-th departure happened.
        if k == 0:
            return Rechistory(r.infoset, "II", 0)
        length = r.deviations[k - 1][0] + 1
        return Rechistory(r.infoset, "II", length, r.deviations[:k])

    for x in range(game.num_infosets(player)):
        first, second = enumerate_rechistories(game, player, k + 1, x)
        for r in first:
            if len(r.deviations) <= k - 1:
                swaps[r] = phi.swaps[r]
            else:
                swaps[r] = (phi.actions[frozen(r)],) * num_actions
        for r in second:
            actions[r] = phi.actions[frozen(r)]
    return StrategyModification(player, effective_k(game, k + 1), swaps, actions)


def execute_modified(game: TreeGame, phi: StrategyModification, profile,
                     rng: np.random.Generator) -> Trajectory:
    """Play one episode where ``phi.player`` applies ``phi`` to its recommendations."""
    i = phi.player
    tables = [np.asarray(t, dtype=float) for t in profile]
    m, horizon = game.num_players, game.horizon
    states = np.empty(horizon, dtype=np.int64)
    infosets = np.empty((horizon, m), dtype=np.int64)
    actions = np.empty((horizon, m), dtype=np.int64)
    rewards = np.empty((horizon, m))
    s = int(rng.choice(game.num_states[0], p=game.initial))
    devs: list[tuple[int, int]] = []
    frozen_at = 0 if phi.k == 0 else None
    strides = np.array([int(np.prod(game.action_counts[j + 1:])) for j in range(m)])
    for h in range(horizon):
        states[h] = s
        infosets[h] = game.state_infosets[h][s]
        for j in range(m):
            row = tables[j][infosets[h, j]]
            actions[h, j] = rng.choice(len(row), p=row / row.sum())
        x = int(infosets[h, i])
        if frozen_at is None:
            rec = int(actions[h, i])
            played = phi.swaps[Rechistory(x, "I", h, tuple(devs))][rec]
            if played != rec:
                devs.append((h, rec))
                if len(devs) == phi.k:
                    frozen_at = h + 1
            actions[h, i] = played
        else:
            actions[h, i] = phi.actions[Rechistory(x, "II", frozen_at, tuple(devs))]
        joint = int(actions[h] @ strides)
        rewards[h] = game.rewards[h][s, joint]
        if h + 1 < horizon:
            kids = np.flatnonzero((game.parent[h + 1] == s) & (game.parent_joint[h + 1] == joint))
            s = int(rng.choice(kids, p=game.transition[h + 1][kids]))
    return Trajectory(states, infosets, actions, rewards)


def modified_sequence_form(game: TreeGame, phi: StrategyModification, table: np.ndarray,
                           x: int, a: int, cap: int = DEFAULT_CAP) -> float:
    """Probability that ``phi`` applied to ``table`` plays every action on the way to ``(x, a)``.

    Sums over the histories the player could have observed at ``x``: those
    with fewer than ``K`` departures weigh in every recommendation on the
    path, the frozen ones only the recommendations up to the freeze.
    """
    i = phi.player
    index = game.infosets[i]
    h = int(index.layer[x])
    anc = index.ancestors(x)
    first, second = enumerate_rechistories(game, i, phi.k, x, cap)
    total = 0.0
    for r in first:
        b = r.actions(game, i)
        weight = 1.0
        for t, (xt, at) in enumerate(anc):
            if phi.swaps[r.prefix(xt, t)][b[t]] != at:
                weight = 0.0
                break
            weight *= table[xt, b[t]]
        if weight:
            total += weight * sum(
                table[x, rec] for rec in range(table.shape[1]) if phi.swaps[r][rec] == a
            )
    for r in second:
        b = r.actions(game, i)
        weight = 1.0 if phi.actions[r] == a else 0.0
        for t, (xt, at) in enumerate(anc):
            if not weight:
                break
            if t < r.length:
                if phi.swaps[r.prefix(xt, t)][b[t]] != at:
                    weight = 0.0
                weight *= table[xt, b[t]]
            elif phi.actions[Rechistory(xt, "II", r.length, r.deviations)] != at:
                weight = 0.0
        total += weight
    return float(total)
