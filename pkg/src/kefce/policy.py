"""Behavioral, product and correlated policies, and balanced exploration."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyMixture, PolicyError
from .game import TreeGame

ROW_TOL = 1e-12


def check_table(game: TreeGame, player: int, table: np.ndarray) -> np.ndarray:
    table = np.asarray(table, dtype=float)
    shape = (game.num_infosets(player), game.action_counts[player])
    if table.shape[-2:] != shape:
        raise PolicyError(f"player {player} table has shape {table.shape}, expected {shape}")
    if (table < 0).any() or np.abs(table.sum(axis=-1) - 1.0).max() > ROW_TOL:
        raise PolicyError(f"player {player} table has rows that are not distributions")
    return table


@dataclass(frozen=True, eq=False)
class BehavioralPolicy:
    """One player's action distribution at each of their infosets."""

    player: int
    table: np.ndarray

    def to_json(self, game: TreeGame) -> dict:
        labels = game.infosets[self.player].labels
        return {
            "player": self.player,
            "rows": {str(labels[x]): self.table[x].tolist() for x in range(len(labels))},
        }

    @classmethod
    def from_json(cls, game: TreeGame, data: dict) -> "BehavioralPolicy":
        player = int(data["player"])
        labels = game.infosets[player].labels
        lookup = {str(t): x for x, t in enumerate(labels)}
        table = np.full((len(labels), game.action_counts[player]), np.nan)
        for tag, row in data["rows"].items():
            if str(tag) not in lookup:
                raise PolicyError(f"unknown infoset {tag!r} for player {player}")
            table[lookup[str(tag)]] = row
        if np.isnan(table).any():
            raise PolicyError(f"policy for player {player} misses some infosets")
        return cls(player, check_table(game, player, table))


def uniform_policy(game: TreeGame, player: int) -> np.ndarray:
    n = game.action_counts[player]
    return np.full((game.num_infosets(player), n), 1.0 / n)


def random_policy(game: TreeGame, player: int, rng: np.random.Generator,
                  pure: bool = False) -> np.ndarray:
    shape = (game.num_infosets(player), game.action_counts[player])
    if pure:
        return np.eye(shape[1])[rng.integers(0, shape[1], size=shape[0])]
    return rng.dirichlet(np.ones(shape[1]), size=shape[0])


def uniform_profile(game: TreeGame) -> list[np.ndarray]:
    return [uniform_policy(game, i) for i in range(game.num_players)]


def random_profile(game: TreeGame, rng: np.random.Generator, pure: bool = False) -> list[np.ndarray]:
    return [random_policy(game, i, rng, pure) for i in range(game.num_players)]


class CorrelatedPolicy:
    """A finite mixture of product policies.

    ``tables[j]`` has shape ``(C, X_j, A_j)`` and ``weights`` shape ``(C,)``.
    """

    def __init__(self, tables: Sequence[np.ndarray], weights: np.ndarray | None = None):
        self.tables = [np.asarray(t, dtype=float) for t in tables]
        count = self.tables[0].shape[0] if self.tables else 0
        if count == 0:
            raise EmptyMixture("a correlated policy needs at least one component")
        if weights is None:
            weights = np.full(count, 1.0 / count)
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.shape != (count,) or (self.weights < 0).any():
            raise PolicyError("mixture weights must be one nonnegative number per component")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise PolicyError("mixture weights must sum to one")

    @classmethod
    def from_products(cls, products: Sequence[Sequence[np.ndarray]],
                      weights: Sequence[float] | None = None) -> "CorrelatedPolicy":
        if len(products) == 0:
            raise EmptyMixture("a correlated policy needs at least one component")
        tables = [np.stack([p[j] for p in products]) for j in range(len(products[0]))]
        return cls(tables, None if weights is None else np.asarray(weights, dtype=float))

    @property
    def num_components(self) -> int:
        return len(self.weights)

    @property
    def pure_mixture(self) -> bool:
        return all(np.isin(t, (0.0, 1.0)).all() for t in self.tables)

    def component(self, c: int) -> list[np.ndarray]:
        return [t[c] for t in self.tables]

    def subset(self, idx: Sequence[int]) -> "CorrelatedPolicy":
        """Uniform mixture over the chosen components."""
        idx = np.asarray(idx)
        return CorrelatedPolicy([t[idx] for t in self.tables])

    def validate(self, game: TreeGame) -> "CorrelatedPolicy":
        for j, t in enumerate(self.tables):
            check_table(game, j, t)
        return self

    def to_json(self, game: TreeGame) -> dict:
        return {
            "weights": self.weights.tolist(),
            "components": [
                [BehavioralPolicy(j, t[c]).to_json(game) for j, t in enumerate(self.tables)]
                for c in range(self.num_components)
            ],
        }

    @classmethod
    def from_json(cls, game: TreeGame, data) -> "CorrelatedPolicy":
        """Read a mixture, a list of per-player tables, or one player's table."""
        if isinstance(data, dict) and "components" in data:
            comps = data["components"]
            weights = data.get("weights")
        elif isinstance(data, list):
            comps, weights = [data], None
        else:
            comps, weights = [[data]], None
        products = []
        for comp in comps:
            tables = [None] * game.num_players
            for entry in comp:
                pol = BehavioralPolicy.from_json(game, entry)
                tables[pol.player] = pol.table
            if any(t is None for t in tables):
                raise PolicyError("every component needs a table for every player")
            products.append(tables)
        return cls.from_products(products, weights)


def sample_component(mixture: CorrelatedPolicy, rng: np.random.Generator) -> list[np.ndarray]:
    if mixture.num_components == 0:
        raise EmptyMixture("cannot sample from an empty mixture")
    c = rng.choice(mixture.num_components, p=mixture.weights)
    return mixture.component(int(c))


def sequence_form(game: TreeGame, player: int, table: np.ndarray) -> np.ndarray:
    """Products of own action probabilities along each infoset's history.

    Works on ``(X, A)`` tables and on batches ``(..., X, A)``.
    """
    index = game.infosets[player]
    seq = np.array(table, dtype=float, copy=True)
    for h in range(1, game.horizon):
        xs = index.by_layer[h]
        seq[..., xs, :] *= seq[..., index.parent[xs], index.parent_action[xs]][..., None]
    return seq


def sequence_form_policy(game: TreeGame, player: int, table: np.ndarray, x: int, a: int,
                         start: int = 0) -> float:
    """Product of ``table`` over the history of ``(x, a)`` from layer ``start`` on."""
    index = game.infosets[player]
    prob = float(table[x, a])
    for k, (xk, ak) in enumerate(index.ancestors(x)):
        if k >= start:
            prob *= float(table[xk, ak])
    return prob


@dataclass(frozen=True, eq=False)
class BalancedPolicySet:
    """``tables[h]`` is the exploration policy aimed at layer ``h``."""

    player: int
    tables: np.ndarray


def balanced_policy_set(game: TreeGame, player: int) -> BalancedPolicySet:
    index = game.infosets[player]
    n_a = game.action_counts[player]
    tables = np.full((game.horizon, index.count, n_a), 1.0 / n_a)
    for h in range(game.horizon):
        above = index.layer < h
        counts = index.descendants[h][above].astype(float)
        tables[h][above] = counts / counts.sum(axis=1, keepdims=True)
    return BalancedPolicySet(player, tables)


def balanced_transition(game: TreeGame, player: int, h: int, x: int) -> float:
    """Probability of ``x`` under the fictitious balanced environment for layer ``h``.

    The first infoset on the path is drawn in proportion to its number of
    layer-``h`` descendants, and each later one in proportion to its share
    of its parent sequence's descendants.
    """
    index = game.infosets[player]
    if index.layer[x] != h:
        raise ValueError("infoset is not on the target layer")
    path = [xk for xk, _ in index.ancestors(x)] + [x]
    prob = index.subtree_count(h, path[0]) / game.num_infosets(player, h)
    for (xk, ak), nxt in zip(index.ancestors(x), path[1:]):
        prob *= index.subtree_count(h, nxt) / index.descendants[h, xk, ak]
    return float(prob)
