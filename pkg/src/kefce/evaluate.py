"""Exact equilibrium gaps of correlated policies.

The main routine walks the tree of (infoset, recommendation history) pairs
of one player, carrying one reach weight per mixture component, and picks
the best swap table or blind action at each node.  Everything else here is
an independent route to the same or related numbers, used as an oracle.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .deviation import (
    Rechistory,
    StrategyModification,
    effective_k,
    enumerate_modifications,
    modified_sequence_form,
)
from .errors import PurityRequired
from .game import TreeGame, accumulate_to_go, action_probs, values, weighted_payoffs
from .policy import CorrelatedPolicy, sequence_form


@dataclass
class GapReport:
    gap: float
    player: int
    modification: StrategyModification | None = None
    per_player: list = field(default_factory=list)
    modifications: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "gap": self.gap,
            "player": self.player,
            "modification": None if self.modification is None else self.modification.digest(),
            "per_player": list(self.per_player),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def _as_mixture(policy) -> CorrelatedPolicy:
    if isinstance(policy, CorrelatedPolicy):
        return policy
    return CorrelatedPolicy([np.asarray(t, dtype=float)[None] for t in policy])


def _players(game: TreeGame, players) -> list[int]:
    return list(range(game.num_players)) if players is None else list(players)


# ---------------------------------------------------------------------------
# Best response over the augmented tree


def best_modification(game: TreeGame, player: int, k: int, tables, weights) -> tuple[float, StrategyModification]:
    """Largest ``sum_c weights[c] * V(phi o pi^c)`` over modifications ``phi``, and a maximizer.

    ``tables`` is the mixture's list of ``(C, X_j, A_j)`` tables.  Weights
    need not sum to one.
    """
    k = effective_k(game, k)
    index = game.infosets[player]
    own = tables[player]
    imm = weighted_payoffs(game, tables, player)
    n_a = game.action_counts[player]
    children = index.children
    layer = index.layer
    swaps: dict = {}
    actions: dict = {}

    def blind(x: int, length: int, devs: tuple, rho: np.ndarray) -> float:
        best, best_a = -np.inf, 0
        for a in range(n_a):
            v = float(rho @ imm[:, x, a])
            for y in children[x][a]:
                v += blind(y, length, devs, rho)
            if v > best:
                best, best_a = v, a
        actions[Rechistory(x, "II", length, devs)] = best_a
        return best

    def seeing(x: int, devs: tuple, rho: np.ndarray) -> float:
        h = int(layer[x])
        table, total = [], 0.0
        for r in range(n_a):
            rr = rho * own[:, x, r]
            best, best_a = -np.inf, 0
            for a in range(n_a):
                v = float(rr @ imm[:, x, a])
                nd = devs if a == r else devs + ((h, r),)
                for y in children[x][a]:
                    v += blind(y, h + 1, nd, rr) if len(nd) == k else seeing(y, nd, rr)
                if v > best:
                    best, best_a = v, a
            table.append(best_a)
            total += best
        swaps[Rechistory(x, "I", h, devs)] = tuple(table)
        return total

    rho0 = np.asarray(weights, dtype=float)
    total = 0.0
    for x in index.by_layer[0]:
        x = int(x)
        total += blind(x, 0, (), rho0) if k == 0 else seeing(x, (), rho0)
    return total, StrategyModification(player, k, swaps, actions)


def kefce_gap(game: TreeGame, policy, k: int, players=None) -> GapReport:
    """The largest gain any player gets from a modification with ``k`` departures."""
    mix = _as_mixture(policy)
    base = mix.weights @ values(game, mix.tables)
    gaps, mods = [], []
    for i in _players(game, players):
        best, phi = best_modification(game, i, k, mix.tables, mix.weights)
        gaps.append(best - float(base[i]))
        mods.append(phi)
    top = int(np.argmax(gaps))
    return GapReport(float(gaps[top]), _players(game, players)[top], mods[top], gaps, mods)


def kefce_regret(game: TreeGame, policies, k: int, players=None) -> float:
    """Largest total gain over the rounds of a fixed modification.

    ``policies[j]`` stacks player ``j``'s round policies as ``(T, X_j, A_j)``.
    """
    tables = [np.asarray(p, dtype=float) for p in policies]
    rounds = tables[0].shape[0]
    per_round = values(game, tables)
    best = -np.inf
    for i in _players(game, players):
        value, _ = best_modification(game, i, k, tables, np.ones(rounds))
        best = max(best, value - float(per_round[:, i].sum()))
    return float(best)


# ---------------------------------------------------------------------------
# Oracles


def value_of_modified(game: TreeGame, phi: StrategyModification, policy) -> float:
    """Expected return of ``phi.player`` when it applies ``phi`` to the mixture's recommendations.

    Walks states and recommendation histories jointly; everyone else follows
    their recommendations.
    """
    mix = _as_mixture(policy)
    i = phi.player
    tables = mix.tables
    opp = [action_probs(game, tables, h, skip=i) for h in range(game.horizon)]
    kids = [{} for _ in range(game.horizon)]
    for h in range(1, game.horizon):
        for child, (s, j) in enumerate(zip(game.parent[h], game.parent_joint[h])):
            kids[h - 1].setdefault((int(s), int(j)), []).append(child)
    own_col = game.joint_actions[:, i]

    def visit(h: int, s: int, devs: tuple, frozen_at, rho: np.ndarray) -> float:
        x = int(game.state_infosets[h][s, i])
        if frozen_at is None:
            table = phi.swaps[Rechistory(x, "I", h, devs)]
            branches = [(tables[i][:, x, r], table[r], r) for r in range(len(table))]
        else:
            branches = [(1.0, phi.actions[Rechistory(x, "II", frozen_at, devs)], None)]
        total = 0.0
        for prob, a, r in branches:
            rr = rho * prob
            if not rr.any():
                continue
            nd, nf = devs, frozen_at
            if r is not None and a != r:
                nd = devs + ((h, r),)
                if len(nd) == phi.k:
                    nf = h + 1
            for j in np.flatnonzero(own_col == a):
                pj = rr * opp[h][:, s, j]
                total += float(pj.sum()) * float(game.rewards[h][s, j, i])
                if h + 1 < game.horizon:
                    for child in kids[h].get((s, int(j)), ()):
                        total += visit(h + 1, child, nd, nf, pj * game.transition[h + 1][child])
        return total

    start = 0 if phi.k == 0 else None
    out = 0.0
    for s in range(game.num_states[0]):
        if game.initial[s] > 0:
            out += visit(0, s, (), start, mix.weights * game.initial[s])
    return float(out)


def value_closed_form(game: TreeGame, phi: StrategyModification, policy) -> float:
    """The same value through the modified sequence form of each component."""
    mix = _as_mixture(policy)
    i = phi.player
    imm = weighted_payoffs(game, mix.tables, i)
    total = 0.0
    for c in range(mix.num_components):
        own = mix.tables[i][c]
        for x in range(game.num_infosets(i)):
            for a in range(game.action_counts[i]):
                if imm[c, x, a]:
                    total += mix.weights[c] * modified_sequence_form(game, phi, own, x, a) * imm[c, x, a]
    return float(total)


def kefce_gap_bruteforce(game: TreeGame, policy, k: int, players=None, cap: int = 10**7) -> GapReport:
    """Try every modification; the reference for :func:`kefce_gap`."""
    mix = _as_mixture(policy)
    base = mix.weights @ values(game, mix.tables)
    gaps, mods = [], []
    for i in _players(game, players):
        best, arg = -np.inf, None
        for phi in enumerate_modifications(game, i, k, cap):
            v = value_of_modified(game, phi, mix)
            if v > best:
                best, arg = v, phi
        gaps.append(best - float(base[i]))
        mods.append(arg)
    top = int(np.argmax(gaps))
    return GapReport(float(gaps[top]), _players(game, players)[top], mods[top], gaps, mods)


def _best_response_value(game: TreeGame, player: int, imm: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Per infoset: the best blind continuation value under component weights ``rho``."""
    index = game.infosets[player]
    q = np.einsum("c,cxa->xa", rho, imm)
    best = np.zeros(index.count)
    for h in range(game.horizon - 1, -1, -1):
        xs = index.by_layer[h]
        if h + 1 < game.horizon:
            ys = index.by_layer[h + 1]
            cont = np.zeros_like(q)
            np.add.at(cont, (index.parent[ys], index.parent_action[ys]), best[ys])
            q[xs] += cont[xs]
        best[xs] = q[xs].max(axis=1)
    return best


def trigger_gap(game: TreeGame, policy, players=None) -> float:
    """Largest gain from following recommendations until one (infoset, action) fires.

    After the trigger the player switches to the best fixed continuation.
    """
    mix = _as_mixture(policy)
    out = -np.inf
    for i in _players(game, players):
        index = game.infosets[i]
        own = mix.tables[i]
        imm = weighted_payoffs(game, mix.tables, i)
        follow = accumulate_to_go(game, own, i, imm)
        seq = sequence_form(game, i, own)
        for x in range(index.count):
            h = int(index.layer[x])
            if h == 0:
                reach = np.ones(mix.num_components)
            else:
                reach = seq[:, index.parent[x], index.parent_action[x]]
            sub = _subtree(index, x)
            for a in range(game.action_counts[i]):
                rho = mix.weights * reach * own[:, x, a]
                best = _subtree_best(game, i, imm, rho, x, sub)
                out = max(out, best - float(rho @ follow[:, x, a]))
    return float(out)


def _subtree(index, x: int) -> list[int]:
    out, stack = [], [x]
    while stack:
        y = stack.pop()
        out.append(y)
        for kids in index.children[y]:
            stack.extend(kids)
    return out


def _subtree_best(game: TreeGame, player: int, imm, rho, x: int, sub: list[int]) -> float:
    index = game.infosets[player]
    q = np.einsum("c,cya->ya", rho, imm[:, sub])
    pos = {y: n for n, y in enumerate(sub)}
    best = {}
    for y in sorted(sub, key=lambda y: -int(index.layer[y])):
        row = q[pos[y]].copy()
        for a, kids in enumerate(index.children[y]):
            row[a] += sum(best[z] for z in kids)
        best[y] = float(row.max())
    return best[x]


def nfcce_gap(game: TreeGame, policy, players=None) -> float:
    """Gain from the best fixed policy played against the mixture."""
    mix = _as_mixture(policy)
    base = mix.weights @ values(game, mix.tables)
    out = -np.inf
    for i in _players(game, players):
        imm = weighted_payoffs(game, mix.tables, i)
        best = _best_response_value(game, i, imm, mix.weights)
        roots = game.infosets[i].by_layer[0]
        out = max(out, float(best[roots].sum()) - float(base[i]))
    return float(out)


def _groups(mix: CorrelatedPolicy, player: int) -> dict:
    if not mix.pure_mixture:
        raise PurityRequired("the normal-form gap needs a mixture of pure policies")
    groups: dict = {}
    for c in range(mix.num_components):
        key = tuple(mix.tables[player][c].argmax(axis=1))
        groups.setdefault(key, []).append(c)
    return groups


def nfce_gap(game: TreeGame, policy, players=None) -> float:
    """Gain when the deviation may depend on the whole recommended pure policy."""
    mix = _as_mixture(policy)
    base = mix.weights @ values(game, mix.tables)
    out = -np.inf
    for i in _players(game, players):
        imm = weighted_payoffs(game, mix.tables, i)
        roots = game.infosets[i].by_layer[0]
        total = 0.0
        for members in _groups(mix, i).values():
            rho = np.zeros(mix.num_components)
            rho[members] = mix.weights[members]
            total += float(_best_response_value(game, i, imm, rho)[roots].sum())
        out = max(out, total - float(base[i]))
    return float(out)


def nfce_gap_bruteforce(game: TreeGame, policy, players=None, cap: int = 10**6) -> float:
    """Exhaustive version of :func:`nfce_gap` over the player's pure policies."""
    mix = _as_mixture(policy)
    base = mix.weights @ values(game, mix.tables)
    out = -np.inf
    for i in _players(game, players):
        n_x, n_a = game.num_infosets(i), game.action_counts[i]
        if n_a**n_x > cap:
            raise ValueError(f"{n_a ** n_x} pure policies exceed the cap {cap}")
        eye = np.eye(n_a)
        candidates = np.array([eye[list(p)] for p in itertools.product(range(n_a), repeat=n_x)])
        total = 0.0
        for members in _groups(mix, i).values():
            best = -np.inf
            for cand in candidates:
                tables = [t[members] for t in mix.tables]
                tables[i] = np.broadcast_to(cand, tables[i].shape)
                best = max(best, float(mix.weights[members] @ values(game, tables)[:, i]))
            total += best
        out = max(out, total - float(base[i]))
    return float(out)
