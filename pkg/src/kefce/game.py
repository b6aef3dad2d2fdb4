"""Tree-structured partially observable Markov games with perfect recall.

Layers are 0-indexed here: layer 0 holds the initial states and layer
``H - 1`` the last step.  Each state carries one infoset per player and a
deterministic reward in [0, 1] for every player under every joint action.

Policies are passed around as *profiles*: one table per player of shape
``(X_i, A_i)``, or ``(C, X_i, A_i)`` when ``C`` product policies are
evaluated at once (the components of a correlated mixture).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Sequence

import numpy as np
from scipy import sparse

from .errors import RecallViolation, RewardRange, StochasticityError, TreeViolation

PROB_TOL = 1e-12


def joint_key(actions: Sequence[int]) -> str:
    return ",".join(str(int(a)) for a in actions)


def parse_joint(key: str, action_counts: Sequence[int]) -> tuple[int, ...]:
    try:
        actions = tuple(int(t) for t in str(key).split(","))
    except ValueError as exc:
        raise TreeViolation(f"bad joint action key {key!r}") from exc
    if len(actions) != len(action_counts) or any(
        not 0 <= a < n for a, n in zip(actions, action_counts)
    ):
        raise TreeViolation(f"joint action {key!r} out of range")
    return actions


@dataclass(frozen=True, eq=False)
class InfosetIndex:
    """Infoset partition of one player.

    ``ancestor_infosets[x, k]`` and ``ancestor_actions[x, k]`` give the
    player's infoset and action at layer ``k < layer[x]`` on the way to
    ``x`` (and -1 elsewhere).  ``descendants[h, x, a]`` is the number of
    layer-``h`` infosets below ``(x, a)``.
    """

    labels: tuple
    layer: np.ndarray
    parent: np.ndarray
    parent_action: np.ndarray
    states: tuple
    by_layer: tuple
    ancestor_infosets: np.ndarray
    ancestor_actions: np.ndarray
    children: tuple
    descendants: np.ndarray

    @property
    def count(self) -> int:
        return len(self.labels)

    def ancestors(self, x: int) -> list[tuple[int, int]]:
        h = int(self.layer[x])
        return [
            (int(self.ancestor_infosets[x, k]), int(self.ancestor_actions[x, k]))
            for k in range(h)
        ]

    def subtree_count(self, h: int, x: int) -> int:
        """|C_h(x)|, with the convention that an infoset at layer h counts once."""
        if self.layer[x] == h:
            return 1
        return int(self.descendants[h, x].sum())


@dataclass(frozen=True)
class Trajectory:
    """One episode, seen by every player.

    Arrays are indexed ``[layer, player]``; ``states`` is the state path.
    """

    states: np.ndarray
    infosets: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def view(self, player: int) -> list[tuple[int, int, float]]:
        return [
            (int(self.infosets[h, player]), int(self.actions[h, player]), float(self.rewards[h, player]))
            for h in range(len(self.states))
        ]


@dataclass(frozen=True)
class EpisodeBatch:
    """Many episodes at once; arrays are indexed ``[episode, layer(, player)]``."""

    states: np.ndarray
    infosets: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]

    def trajectory(self, n: int) -> Trajectory:
        return Trajectory(self.states[n], self.infosets[n], self.actions[n], self.rewards[n])


class TreeGame:
    """A validated game.  Build it with :func:`validate_game`."""

    def __init__(self, *, raw, action_counts, initial, state_infosets, rewards,
                 parent, parent_joint, transition, infosets):
        self.raw = raw
        self.action_counts = tuple(action_counts)
        self.num_players = len(self.action_counts)
        self.horizon = len(state_infosets)
        self.joint_actions = np.array(
            list(np.ndindex(*self.action_counts)), dtype=np.int64
        ).reshape(-1, self.num_players)
        self.num_joint = self.joint_actions.shape[0]
        self.initial = initial
        self.state_infosets = state_infosets
        self.rewards = rewards
        self.parent = parent
        self.parent_joint = parent_joint
        self.transition = transition
        self.infosets = infosets
        self.num_states = tuple(len(s) for s in state_infosets)

    def num_infosets(self, player: int, layer: int | None = None) -> int:
        index = self.infosets[player]
        if layer is None:
            return index.count
        return len(index.by_layer[layer])

    def digest(self) -> dict:
        return {
            "players": self.num_players,
            "horizon": self.horizon,
            "action_counts": list(self.action_counts),
            "states_per_layer": list(self.num_states),
            "infosets_per_layer": [
                [self.num_infosets(i, h) for h in range(self.horizon)]
                for i in range(self.num_players)
            ],
        }

    @cached_property
    def fingerprint(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_json(self) -> dict:
        return self.raw

    # Cached index structures used by the vectorized evaluators.

    @cached_property
    def _aggregators(self) -> dict:
        return {}

    def aggregator(self, layer: int, player: int) -> sparse.csr_matrix:
        """0/1 matrix mapping (state, joint action) pairs to (infoset, action)."""
        key = (layer, player)
        agg = self._aggregators.get(key)
        if agg is None:
            n, big_j = self.num_states[layer], self.num_joint
            x = self.state_infosets[layer][:, player]
            a = self.joint_actions[:, player]
            cols = (x[:, None] * self.action_counts[player] + a[None, :]).ravel()
            agg = sparse.csr_matrix(
                (np.ones(n * big_j), (np.arange(n * big_j), cols)),
                shape=(n * big_j, self.num_infosets(player) * self.action_counts[player]),
            )
            self._aggregators[key] = agg
        return agg

    @cached_property
    def _children(self) -> list:
        """Per layer: segment offsets over (state, joint) and cumulative child probs."""
        out = []
        for h in range(self.horizon - 1):
            seg = self.parent[h + 1] * self.num_joint + self.parent_joint[h + 1]
            order = np.lexsort((np.arange(len(seg)), seg))
            seg_sorted = seg[order]
            probs = self.transition[h + 1][order]
            cum = np.empty_like(probs)
            starts = np.searchsorted(seg_sorted, np.arange(self.num_states[h] * self.num_joint))
            ends = np.append(starts[1:], len(seg_sorted))
            for lo, hi in zip(starts, ends):
                c = np.cumsum(probs[lo:hi])
                c[-1] = 1.0
                cum[lo:hi] = c
            out.append((order, seg_sorted + cum))
        return out


# ---------------------------------------------------------------------------
# Validation


def _parse_distribution(entry, size: int, what: str) -> dict[int, float]:
    if isinstance(entry, bool):
        raise TreeViolation(f"{what}: bad transition entry")
    if isinstance(entry, int):
        dist = {entry: 1.0}
    elif isinstance(entry, dict):
        dist = {}
        for k, v in entry.items():
            dist[int(k)] = dist.get(int(k), 0.0) + float(v)
    elif isinstance(entry, list):
        dist = {k: float(v) for k, v in enumerate(entry) if float(v) != 0.0}
        if len(entry) != size:
            raise TreeViolation(f"{what}: dense distribution has wrong length")
    else:
        raise TreeViolation(f"{what}: bad transition entry {entry!r}")
    for k, v in dist.items():
        if not 0 <= k < size:
            raise TreeViolation(f"{what}: child {k} outside the next layer")
        if v < 0:
            raise StochasticityError(f"{what}: negative probability")
    if abs(sum(dist.values()) - 1.0) > PROB_TOL:
        raise StochasticityError(f"{what}: probabilities sum to {sum(dist.values())!r}")
    return dist


def validate_game(raw: dict[str, Any]) -> TreeGame:
    """Check a parsed game description and build its index structures."""
    m = int(raw["players"])
    horizon = int(raw["horizon"])
    action_counts = [int(a) for a in raw["action_counts"]]
    layers = raw["states"]
    if m < 1 or horizon < 1 or len(action_counts) != m or min(action_counts) < 1:
        raise TreeViolation("players, horizon and action_counts are inconsistent")
    if len(layers) != horizon or any(len(layer) == 0 for layer in layers):
        raise TreeViolation("states must list one nonempty layer per step")
    joints = list(np.ndindex(*action_counts))
    joint_index = {j: n for n, j in enumerate(joints)}
    sizes = [len(layer) for layer in layers]

    initial = raw["initial"]
    if isinstance(initial, dict):
        p0 = np.zeros(sizes[0])
        for k, v in initial.items():
            if not 0 <= int(k) < sizes[0]:
                raise TreeViolation("initial distribution names an unknown state")
            p0[int(k)] += float(v)
    else:
        p0 = np.asarray(initial, dtype=float)
        if p0.shape != (sizes[0],):
            raise TreeViolation("initial distribution has the wrong length")
    if (p0 < 0).any() or abs(p0.sum() - 1.0) > PROB_TOL:
        raise StochasticityError("initial distribution is not a probability vector")

    labels: list[dict] = [dict() for _ in range(m)]
    label_layer: list[dict] = [dict() for _ in range(m)]
    state_infosets, rewards = [], []
    parent = [np.full(0, -1, dtype=np.int64)]
    parent_joint = [np.full(0, -1, dtype=np.int64)]
    transition = [np.zeros(0)]
    for h, layer in enumerate(layers):
        inf = np.empty((len(layer), m), dtype=np.int64)
        rew = np.zeros((len(layer), len(joints), m))
        if h + 1 < horizon:
            par = np.full(sizes[h + 1], -1, dtype=np.int64)
            pj = np.full(sizes[h + 1], -1, dtype=np.int64)
            tp = np.zeros(sizes[h + 1])
        for k, node in enumerate(layer):
            where = f"state {k} of layer {h}"
            tags = node["infoset"]
            if len(tags) != m:
                raise TreeViolation(f"{where}: needs one infoset per player")
            for i, tag in enumerate(tags):
                tag = str(tag)
                seen = label_layer[i].setdefault(tag, h)
                if seen != h:
                    raise RecallViolation(
                        f"player {i} infoset {tag!r} spans layers {seen} and {h}"
                    )
                inf[k, i] = labels[i].setdefault(tag, len(labels[i]))
            for key, vals in node.get("rewards", {}).items():
                j = joint_index[parse_joint(key, action_counts)]
                vals = np.asarray(vals, dtype=float)
                if vals.shape != (m,):
                    raise RewardRange(f"{where}: reward for {key} needs {m} entries")
                if (vals < 0).any() or (vals > 1).any() or not np.isfinite(vals).all():
                    raise RewardRange(f"{where}: reward {vals.tolist()} outside [0, 1]")
                rew[k, j] = vals
            nxt = node.get("next", {}) or {}
            if h + 1 == horizon:
                if nxt:
                    raise TreeViolation(f"{where}: last-layer state has successors")
                continue
            parsed = {joint_index[parse_joint(key, action_counts)]: val for key, val in nxt.items()}
            for j in range(len(joints)):
                if j not in parsed:
                    raise StochasticityError(f"{where}: no transition for joint action {joints[j]}")
                for child, prob in _parse_distribution(parsed[j], sizes[h + 1], where).items():
                    if par[child] != -1:
                        raise TreeViolation(f"state {child} of layer {h + 1} has two parents")
                    par[child], pj[child], tp[child] = k, j, prob
        if h + 1 < horizon:
            if (par == -1).any():
                missing = int(np.flatnonzero(par == -1)[0])
                raise TreeViolation(f"state {missing} of layer {h + 1} is unreachable")
            parent.append(par)
            parent_joint.append(pj)
            transition.append(tp)
        state_infosets.append(inf)
        rewards.append(rew)

    joint_arr = np.array(joints, dtype=np.int64).reshape(-1, m)
    infosets = tuple(
        _index_player(i, labels[i], label_layer[i], state_infosets, parent, parent_joint,
                      joint_arr, action_counts[i], horizon)
        for i in range(m)
    )
    canonical = {
        "players": m,
        "horizon": horizon,
        "action_counts": action_counts,
        "initial": p0.tolist(),
        "states": layers,
    }
    return TreeGame(
        raw=canonical, action_counts=action_counts, initial=p0,
        state_infosets=tuple(state_infosets), rewards=tuple(rewards),
        parent=tuple(parent), parent_joint=tuple(parent_joint),
        transition=tuple(transition), infosets=infosets,
    )


def _index_player(i, labels, label_layer, state_infosets, parent, parent_joint,
                  joint_arr, num_actions, horizon) -> InfosetIndex:
    count = len(labels)
    ordered = sorted(labels, key=labels.get)
    layer = np.array([label_layer[t] for t in ordered], dtype=np.int64)
    par = np.full(count, -1, dtype=np.int64)
    par_action = np.full(count, -1, dtype=np.int64)
    members = [[] for _ in range(count)]
    for h, inf in enumerate(state_infosets):
        for s, x in enumerate(inf[:, i]):
            members[x].append(s)
            if h == 0:
                continue
            ps, pj = parent[h][s], parent_joint[h][s]
            hist = (int(state_infosets[h - 1][ps, i]), int(joint_arr[pj, i]))
            if par[x] == -1:
                par[x], par_action[x] = hist
            elif (par[x], par_action[x]) != hist:
                raise RecallViolation(
                    f"player {i} infoset {ordered[x]!r} merges different own histories"
                )
    anc_x = np.full((count, horizon), -1, dtype=np.int64)
    anc_a = np.full((count, horizon), -1, dtype=np.int64)
    desc = np.zeros((horizon, count, num_actions), dtype=np.int64)
    children = [[[] for _ in range(num_actions)] for _ in range(count)]
    for x in np.argsort(layer, kind="stable"):
        if par[x] >= 0:
            anc_x[x] = anc_x[par[x]]
            anc_a[x] = anc_a[par[x]]
            anc_x[x, layer[par[x]]] = par[x]
            anc_a[x, layer[par[x]]] = par_action[x]
            children[par[x]][par_action[x]].append(int(x))
        h = layer[x]
        for k in range(h):
            desc[h, anc_x[x, k], anc_a[x, k]] += 1
    by_layer = tuple(np.flatnonzero(layer == h) for h in range(horizon))
    return InfosetIndex(
        labels=tuple(ordered), layer=layer, parent=par, parent_action=par_action,
        states=tuple(np.array(s, dtype=np.int64) for s in members), by_layer=by_layer,
        ancestor_infosets=anc_x, ancestor_actions=anc_a,
        children=tuple(tuple(tuple(c) for c in row) for row in children),
        descendants=desc,
    )


def load_game(path) -> TreeGame:
    with open(path) as fh:
        return validate_game(json.load(fh))


def save_game(game: TreeGame, path) -> None:
    with open(path, "w") as fh:
        json.dump(game.to_json(), fh)


# ---------------------------------------------------------------------------
# Exact evaluation


def as_batch(profile: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Give every table a leading component axis."""
    tables = [np.asarray(t, dtype=float) for t in profile]
    if all(t.ndim == 2 for t in tables):
        return [t[None] for t in tables]
    if all(t.ndim == 3 for t in tables):
        return tables
    raise ValueError("profile tables must all be 2-D or all be 3-D")


def action_probs(game: TreeGame, profile, layer: int, skip: int | None = None) -> np.ndarray:
    """Probability of each joint action at each state: ``(C, n_h, J)``.

    With ``skip=i`` player ``i``'s own factor is left out.
    """
    tables = as_batch(profile)
    inf = game.state_infosets[layer]
    out = None
    for j, table in enumerate(tables):
        if j == skip:
            continue
        factor = table[:, inf[:, j][:, None], game.joint_actions[:, j][None, :]]
        out = factor if out is None else out * factor
    if out is None:
        out = np.ones((tables[0].shape[0], game.num_states[layer], game.num_joint))
    return out


def state_reach(game: TreeGame, profile, skip: int | None = None) -> list[np.ndarray]:
    """Per layer ``(C, n_h)``: chance times all (or all other) players' reach."""
    tables = as_batch(profile)
    c = tables[0].shape[0]
    reach = [np.broadcast_to(game.initial, (c, game.num_states[0])).copy()]
    for h in range(game.horizon - 1):
        probs = action_probs(game, tables, h, skip)
        par, pj = game.parent[h + 1], game.parent_joint[h + 1]
        reach.append(reach[h][:, par] * probs[:, par, pj] * game.transition[h + 1])
    return reach


def values(game: TreeGame, profile) -> np.ndarray:
    """Expected return of every player under every component: ``(C, m)``."""
    tables = as_batch(profile)
    reach = state_reach(game, tables)
    total = 0.0
    for h in range(game.horizon):
        weight = reach[h][:, :, None] * action_probs(game, tables, h)
        total = total + np.einsum("csj,sjm->cm", weight, game.rewards[h])
    return total


def value(game: TreeGame, profile, player: int) -> float:
    return float(values(game, profile)[0, player])


def weighted_payoffs(game: TreeGame, profile, player: int, loss: bool = False) -> np.ndarray:
    """Immediate reward (or loss ``1 - r``) at each (infoset, action).

    Entry ``[c, x, a]`` sums, over states of ``x`` and opponents' joint
    actions, the chance-and-opponent reach times the opponents' action
    probabilities times the payoff.  Shape ``(C, X_i, A_i)``.
    """
    tables = as_batch(profile)
    c = tables[0].shape[0]
    n_x, n_a = game.num_infosets(player), game.action_counts[player]
    reach = state_reach(game, tables, skip=player)
    out = np.zeros((c, n_x * n_a))
    for h in range(game.horizon):
        pay = game.rewards[h][:, :, player]
        if loss:
            pay = 1.0 - pay
        weight = reach[h][:, :, None] * action_probs(game, tables, h, skip=player) * pay
        out += (game.aggregator(h, player).T @ weight.reshape(c, -1).T).T
    return out.reshape(c, n_x, n_a)


def marginal_reach(game: TreeGame, profile, player: int) -> np.ndarray:
    """Chance-and-opponent probability of reaching each of ``player``'s infosets.

    Returns ``(X_i,)`` for a single profile and ``(C, X_i)`` for a batch.
    """
    tables = as_batch(profile)
    c = tables[0].shape[0]
    reach = state_reach(game, tables, skip=player)
    out = np.zeros((c, game.num_infosets(player)))
    for h in range(game.horizon):
        np.add.at(out.T, game.state_infosets[h][:, player], reach[h].T)
    return out[0] if np.asarray(profile[0]).ndim == 2 else out


def accumulate_to_go(game: TreeGame, own: np.ndarray, player: int, immediate: np.ndarray) -> np.ndarray:
    """Add the own-policy-weighted continuation to per-step quantities.

    ``immediate`` and ``own`` are ``(C, X_i, A_i)``.  The result at ``(x, a)``
    is the immediate entry plus, for each child infoset of ``(x, a)``, the
    own-policy average of the child's result.
    """
    index = game.infosets[player]
    total = immediate.copy()
    for h in range(game.horizon - 1, 0, -1):
        xs = index.by_layer[h]
        if len(xs) == 0:
            continue
        v = (own[:, xs] * total[:, xs]).sum(axis=2)
        np.add.at(
            total.transpose(1, 2, 0),
            (index.parent[xs], index.parent_action[xs]),
            v.T,
        )
    return total


@dataclass(frozen=True)
class LossTable:
    """Counterfactual losses of one player, indexed ``[x, a]``.

    ``immediate`` is the per-step loss and ``total`` adds the continuation
    under the player's own policy after the step.
    """

    player: int
    immediate: np.ndarray
    total: np.ndarray


def counterfactual_losses(game: TreeGame, profile, player: int) -> LossTable:
    tables = as_batch(profile)
    step = weighted_payoffs(game, tables, player, loss=True)
    total = accumulate_to_go(game, tables[player], player, step)
    if np.asarray(profile[0]).ndim == 2:
        return LossTable(player, step[0], total[0])
    return LossTable(player, step, total)


# ---------------------------------------------------------------------------
# Simulation


def play_episodes(game: TreeGame, profile, n: int, rng: np.random.Generator,
                  components: np.ndarray | None = None) -> EpisodeBatch:
    """Sample ``n`` independent episodes.

    With ``components`` given, tables are ``(C, X, A)`` batches and episode
    ``k`` is played with component ``components[k]`` of every player.
    """
    tables = as_batch(profile)
    comp = np.zeros(n, dtype=np.int64) if components is None else np.asarray(components, dtype=np.int64)
    if comp.shape != (n,):
        raise ValueError("need one component index per episode")
    m, horizon = game.num_players, game.horizon
    states = np.empty((n, horizon), dtype=np.int64)
    infosets = np.empty((n, horizon, m), dtype=np.int64)
    actions = np.empty((n, horizon, m), dtype=np.int64)
    rewards = np.empty((n, horizon, m))
    cdf0 = np.cumsum(game.initial)
    cdf0[-1] = 1.0
    s = np.minimum(np.searchsorted(cdf0, rng.random(n), side="right"), len(cdf0) - 1)
    strides = np.array([int(np.prod(game.action_counts[j + 1:])) for j in range(m)])
    for h in range(horizon):
        states[:, h] = s
        inf = game.state_infosets[h][s]
        infosets[:, h] = inf
        for j in range(m):
            t = tables[j]
            cdf = np.cumsum(t[comp if t.shape[0] > 1 else 0, inf[:, j]], axis=1)
            cdf[:, -1] = 1.0
            u = rng.random(n)
            actions[:, h, j] = np.minimum((u[:, None] >= cdf).sum(axis=1), game.action_counts[j] - 1)
        joint = actions[:, h] @ strides
        rewards[:, h] = game.rewards[h][s, joint]
        if h + 1 < horizon:
            order, keys = game._children[h]
            target = s * game.num_joint + joint + rng.random(n)
            pos = np.searchsorted(keys, target, side="right")
            s = order[np.minimum(pos, len(keys) - 1)]
    return EpisodeBatch(states, infosets, actions, rewards)


def play_episode(game: TreeGame, profile, rng: np.random.Generator) -> Trajectory:
    return play_episodes(game, profile, 1, rng).trajectory(0)
