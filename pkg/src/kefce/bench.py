"""Example games and the experiment runner behind the command line."""

from __future__ import annotations

import csv
import io
import itertools
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SizeGuard
from .evaluate import kefce_gap
from .game import TreeGame, joint_key, load_game, validate_game
from .kefr import run_kefr_bandit, run_kefr_full
from .policy import CorrelatedPolicy

KUHN_SCALE = 0.25
KUHN_OFFSET = 2.0
MAX_STATES = 10**5
MIRROR_FULL_LIMIT = 12

CSV_COLUMNS = ["game_digest", "mode", "K", "T_checkpoint", "seed", "player", "gap", "regret",
               "episodes", "wall_ms"]


# ---------------------------------------------------------------------------
# Generators


def _mirror_tables(game: TreeGame, bits_of_state) -> list[np.ndarray]:
    """Both players play the same bit at every state of a perfect-information game."""
    tables = []
    for i in range(game.num_players):
        index = game.infosets[i]
        comps = []
        for bits in bits_of_state:
            t = np.zeros((index.count, 2))
            for h in range(game.horizon):
                t[game.state_infosets[h][:, i], bits[h]] = 1.0
            comps.append(t)
        tables.append(np.stack(comps))
    return tables


def gen_containment_game(k: int, mirror: str = "auto") -> tuple[TreeGame, CorrelatedPolicy]:
    """Two players over ``k + 1`` steps; player 0 wins by mismatching every step.

    The mixture is uniform over policies where both players play the same
    bit at each state.  ``mirror="layer"`` uses one bit per layer instead of
    one per state; along any single play the bits are i.i.d. fair coins in
    both cases, so every gap is the same.  ``"auto"`` picks the per-state
    mixture while it has at most ``2**12`` components.
    """
    if k < 0:
        raise ValueError("the budget must be nonnegative")
    if k > 4:
        raise SizeGuard("the containment game is only built for budgets up to 4")
    horizon = k + 1
    layers = []
    for h in range(horizon):
        pairs = list(itertools.product(itertools.product(range(2), repeat=h), repeat=2))
        nxt_rank = {p: n for n, p in enumerate(
            itertools.product(itertools.product(range(2), repeat=h + 1), repeat=2))}
        nodes = []
        for a_hist, b_hist in pairs:
            label = f"{''.join(map(str, a_hist))}|{''.join(map(str, b_hist))}"
            node = {"infoset": [label, label]}
            if h + 1 < horizon:
                node["next"] = {
                    joint_key((a, b)): nxt_rank[(a_hist + (a,), b_hist + (b,))]
                    for a in range(2) for b in range(2)
                }
            else:
                rewards = {}
                for a in range(2):
                    for b in range(2):
                        xs, ys = a_hist + (a,), b_hist + (b,)
                        if all(u != v for u, v in zip(xs, ys)):
                            r = 1.0
                        elif xs == ys:
                            r = 0.5
                        else:
                            r = 0.0
                        rewards[joint_key((a, b))] = [r, 0.0]
                node["rewards"] = rewards
            nodes.append(node)
        layers.append(nodes)
    game = validate_game({"players": 2, "horizon": horizon, "action_counts": [2, 2],
                          "initial": [1.0], "states": layers})
    n_states = sum(game.num_states)
    if mirror == "auto":
        mirror = "full" if n_states <= MIRROR_FULL_LIMIT else "layer"
    if mirror == "full":
        bit_sets = []
        for bits in itertools.product(range(2), repeat=n_states):
            per_layer, pos = [], 0
            for n in game.num_states:
                per_layer.append(np.array(bits[pos:pos + n]))
                pos += n
            bit_sets.append(per_layer)
    elif mirror == "layer":
        bit_sets = [[np.full(n, b) for n, b in zip(game.num_states, bits)]
                    for bits in itertools.product(range(2), repeat=horizon)]
    else:
        raise ValueError(f"unknown mirror mixture {mirror!r}")
    return game, CorrelatedPolicy(_mirror_tables(game, bit_sets))


def gen_nfce_example() -> tuple[TreeGame, CorrelatedPolicy]:
    """Two steps, perfect information, where seeing the whole recommended policy pays.

    Player 0 earns 1/2 for action 0 at the root.  After root actions
    ``(i, j)`` the game moves to state ``(i, j)``; when ``i = 1`` player 0
    earns 1 if player 1 then plays 0.  The mixture couples both players'
    bits at each of the five states.
    """
    root = {"infoset": ["root", "root"],
            "rewards": {joint_key((a, b)): [0.5 if a == 0 else 0.0, 0.0]
                        for a in range(2) for b in range(2)},
            "next": {joint_key((i, j)): 2 * i + j for i in range(2) for j in range(2)}}
    second = []
    for i in range(2):
        for j in range(2):
            rewards = {joint_key((a, b)): [1.0 if (i == 1 and b == 0) else 0.0, 0.0]
                       for a in range(2) for b in range(2)}
            second.append({"infoset": [f"s{i}{j}", f"s{i}{j}"], "rewards": rewards})
    game = validate_game({"players": 2, "horizon": 2, "action_counts": [2, 2],
                          "initial": [1.0], "states": [[root], second]})
    bit_sets = [[np.array(bits[:1]), np.array(bits[1:])]
                for bits in itertools.product(range(2), repeat=5)]
    return game, CorrelatedPolicy(_mirror_tables(game, bit_sets))


KUHN_CARDS = "JQK"


def kuhn_payoff(c1: int, c2: int, first: int, reply: int, call: int) -> int:
    """Chips won by the first player.

    ``first``: 0 check, 1 bet.  ``reply``: after a check 0 check / 1 bet,
    after a bet 0 fold / 1 call.  ``call``: the first player's answer to a
    bet after checking, 0 fold / 1 call.
    """
    sign = 1 if c1 > c2 else -1
    if first == 0:
        if reply == 0:
            return sign
        return 2 * sign if call == 1 else -1
    return 2 * sign if reply == 1 else 1


def gen_kuhn_poker() -> TreeGame:
    """Three-card poker in two steps.

    Step one deals the cards (chance) and the first player checks or bets;
    the second player's action there is a placeholder.  In step two the
    second player answers, and the first player simultaneously commits to
    calling or folding should a check be met by a bet; after its own bet
    the first player's step-two action is a placeholder.  Chip payoffs
    ``u`` become rewards ``(u + 2) / 4`` and ``(2 - u) / 4``.
    """
    deals = [(c1, c2) for c1 in range(3) for c2 in range(3) if c1 != c2]
    first_layer, second_layer = [], []
    for d, (c1, c2) in enumerate(deals):
        first_layer.append({
            "infoset": [KUHN_CARDS[c1], KUHN_CARDS[c2]],
            "next": {joint_key((a, z)): 4 * d + 2 * a + z for a in range(2) for z in range(2)},
        })
        for a in range(2):
            for z in range(2):
                rewards = {}
                for call in range(2):
                    for reply in range(2):
                        u = kuhn_payoff(c1, c2, a, reply, call)
                        rewards[joint_key((call, reply))] = [
                            (u + KUHN_OFFSET) * KUHN_SCALE, (KUHN_OFFSET - u) * KUHN_SCALE]
                line = "cb"[a]
                second_layer.append({
                    "infoset": [KUHN_CARDS[c1] + line, f"{KUHN_CARDS[c2]}{z}{line}"],
                    "rewards": rewards,
                })
    return validate_game({"players": 2, "horizon": 2, "action_counts": [2, 2],
                          "initial": [1.0 / 6] * 6, "states": [first_layer, second_layer]})


def gen_random_game(seed: int, players: int = 2, horizon: int = 2, actions=2,
                    states_per_layer: int = 1, branching: int = 1, signals: int = 2) -> TreeGame:
    """A random tree with i.i.d. uniform rewards.

    Every state shows each player a random signal; a player's infoset is
    its previous infoset, its own last action and the new signal, so
    states sharing an infoset always share the player's history.
    """
    rng = np.random.default_rng(seed)
    counts = [int(actions)] * players if np.isscalar(actions) else [int(a) for a in actions]
    if len(counts) != players:
        raise ValueError("need one action count per player")
    n_joint = int(np.prod(counts))
    sizes = [states_per_layer]
    for _ in range(horizon - 1):
        sizes.append(sizes[-1] * n_joint * branching)
    if sum(sizes) > MAX_STATES:
        raise SizeGuard(f"{sum(sizes)} states exceed the limit {MAX_STATES}")
    joints = list(np.ndindex(*counts))
    layers = []
    labels = [[f"{rng.integers(signals)}" for _ in range(players)] for _ in range(states_per_layer)]
    for h in range(horizon):
        nodes, next_labels = [], []
        for s in range(sizes[h]):
            node = {"infoset": labels[s]}
            node["rewards"] = {joint_key(j): rng.random(players).round(6).tolist() for j in joints}
            if h + 1 < horizon:
                nxt = {}
                for j in joints:
                    kids = list(range(len(next_labels), len(next_labels) + branching))
                    probs = rng.dirichlet(np.ones(branching)) if branching > 1 else np.ones(1)
                    probs = np.round(probs, 6)
                    probs[-1] = 1.0 - probs[:-1].sum()
                    nxt[joint_key(j)] = {str(c): float(p) for c, p in zip(kids, probs)}
                    for _ in kids:
                        next_labels.append([f"{labels[s][i]}.{j[i]}{rng.integers(signals)}"
                                            for i in range(players)])
                node["next"] = nxt
            nodes.append(node)
        layers.append(nodes)
        labels = next_labels
    initial = np.round(rng.dirichlet(np.ones(states_per_layer)), 6)
    initial[-1] = 1.0 - initial[:-1].sum()
    return validate_game({"players": players, "horizon": horizon, "action_counts": counts,
                          "initial": initial.tolist(), "states": layers})


GENERATORS = ("containment", "nfce", "kuhn", "random")


def game_from_source(source: str) -> tuple[TreeGame, CorrelatedPolicy | None, dict]:
    """A game from a file path or a generator spec such as ``random:seed=3,horizon=3``.

    Returns the game, the generator's mixture if it has one, and header
    metadata for result files.
    """
    name, _, args = source.partition(":")
    if name not in GENERATORS:
        return load_game(source), None, {"reward_scale": "1", "reward_offset": "0"}
    params = {}
    for item in filter(None, args.split(",")):
        key, _, val = item.partition("=")
        params[key.strip()] = int(val)
    meta = {"reward_scale": "1", "reward_offset": "0"}
    mix = None
    if name == "containment":
        game, mix = gen_containment_game(params.get("K", params.get("k", 1)))
    elif name == "nfce":
        game, mix = gen_nfce_example()
    elif name == "kuhn":
        game = gen_kuhn_poker()
        meta = {"reward_scale": str(KUHN_SCALE), "reward_offset": str(KUHN_OFFSET)}
    else:
        game = gen_random_game(**params)
    return game, mix, meta


# ---------------------------------------------------------------------------
# Experiments


@dataclass
class ExperimentConfig:
    game: str
    ks: list
    rounds: int
    mode: str = "full"
    seeds: list = field(default_factory=lambda: [0])
    out: str = "results.csv"
    eta: float | None = None
    failure_prob: float = 0.05
    max_components: int = 64
    record_wall_time: bool = True

    def __post_init__(self):
        if not self.ks:
            raise ValueError("the K list must not be empty")
        if self.rounds < 1:
            raise ValueError("at least one round is needed")
        if self.mode not in ("full", "bandit"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.seeds:
            raise ValueError("need at least one seed")


def checkpoints(rounds: int) -> list[int]:
    """Powers of two from 16 up to ``rounds``, or just ``rounds`` when it is smaller."""
    out = []
    t = 16
    while t <= rounds:
        out.append(t)
        t *= 2
    return out or [rounds]


def subsample_seed(seed: int, k: int, checkpoint: int) -> int:
    return int(np.random.SeedSequence([seed, k, checkpoint]).generate_state(1)[0])


def thin(policies: list, upto: int, limit: int, seed: int) -> CorrelatedPolicy:
    """Uniform mixture over the first ``upto`` rounds, subsampled to at most ``limit`` of them."""
    if upto <= limit:
        idx = np.arange(upto)
    else:
        idx = np.sort(np.random.default_rng(seed).choice(upto, size=limit, replace=False))
    return CorrelatedPolicy([p[idx] for p in policies])


def _run_cell(args) -> list[list]:
    cfg, k, seed = args
    game, _, _ = game_from_source(cfg.game)
    if cfg.mode == "full":
        run = run_kefr_full(game, k, cfg.rounds, eta=cfg.eta)
    else:
        run = run_kefr_bandit(game, k, cfg.rounds, seed=seed, failure_prob=cfg.failure_prob, eta=cfg.eta)
    rows = []
    for t in checkpoints(cfg.rounds):
        mix = thin(run.policies, t, cfg.max_components, subsample_seed(seed, k, t))
        report = kefce_gap(game, mix, k)
        episodes = run.episode_log[t - 1] if run.episode_log else 0
        wall = int(round(1000 * run.metrics[t - 1]["wall_s"])) if cfg.record_wall_time else 0
        rows.append([game.fingerprint, cfg.mode, k, t, seed, report.player, repr(report.gap),
                     repr(t * report.gap), episodes, wall])
    return rows


def _workers(cells: int) -> int:
    cap = os.environ.get("KEFCE_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, cells))


def run_experiment(cfg: ExperimentConfig) -> Path:
    """Learn on every (K, seed) cell and write gaps at the checkpoints to ``cfg.out``.

    Rows are written cell by cell as they finish, in (K, seed) order, so a
    failure leaves the finished cells on disk.
    """
    game, _, meta = game_from_source(cfg.game)
    cells = [(cfg, int(k), int(seed)) for k in cfg.ks for seed in cfg.seeds]
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = io.StringIO()
    header.write(f"# game_digest: {game.fingerprint}\n")
    header.write(f"# reward_scale: {meta['reward_scale']}\n")
    header.write(f"# reward_offset: {meta['reward_offset']}\n")
    header.write(f"# max_components: {cfg.max_components}\n")
    header.write("# subsample seed: SeedSequence([seed, K, T_checkpoint]), first word\n")
    workers = _workers(len(cells))
    with out.open("w", newline="") as fh:
        fh.write(header.getvalue())
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        fh.flush()
        if workers == 1:
            results = map(_run_cell, cells)
            for rows in results:
                writer.writerows(rows)
                fh.flush()
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for rows in pool.map(_run_cell, cells):
                    writer.writerows(rows)
                    fh.flush()
    return out


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))
