import numpy as np
import pytest

from kefce.bench import gen_random_game
from kefce.game import validate_game
from kefce.policy import CorrelatedPolicy, random_profile

ACCEPTANCE_LINES: dict[int, str] = {}


def one_player_game(rewards_per_layer, branching=None):
    """A one-player perfect-information game over a full binary tree of actions."""
    horizon = len(rewards_per_layer)
    layers = []
    for h in range(horizon):
        nodes = []
        for s in range(2**h):
            node = {"infoset": [f"{h}:{s}"],
                    "rewards": {str(a): [rewards_per_layer[h][s][a]] for a in range(2)}}
            if h + 1 < horizon:
                node["next"] = {str(a): 2 * s + a for a in range(2)}
            nodes.append(node)
        layers.append(nodes)
    return validate_game({"players": 1, "horizon": horizon, "action_counts": [2],
                          "initial": [1.0], "states": layers})


def random_mixture(game, rng, components=3, pure=False):
    return CorrelatedPolicy.from_products([random_profile(game, rng, pure) for _ in range(components)])


@pytest.fixture
def small_game():
    return gen_random_game(11, horizon=3, actions=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])


def random_modification(game, player, k, rng):
    from kefce.deviation import StrategyModification, enumerate_rechistories

    n = game.action_counts[player]
    swaps, actions = {}, {}
    for x in range(game.num_infosets(player)):
        first, second = enumerate_rechistories(game, player, k, x)
        for r in first:
            swaps[r] = tuple(int(v) for v in rng.integers(0, n, size=n))
        for r in second:
            actions[r] = int(rng.integers(0, n))
    return StrategyModification(player, min(k, game.horizon), swaps, actions)
