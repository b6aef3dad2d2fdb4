"""Correlated equilibria with bounded deviations in imperfect-information games."""

from .bench import gen_containment_game, gen_kuhn_poker, gen_nfce_example, gen_random_game
from .deviation import Rechistory, StrategyModification, enumerate_rechistories
from .evaluate import kefce_gap, kefce_gap_bruteforce, kefce_regret, nfce_gap, nfcce_gap, trigger_gap
from .game import TreeGame, load_game, validate_game
from .kefr import run_kefr_bandit, run_kefr_full
from .policy import CorrelatedPolicy

__all__ = [
    "CorrelatedPolicy", "Rechistory", "StrategyModification", "TreeGame",
    "enumerate_rechistories", "gen_containment_game", "gen_kuhn_poker", "gen_nfce_example",
    "gen_random_game", "kefce_gap", "kefce_gap_bruteforce", "kefce_regret", "load_game",
    "nfce_gap", "nfcce_gap", "run_kefr_bandit", "run_kefr_full", "trigger_gap", "validate_game",
]
