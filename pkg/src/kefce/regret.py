"""Hedge over (time selection, action modification) pairs.

Each time-selection index ``b`` is paired either with every map of the
action set into itself (swap indices) or with every constant map
(external indices).  The learner keeps a weight per pair, and each round
plays a fixed point of the weighted average of the maps.

Weights are kept unnormalized in log space, so their total is the
potential that the exact variant never increases.
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from .errors import CapExceeded, ConvergenceFailure, EmptyIndexSets, RangeError

MAX_ACTIONS = 8
RESIDUAL_TOL = 1e-10
MAX_ITERATIONS = 10**5


@lru_cache(maxsize=None)
def swap_maps(num_actions: int) -> np.ndarray:
    """All maps of ``range(A)`` into itself, one per row; row ``r`` sends ``j`` to ``maps[r, j]``."""
    return np.array(list(itertools.product(range(num_actions), repeat=num_actions)), dtype=np.int64)


@lru_cache(maxsize=None)
def _swap_onehot(num_actions: int) -> np.ndarray:
    maps = swap_maps(num_actions)
    out = np.zeros((len(maps), num_actions, num_actions))
    rows = np.arange(num_actions)
    for r, m in enumerate(maps):
        out[r, rows, m] = 1.0
    return out


def pushforward(map_row: np.ndarray) -> np.ndarray:
    """The 0/1 matrix with a one at ``(j, map_row[j])`` for every ``j``."""
    out = np.zeros((len(map_row), len(map_row)))
    out[np.arange(len(map_row)), map_row] = 1.0
    return out


def stationary_distribution(q: np.ndarray) -> np.ndarray:
    """A distribution ``p`` with ``p Q = p`` for a row-stochastic ``Q``.

    When the fixed point is unique it is found with one linear solve.
    Otherwise the chain is reducible and power iteration from the uniform
    distribution picks one fixed point deterministically.
    """
    n = q.shape[0]
    system = np.vstack([q.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    sol, _, rank, _ = np.linalg.lstsq(system, rhs, rcond=None)
    if rank == n and sol.min() > -1e-9:
        p = np.clip(sol, 0.0, None)
        p /= p.sum()
        if np.abs(p @ q - p).sum() <= RESIDUAL_TOL:
            return p
    p = np.full(n, 1.0 / n)
    for _ in range(MAX_ITERATIONS):
        nxt = p @ q
        if np.abs(nxt - p).sum() <= RESIDUAL_TOL:
            return nxt / nxt.sum()
        p = nxt
    raise ConvergenceFailure("power iteration did not reach a fixed point")


class WideRangeMinimizer:
    """One wide-range regret minimizer over ``A`` actions.

    ``variant="exact"`` expects one loss vector per round shared by all
    indices.  ``variant="stochastic"`` expects one estimate per index and a
    loss cap ``loss_cap`` bounding every ``S_b * max(estimate_b)``.
    """

    def __init__(self, num_actions: int, swap_count: int, external_count: int, eta: float,
                 variant: str = "exact", loss_cap: float | None = None):
        if swap_count + external_count == 0:
            raise EmptyIndexSets("a minimizer needs at least one time-selection index")
        if num_actions > MAX_ACTIONS:
            raise ValueError(f"swap maps are only built for at most {MAX_ACTIONS} actions")
        if not eta > 0:
            raise ValueError("the learning rate must be positive")
        if variant not in ("exact", "stochastic"):
            raise ValueError(f"unknown variant {variant!r}")
        if variant == "stochastic" and not (loss_cap is not None and loss_cap > 0):
            raise ValueError("the stochastic variant needs a positive loss cap")
        self.num_actions = num_actions
        self.swap_count = swap_count
        self.external_count = external_count
        self.eta = float(eta)
        self.variant = variant
        self.loss_cap = loss_cap
        self.maps = swap_maps(num_actions)
        n_swap_maps = len(self.maps)
        self.log_w_swap = np.full((swap_count, n_swap_maps), np.log(num_actions))
        self.log_w_ext = np.full((external_count, num_actions), np.log(n_swap_maps))
        self.selection = np.zeros(swap_count + external_count)
        self.strategy: np.ndarray | None = None
        self.residual = 0.0
        self._record = None

    @property
    def index_count(self) -> int:
        return self.swap_count + self.external_count

    def log_total_weight(self) -> float:
        return float(logsumexp(np.concatenate([self.log_w_swap.ravel(), self.log_w_ext.ravel()])))

    def distribution(self) -> tuple[np.ndarray, np.ndarray]:
        """Normalized weights, split into the swap and external blocks."""
        z = self.log_total_weight()
        return np.exp(self.log_w_swap - z), np.exp(self.log_w_ext - z)

    def observe_time_selection(self, selection) -> None:
        s = np.asarray(selection, dtype=float)
        if s.shape != (self.index_count,):
            raise RangeError(f"expected {self.index_count} time-selection values, got {s.shape}")
        if (s < 0).any() or (s > 1).any() or not np.isfinite(s).all():
            raise RangeError("time-selection values must lie in [0, 1]")
        if self._record is not None:
            self._update(*self._record)
            self._record = None
        self.selection = s
        self.strategy = None

    def _update(self, s, p, losses) -> None:
        eta = self.eta
        if self.variant == "exact":
            discount = np.exp(-eta * float(np.max(losses[0], initial=0.0)))
        else:
            discount = np.exp(-eta * self.loss_cap)
        own = losses @ p
        ns = self.swap_count
        if ns:
            ls = losses[:ns]
            moved = np.einsum("j,brj->br", p, ls[:, self.maps])
            self.log_w_swap += eta * s[:ns, None] * (discount * own[:ns, None] - moved)
        if self.external_count:
            le = losses[ns:]
            self.log_w_ext += eta * s[ns:, None] * (discount * own[ns:, None] - le)

    def recommend(self) -> np.ndarray:
        if self.strategy is not None:
            return self.strategy
        n = self.num_actions
        with np.errstate(divide="ignore"):
            log_s = np.log(self.selection)
        ns = self.swap_count
        parts = []
        if ns:
            parts.append(logsumexp(self.log_w_swap + log_s[:ns, None], axis=0))
        if self.external_count:
            parts.append(logsumexp(self.log_w_ext + log_s[ns:, None], axis=0))
        logs = np.concatenate(parts)
        top = logs.max()
        if not np.isfinite(top):
            self.strategy = np.full(n, 1.0 / n)
            self.residual = 0.0
            return self.strategy
        mass = np.exp(logs - top)
        q = np.zeros((n, n))
        if ns:
            q += np.tensordot(mass[: len(self.maps)], _swap_onehot(n), axes=1)
        if self.external_count:
            q += mass[-n:][None, :] if ns else mass[None, :]
        q /= q.sum(axis=1, keepdims=True)
        p = stationary_distribution(q)
        self.residual = float(np.abs(p @ q - p).sum())
        self.strategy = p
        return p

    def observe_loss(self, loss) -> None:
        """Exact variant: one nonnegative loss vector for every index."""
        loss = np.asarray(loss, dtype=float)
        if loss.shape != (self.num_actions,) or (loss < 0).any() or not np.isfinite(loss).all():
            raise RangeError("losses must be finite, nonnegative and one per action")
        self._store(np.broadcast_to(loss, (self.index_count, self.num_actions)))

    def observe_losses(self, losses) -> None:
        """Stochastic variant: one loss estimate per index."""
        losses = np.asarray(losses, dtype=float)
        if losses.shape != (self.index_count, self.num_actions):
            raise RangeError("expected one loss vector per time-selection index")
        if (losses < 0).any() or not np.isfinite(losses).all():
            raise RangeError("losses must be finite and nonnegative")
        if self.variant == "stochastic":
            scaled = self.selection * losses.max(axis=1)
            if (scaled > self.loss_cap * (1 + 1e-9)).any():
                raise CapExceeded(f"S_b * |loss_b| = {scaled.max()!r} exceeds the cap {self.loss_cap!r}")
        self._store(losses)

    def _store(self, losses) -> None:
        p = self.recommend()
        self._record = (self.selection.copy(), p.copy(), np.array(losses))
