import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kefce.errors import CapExceeded, EmptyIndexSets, RangeError
from kefce.regret import WideRangeMinimizer, pushforward, stationary_distribution, swap_maps


def brute_maps(n):
    return np.array(list(itertools.product(range(n), repeat=n)))


def moved_loss(p, loss, pool):
    """Loss of ``p`` pushed through each map of ``pool``."""
    return (p[None, :] * loss[pool]).sum(axis=1)


def test_swap_maps_and_pushforward():
    maps = swap_maps(3)
    assert len(maps) == 27 and len({tuple(m) for m in maps}) == 27
    m = pushforward(np.array([2, 0, 2]))
    assert m.tolist() == [[0, 0, 1], [1, 0, 0], [0, 0, 1]]


def test_initial_weights():
    swap_q, ext_q = WideRangeMinimizer(2, 1, 0, 0.1).distribution()
    assert np.allclose(swap_q, 0.25, atol=1e-15) and ext_q.size == 0
    swap_q, ext_q = WideRangeMinimizer(3, 0, 2, 0.1).distribution()
    assert np.allclose(ext_q, 1 / 6, atol=1e-15) and swap_q.size == 0
    swap_q, ext_q = WideRangeMinimizer(2, 1, 1, 0.1).distribution()
    assert np.allclose(swap_q, 1 / 8, atol=1e-15) and np.allclose(ext_q, 1 / 4, atol=1e-15)


def test_constructor_errors():
    with pytest.raises(EmptyIndexSets):
        WideRangeMinimizer(2, 0, 0, 0.1)
    with pytest.raises(ValueError):
        WideRangeMinimizer(9, 1, 0, 0.1)
    with pytest.raises(ValueError):
        WideRangeMinimizer(2, 1, 0, 0.1, variant="stochastic")
    with pytest.raises(ValueError):
        WideRangeMinimizer(2, 1, 0, 0.0)


def test_time_selection_range_checked():
    m = WideRangeMinimizer(2, 1, 1, 0.1)
    for bad in ([0.5, 1.5], [-0.1, 0.2], [np.nan, 0.0], [0.5]):
        with pytest.raises(RangeError):
            m.observe_time_selection(bad)


def test_first_round_and_silent_rounds_leave_weights_alone():
    m = WideRangeMinimizer(2, 1, 1, 0.3)
    start = m.distribution()
    m.observe_time_selection([0.7, 0.2])
    assert all(np.array_equal(a, b) for a, b in zip(start, m.distribution()))
    for _ in range(5):
        m.observe_time_selection([0.0, 0.0])
        assert m.recommend().tolist() == [0.5, 0.5]
        m.observe_loss([1.0, 0.0])
    m.observe_time_selection([0.0, 0.0])
    assert all(np.allclose(a, b, atol=1e-15) for a, b in zip(start, m.distribution()))


def test_two_round_update_by_hand():
    eta = 0.5
    m = WideRangeMinimizer(2, 1, 1, eta)
    m.observe_time_selection([1.0, 0.5])
    p = m.recommend()
    assert p.tolist() == pytest.approx([0.5, 0.5], abs=1e-12)
    m.observe_loss([1.0, 0.0])
    m.observe_time_selection([1.0, 1.0])
    discount = math.exp(-0.5)
    # Maps in order (0,0), (0,1), (1,0), (1,1); constants 0 and 1.
    swap_exp = [0.5 * 1.0 * (0.5 * discount - v) for v in (1.0, 0.5, 0.5, 0.0)]
    ext_exp = [0.5 * 0.5 * (0.5 * discount - v) for v in (1.0, 0.0)]
    raw = [2 * math.exp(e) for e in swap_exp] + [4 * math.exp(e) for e in ext_exp]
    swap_q, ext_q = m.distribution()
    assert np.allclose(np.concatenate([swap_q[0], ext_q[0]]), np.array(raw) / sum(raw), atol=1e-14)


def test_recommend_examples():
    m = WideRangeMinimizer(3, 0, 1, 0.1)
    m.log_w_ext[0] = [0.0, -np.inf, -np.inf]
    m.observe_time_selection([1.0])
    assert m.recommend().tolist() == pytest.approx([1.0, 0.0, 0.0], abs=1e-12)

    m = WideRangeMinimizer(3, 1, 0, 0.1)
    m.log_w_swap[:] = -np.inf
    m.log_w_swap[0, [tuple(r) for r in swap_maps(3)].index((0, 1, 2))] = 0.0
    m.observe_time_selection([1.0])
    assert m.recommend() == pytest.approx(np.full(3, 1 / 3), abs=1e-12)

    m = WideRangeMinimizer(2, 0, 1, 0.1)
    m.observe_time_selection([0.4])
    assert m.recommend() == pytest.approx([0.5, 0.5], abs=1e-12)


def test_loss_checks():
    m = WideRangeMinimizer(2, 1, 1, 0.1, variant="stochastic", loss_cap=2.0)
    m.observe_time_selection([0.5, 1.0])
    m.observe_losses([[4.0, 0.0], [2.0, 1.0]])
    m.observe_time_selection([0.5, 1.0])
    with pytest.raises(CapExceeded):
        m.observe_losses([[4.1, 0.0], [0.0, 0.0]])
    with pytest.raises(RangeError):
        m.observe_losses([[-1.0, 0.0], [0.0, 0.0]])
    e = WideRangeMinimizer(2, 1, 0, 0.1)
    e.observe_time_selection([1.0])
    with pytest.raises(RangeError):
        e.observe_loss([np.inf, 0.0])


def test_identical_estimates_reduce_to_the_exact_update_with_the_cap():
    # With the loss norm equal to the cap the two discounts agree.
    rng = np.random.default_rng(0)
    exact = WideRangeMinimizer(3, 2, 1, 0.2)
    stoch = WideRangeMinimizer(3, 2, 1, 0.2, variant="stochastic", loss_cap=2.0)
    for _ in range(30):
        s = rng.random(3)
        loss = rng.random(3) * 2
        loss[rng.integers(3)] = 2.0
        for m in (exact, stoch):
            m.observe_time_selection(s)
            m.recommend()
        exact.observe_loss(loss)
        stoch.observe_losses(np.tile(loss, (3, 1)))
    for a, b in zip(exact.distribution(), stoch.distribution()):
        assert np.allclose(a, b, atol=1e-13)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 5))
def test_stationary_distribution_residual(seed, n):
    rng = np.random.default_rng(seed)
    q = rng.random((n, n)) * (rng.random((n, n)) < 0.5)
    q[np.arange(n), rng.integers(0, n, n)] += 1.0
    q /= q.sum(axis=1, keepdims=True)
    p = stationary_distribution(q)
    assert p.min() >= 0 and p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.abs(p @ q - p).sum() <= 1e-10


def adversarial_run(seed, rounds, num_actions, n_swap, n_ext, eta=None):
    """Drive an exact minimizer; return per-index regret and bound gaps."""
    rng = np.random.default_rng(seed)
    eta = eta if eta is not None else float(rng.uniform(0.01, 1.0))
    m = WideRangeMinimizer(num_actions, n_swap, n_ext, eta)
    n_idx = n_swap + n_ext
    maps = brute_maps(num_actions)
    consts = np.repeat(np.arange(num_actions)[:, None], num_actions, axis=1)
    own = np.zeros(n_idx)
    moved = [np.zeros(len(maps)) for _ in range(n_swap)] + [np.zeros(num_actions) for _ in range(n_ext)]
    penalty = np.zeros(n_idx)
    log_w = [m.log_total_weight()]
    style = rng.integers(3)
    for t in range(rounds):
        s = rng.random(n_idx)
        s[rng.random(n_idx) < 0.2] = 0.0
        m.observe_time_selection(s)
        log_w.append(m.log_total_weight())
        p = m.recommend()
        assert m.residual <= 1e-10
        if style == 0:
            loss = rng.random(num_actions) * rng.choice([0.1, 1.0, 5.0])
        elif style == 1:
            loss = np.zeros(num_actions)
            loss[np.argmax(p)] = rng.uniform(0.5, 3.0)
        else:
            loss = np.where(rng.random(num_actions) < 0.5, 0.0, rng.exponential(2.0, num_actions))
        m.observe_loss(loss)
        base = float(p @ loss)
        own += s * base
        penalty += eta * loss.max() * s * base
        for b in range(n_idx):
            pool = maps if b < n_swap else consts
            moved[b] += s[b] * moved_loss(p, loss, pool)
    out = []
    for b in range(n_idx):
        size = len(maps) if b < n_swap else num_actions
        regret = own[b] - moved[b].min()
        bound = penalty[b] + math.log(n_idx * size) / eta
        out.append(bound - regret)
    return np.array(out), np.diff(log_w)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 3), st.integers(0, 3), st.integers(0, 3))
def test_deterministic_regret_bound(seed, num_actions, n_swap, n_ext):
    if n_swap + n_ext == 0:
        n_ext = 1
    slack, steps = adversarial_run(seed, 120, num_actions, n_swap, n_ext)
    assert slack.min() >= -1e-9
    assert steps.max() <= 1e-12


def swrhedge_run(seed, rounds=300, num_actions=3, failure_prob=0.05):
    """Synthetic same-mean estimators; True when every index meets its bound."""
    rng = np.random.default_rng(seed)
    n_swap, n_ext = 2, 2
    n_idx = n_swap + n_ext
    keep = 0.5
    cap = 1.0 / keep
    eta = 0.05
    w = rng.uniform(0.3, 1.0, n_idx)
    m = WideRangeMinimizer(num_actions, n_swap, n_ext, eta, variant="stochastic", loss_cap=cap)
    maps = brute_maps(num_actions)
    consts = np.repeat(np.arange(num_actions)[:, None], num_actions, axis=1)
    own = np.zeros(n_idx)
    penalty = np.zeros(n_idx)
    moved = [np.zeros(len(maps)) for _ in range(n_swap)] + [np.zeros(num_actions) for _ in range(n_ext)]
    for t in range(rounds):
        mult = rng.uniform(0, 1, n_idx) / w * (rng.random(n_idx) < 0.8)
        mult = np.minimum(mult, 1.0 / w)
        s = w * mult
        m.observe_time_selection(s)
        p = m.recommend()
        loss = rng.random(num_actions)
        est = loss[None, :] * (rng.random((n_idx, num_actions)) < keep) / keep
        m.observe_losses(est)
        for b in range(n_idx):
            base = float(p @ est[b])
            own[b] += mult[b] * base
            penalty[b] += eta * cap * mult[b] * base
            pool = maps if b < n_swap else consts
            moved[b] += mult[b] * moved_loss(p, est[b], pool)
    for b in range(n_idx):
        size = len(maps) if b < n_swap else num_actions
        bound = penalty[b] + math.log(n_idx * size / failure_prob) / (eta * w[b])
        if own[b] - moved[b].min() > bound:
            return False
    return True


@pytest.mark.slow
def test_stochastic_regret_bound_holds_with_high_probability():
    held = sum(swrhedge_run(seed) for seed in range(200))
    assert held >= 190
