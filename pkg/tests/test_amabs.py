import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from choiceopt.amabs import (AmabsConfig, AmabsState, improvement, next_batch_size,
                             sample_batch, wma)


def test_wma_single_value():
    assert wma([-100.0], 10, 1) == -100.0


def test_wma_hand_example():
    assert wma([-100.0, -90.0, -80.0], 10, 3) == pytest.approx(-86.66667, abs=1e-5)


def test_wma_window_truncates():
    # only the last two values, weights (2, 1)
    assert wma([-1000.0, -90.0, -80.0], 2) == pytest.approx((2 * -80 - 90) / 3)


def test_wma_requires_values():
    with pytest.raises(ValueError):
        wma([], 10)


@given(st.floats(-1e6, 1e6), st.integers(1, 30), st.integers(1, 30))
def test_wma_of_constant(c, n, window):
    assert wma([c] * n, window) == pytest.approx(c, rel=1e-12, abs=1e-12)


@given(st.lists(st.integers(-1000, 1000).map(float), min_size=2, max_size=20),
       st.integers(2, 20))
def test_wma_is_order_sensitive(values, window):
    m = min(len(values), window)
    recent = values[-m:]
    if len(set(recent)) > 1 and recent != recent[::-1]:
        forward, backward = wma(recent, window), wma(recent[::-1], window)
        weights = np.arange(1, len(recent) + 1)
        if weights @ np.array(recent) != weights @ np.array(recent[::-1]):
            assert forward != pytest.approx(backward, abs=1e-9)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20), st.integers(1, 40))
def test_wma_uses_min_k_w_values(values, window):
    m = min(len(values), window)
    w = np.arange(1, m + 1, dtype=float)
    expected = w @ np.array(values[-m:]) / w.sum()
    assert wma(values, window) == pytest.approx(expected, rel=1e-12, abs=1e-9)


def test_improvement_examples():
    assert improvement(-90.0, -86.66667) == pytest.approx(0.037037, abs=1e-6)
    assert improvement(-90.0, -90.0) == 0.0
    assert improvement(-90.0, -95.0) == pytest.approx(-0.0556, abs=1e-4)
    with pytest.raises(ZeroDivisionError):
        improvement(0.0, 1.0)


def test_next_batch_size():
    assert next_batch_size(1000, 2.0, 10 ** 6) == 2000
    assert next_batch_size(1000, 2.0, 1500) == 1500
    assert next_batch_size(3, 1.1, 100) == 4  # floor would stall; at least +1


@pytest.mark.parametrize("kw", [dict(window=0), dict(threshold=0.0), dict(count=0),
                                dict(factor=1.0), dict(initial_batch=0)])
def test_config_validated(kw):
    with pytest.raises(ValueError):
        AmabsConfig(**kw)


def test_initial_batch_clamped():
    assert AmabsState(AmabsConfig(initial_batch=1000), 300).batch_size == 300


def values_for(improvements, start=-100.0):
    """L values whose WMA with window 1 gives exactly the scripted improvements."""
    out = [start]
    for i in improvements:
        out.append(out[-1] * (1.0 - i))
    return out


def test_two_slow_iterations_double_the_batch():
    st_ = AmabsState(AmabsConfig(window=1), 100000)
    sizes = [st_.step(v) for v in values_for([0.005, 0.005])]
    assert sizes == [1000, 1000, 2000]
    assert st_.counter == 0


def test_cap_at_n_max():
    st_ = AmabsState(AmabsConfig(window=1, initial_batch=500), 500)
    assert all(st_.step(v) == 500 for v in values_for([0.0] * 10))


def test_alternating_progress_never_grows():
    st_ = AmabsState(AmabsConfig(window=1), 10 ** 6)
    sizes = [st_.step(v) for v in values_for([0.02, 0.005] * 20)]
    assert set(sizes) == {1000}


def test_first_iteration_only_records():
    st_ = AmabsState(AmabsConfig(count=1), 10 ** 6)
    assert st_.step(-100.0) == 1000 and st_.last_improvement is None


def test_promote():
    st_ = AmabsState(AmabsConfig(), 5000)
    st_.counter = 1
    st_.promote()
    assert st_.batch_size == 5000 and st_.counter == 0


def reference_machine(improvements, C, tau, n0, n_max, delta):
    """Direct transcription of the controller: counter, growth, clamp."""
    c, n, sizes, counters = 0, n0, [n0], [0]
    for i in improvements:
        c = c + 1 if i < delta else 0
        if c == C:
            c = 0
            n = min(max(int(np.floor(tau * n)), n + 1), n_max)
        sizes.append(n)
        counters.append(c)
    return sizes, counters


@pytest.mark.parametrize("C", [1, 2, 3])
@pytest.mark.parametrize("tau", [1.1, 2.0, 5.0])
def test_state_machine_exhaustive(C, tau):
    """Every pass/fail pattern of length 8 against the reference machine."""
    delta = 0.01
    for pattern in itertools.product((0.03, 0.001, -0.02), repeat=8):
        st_ = AmabsState(AmabsConfig(window=1, count=C, factor=tau, threshold=delta,
                                     initial_batch=1000), 9000)
        sizes, counters = [], []
        for v in values_for(pattern):
            sizes.append(st_.step(v))
            counters.append(st_.counter)
            assert 0 <= st_.counter < C or (C == 1 and st_.counter == 0)
        exp_sizes, exp_counters = reference_machine(pattern, C, tau, 1000, 9000, delta)
        assert sizes == exp_sizes, pattern
        assert counters == exp_counters, pattern
        for a, b in zip(sizes, sizes[1:]):
            assert b == a or b == min(max(int(np.floor(tau * a)), a + 1), 9000)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-500, -1), min_size=1, max_size=80), st.integers(1, 12),
       st.integers(1, 4), st.floats(1.05, 4.0), st.integers(1, 5000), st.integers(1, 20000))
def test_controller_invariants(values, W, C, tau, n0, n_max):
    st_ = AmabsState(AmabsConfig(window=W, count=C, factor=tau, initial_batch=n0), n_max)
    prev = st_.batch_size
    for v in values:
        size = st_.step(v)
        assert prev <= size <= n_max
        assert 0 <= st_.counter <= C
        if size > prev:
            assert st_.counter == 0
            assert size == min(max(int(np.floor(tau * prev)), prev + 1), n_max)
        if st_.last_improvement is not None and st_.last_improvement >= st_.config.threshold:
            assert st_.counter == 0
        prev = size


# -- sampling ------------------------------------------------------------------

def test_full_batch_when_n_prime_equals_n():
    b = sample_batch(50, 50, np.random.default_rng(0))
    assert b.is_full and np.array_equal(np.sort(b.indices), np.arange(50))


def test_sample_rejects_oversized():
    with pytest.raises(ValueError):
        sample_batch(10, 11, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_batch(10, 0, np.random.default_rng(0))


def test_sample_deterministic_under_seed():
    a = sample_batch(1000, 100, np.random.Generator(np.random.PCG64(5)))
    b = sample_batch(1000, 100, np.random.Generator(np.random.PCG64(5)))
    c = sample_batch(1000, 100, np.random.Generator(np.random.PCG64(6)))
    assert np.array_equal(a.indices, b.indices)
    assert not np.array_equal(a.indices, c.indices)


def test_sample_distinct():
    b = sample_batch(100, 99, np.random.default_rng(1))
    assert np.unique(b.indices).size == 99


def test_inclusion_frequency_binomial():
    from scipy import stats

    N, n, reps = 100_000, 1000, 1000
    rng = np.random.Generator(np.random.PCG64(2024))
    counts = np.zeros(N)
    for _ in range(reps):
        counts[sample_batch(N, n, rng).indices] += 1
    p = n / N
    sigma = np.sqrt(reps * p * (1 - p))
    outside = int(np.sum(np.abs(counts - reps * p) > 5 * sigma))
    # with 1e5 indices a handful of 5-sigma exceedances is expected by chance;
    # compare the count with the exact binomial tail (about 1.6 expected)
    tail = stats.binom.sf(np.floor(reps * p + 5 * sigma), reps, p) * N
    assert outside <= stats.poisson.ppf(1 - 1e-6, tail)
    assert np.all(counts <= reps * p + 8 * sigma)
    # every draw has exactly n entries
    assert counts.sum() == n * reps
