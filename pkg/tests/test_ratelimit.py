import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rpkisim.analysis import p_connectonce
from rpkisim.ratelimit import RateLimiter, TokenBucket, default_burst


def brute_force_service(rate, burst, flood_rate, horizon, victim_times, seed):
    """Walk every token, flood packet and victim query in time order."""
    rng = np.random.default_rng(seed)
    n_tok = int(horizon * rate) + 2
    tokens = (np.arange(n_tok) + rng.random(n_tok)) / rate
    flood = np.sort(rng.uniform(0, horizon, rng.poisson(flood_rate * horizon)))
    events = sorted([(t, 0) for t in tokens] + [(t, 1) for t in flood] + [(t, 2) for t in victim_times])
    q, served = burst, 0
    for _, kind in events:
        if kind == 0:
            q = min(burst, q + 1)
        elif q:
            q -= 1
            served += kind == 2
    return served / len(victim_times)


def victim_schedule(n, spacing, seed):
    rng = np.random.default_rng(seed)
    return np.arange(n) * spacing + rng.uniform(0, spacing, n)


def test_default_burst():
    assert default_burst(10) == 2
    assert default_burst(3) == 1
    assert default_burst(4667) == 934


def test_bucket_rejects_bad_parameters():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        TokenBucket(0, 1, rng)
    with pytest.raises(ValueError):
        TokenBucket(5, 0, rng)


def test_flood_service_probability_matches_brute_force_and_closed_form():
    rate, flood_rate, horizon = 10.0, 90.0, 20_000.0
    victims = victim_schedule(4000, horizon / 4000, 7)
    bucket = TokenBucket(rate, default_burst(rate), np.random.default_rng(1))
    bucket.add_flood(flood_rate, 0.0, horizon)
    model = np.mean([bucket.try_consume(float(t)) for t in victims])
    oracle = brute_force_service(rate, default_burst(rate), flood_rate, horizon, victims, 2)
    closed = p_connectonce(rate, flood_rate)
    assert abs(model - oracle) < 0.02
    assert abs(model - closed) < 0.02
    assert abs(model - 0.10) < 0.02


def test_slow_flood_uses_explicit_path_and_agrees():
    rate, flood_rate, horizon = 10.0, 12.0, 10_000.0
    victims = victim_schedule(2000, horizon / 2000, 3)
    bucket = TokenBucket(rate, default_burst(rate), np.random.default_rng(4))
    bucket.add_flood(flood_rate, 0.0, horizon)
    model = np.mean([bucket.try_consume(float(t)) for t in victims])
    oracle = brute_force_service(rate, default_burst(rate), flood_rate, horizon, victims, 5)
    assert abs(model - oracle) < 0.04


def test_bucket_refills_after_the_flood():
    bucket = TokenBucket(10.0, 2, np.random.default_rng(0))
    bucket.add_flood(1000.0, 0.0, 5.0)
    assert bucket.peek(6.0) == 2


def test_flood_may_not_start_in_the_past():
    bucket = TokenBucket(10.0, 2, np.random.default_rng(0))
    bucket.peek(3.0)
    with pytest.raises(ValueError):
        bucket.add_flood(50.0, 1.0, 4.0)


def test_limiter_keys_by_exact_source():
    rl = RateLimiter(1.0, np.random.default_rng(0), burst=1)
    assert rl.allow("10.0.0.1", 0)
    assert not rl.allow("10.0.0.1", 0)
    assert rl.allow("10.0.0.2", 0)


@settings(max_examples=40, deadline=None)
@given(rate=st.floats(min_value=0.5, max_value=200), burst=st.integers(min_value=1, max_value=20),
       times=st.lists(st.floats(min_value=0, max_value=50), min_size=1, max_size=300),
       seed=st.integers(min_value=0, max_value=1000))
def test_admissions_never_exceed_burst_plus_refill(rate, burst, times, seed):
    bucket = TokenBucket(rate, burst, np.random.default_rng(seed))
    times = sorted(times)
    admitted = sum(bucket.try_consume(t) for t in times)
    assert admitted <= burst + math.ceil(rate * times[-1]) + 1
