import math

import pytest
from hypothesis import assume, given, settings, strategies as st

from rpkisim import analysis
from rpkisim.analysis import (ScenarioParams, attacker_rate, n_attempts, overwhelming_factor, p_connectonce,
                              p_success, packet_volume, wilson_interval)


def test_attempt_counts():
    assert n_attempts(24 * 3600, 600, 6) == 864
    assert n_attempts(6 * 3600, 900, 1) == 24
    assert n_attempts(48 * 3600, 120, 16) == 23040
    assert n_attempts(24 * 3600, 2.6 * 3600, 6) == 55
    with pytest.raises(ValueError):
        n_attempts(0, 600, 6)


def test_connect_once_clamps():
    assert p_connectonce(10, 90) == pytest.approx(10 / 91)
    assert p_connectonce(10, 0) == 1.0
    with pytest.raises(ValueError):
        p_connectonce(-1, 1)


def test_overwhelming_factor_values():
    assert round(overwhelming_factor(864, 0.5)) == 1247
    assert round(overwhelming_factor(55, 0.5)) == 80
    with pytest.raises(ValueError):
        overwhelming_factor(0, 0.5)
    with pytest.raises(ValueError):
        overwhelming_factor(10, 1.0)


def test_packet_volume_rows():
    assert packet_volume(1247, 3) == (3741, 112230)
    assert packet_volume(80, 60) == (4800, 144000)


def test_s60_flagged_and_others_clean():
    rows = analysis.table5()
    flagged = [(r["scenario"], r["r_limit"]) for r in rows if r["flag"].startswith("differs")]
    assert flagged == [("S", 60)]
    assert all(r["flag"] == "ok" for r in analysis.table4())


def test_render_tables_csv():
    t4, t5 = analysis.render_tables()
    assert t4.splitlines()[0].startswith("scenario,n_attempts")
    assert len(t5.splitlines()) == 13


def test_wilson_interval():
    low, high = wilson_interval(200, 400)
    assert low < 0.5 < high and high - low == pytest.approx(0.098, abs=0.002)
    with pytest.raises(ValueError):
        wilson_interval(0, 0)


def test_scenario_params_validation():
    with pytest.raises(ValueError):
        ScenarioParams("x", 1, 1, 1, p_target=1.5)
    with pytest.raises(ValueError):
        ScenarioParams("x", 1, -1, 1)


@settings(max_examples=200)
@given(n=st.integers(1, 50_000), p=st.floats(0.01, 0.99), r=st.sampled_from([3, 10, 60, 1288, 4667]))
def test_exact_rate_round_trips_to_target(n, p, r):
    o = overwhelming_factor(n, p)
    rate = attacker_rate(o, r)
    assume(rate >= r)  # below that a single attempt is always served
    assert p_success(r, rate, n) == pytest.approx(p, abs=1e-6)


@settings(max_examples=200)
@given(r=st.floats(1, 1000), a=st.floats(0, 1e6), b=st.floats(0, 1e6), n=st.integers(1, 1000))
def test_success_grows_with_attacker_rate(r, a, b, n):
    lo, hi = sorted((a, b))
    assert p_success(r, lo, n) <= p_success(r, hi, n)


@settings(max_examples=200)
@given(r=st.floats(1, 100), rate=st.floats(0, 1e5), n=st.integers(1, 1000))
def test_success_shrinks_with_attempts(r, rate, n):
    assert p_success(r, rate, n + 1) <= p_success(r, rate, n)


@settings(max_examples=100)
@given(n=st.integers(1, 10_000), p=st.floats(0.01, 0.98))
def test_factor_grows_with_target(n, p):
    assert overwhelming_factor(n, p) <= overwhelming_factor(n, min(0.99, p + 0.01)) + 1e-9
    assert math.isfinite(overwhelming_factor(n, p))
