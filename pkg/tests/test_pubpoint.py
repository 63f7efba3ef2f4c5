import pytest

from rpkisim.engine import EventLog
from rpkisim.pubpoint import MB, FetchSession, Normal, Selective, StallIdle, Throttle, object_size
from rpkisim.scenario import build_world, load_bundled


def test_normal_transfer_time():
    assert Normal().timing(1 * MB) == (0.0, pytest.approx(0.1))


def test_stall_idle_timing():
    assert StallIdle(299.0).timing(1 * MB) == (299.0, pytest.approx(299.1))
    with pytest.raises(ValueError):
        StallIdle(0)


def test_throttle_inflates_and_trickles():
    th = Throttle(bandwidth=1000.0, inflate_to=3_600_000)
    assert th.timing(50_000) == (0.0, 3600.0)
    assert th.timing(5_000_000) == (0.0, 5000.0)
    with pytest.raises(ValueError):
        Throttle(0, 1)


def test_selective_picks_by_client():
    sel = Selective({"10.0.0.1": ("victim-view", "slow")}, ("public-view", "fast"))
    assert sel.pick("10.0.0.1") == ("victim-view", "slow")
    assert sel.pick("10.0.0.2") == ("public-view", "fast")


def test_session_state_machine():
    s = FetchSession("c", "d", 0.0, 10, "normal")
    s.advance("serving")
    s.advance("done")
    with pytest.raises(ValueError):
        s.advance("timed_out")
    t = FetchSession("c", "d", 0.0, 10, "normal")
    with pytest.raises(ValueError):
        t.advance("handshake")


def test_object_size_is_deterministic_and_bounded():
    tree = build_world(load_bundled("healthy-baseline"), 0, EventLog(enabled=False)).tree
    sizes = [object_size(r) for r in tree.roas.values()]
    assert sizes == [object_size(r) for r in tree.roas.values()]
    assert all(10_000 <= s <= 100_000 for s in sizes)


def first_refresh_outcome(behavior, domain="attacker.example"):
    world = build_world(load_bundled("healthy-baseline"), 0, EventLog(enabled=False))
    world.nodes["pp-attacker"].behavior = behavior
    rp = world.nodes["rp"]
    rp.refresh_listeners.append(lambda *_: world.engine.stop())
    world.engine.run_for(3600)
    return next(o for o in rp.reports[0]["per_pp"] if o["domain"] == domain)


@pytest.mark.parametrize("hold,outcome", [(299.0, "ok"), (301.0, "fetch_timeout")])
def test_idle_hold_against_routinator_timeout(hold, outcome):
    rec = first_refresh_outcome(StallIdle(hold))
    assert rec["outcome"] == outcome
    assert rec["duration"] == pytest.approx(min(hold, 300.0), abs=0.5)


def test_syn_limit_drops_excess_handshakes():
    from rpkisim.dns import probe_syn_limit
    from rpkisim.pubpoint import PublicationPoint
    res = probe_syn_limit(lambda: PublicationPoint("pp", "192.0.2.80", None, syn_rate_limit=60, maintain=False),
                          [30, 75, 150])
    assert res["rows"][0]["responses_per_s"] == 30
    assert res["limit"] == pytest.approx(60, rel=0.1)
