import pytest
from hypothesis import given, settings, strategies as st

from rpkisim.bgp import Announcement, RouteState, Topology, best_path, classify
from rpkisim.rpki import parse_prefix

VRPS = [(parse_prefix("10.0.0.0/22"), 22, 64500)]


@pytest.mark.parametrize("prefix,origin,state", [
    ("10.0.0.0/22", 64500, RouteState.VALID),
    ("10.0.1.0/24", 64500, RouteState.INVALID),  # longer than max_len
    ("10.0.0.0/22", 64666, RouteState.INVALID),
    ("10.0.1.0/24", 64666, RouteState.INVALID),
    ("192.0.2.0/24", 64666, RouteState.UNKNOWN)])
def test_classify(prefix, origin, state):
    assert classify(Announcement(prefix, origin), VRPS) is state


def test_as0_never_validates():
    deny = [(parse_prefix("10.0.0.0/22"), 32, 0)]
    assert classify(Announcement("10.0.0.0/22", 64500), deny) is RouteState.INVALID
    assert classify(Announcement("10.0.0.0/22", 0), deny) is RouteState.INVALID


def test_no_vrps_means_unknown():
    assert classify(Announcement("10.0.0.0/22", 64500), []) is RouteState.UNKNOWN


def test_best_path_order():
    a = Announcement("10.0.0.0/22", 1, (2, 1), local_pref=200)
    b = Announcement("10.0.1.0/24", 3, (4, 5, 3), local_pref=100)
    c = Announcement("10.0.0.0/22", 6, (6,), local_pref=100)
    assert best_path([a, b, c]) is b
    assert best_path([a, c]) is a
    d = Announcement("10.0.0.0/22", 7, (8, 7), local_pref=200)
    assert best_path([d, a]) is a  # same length path, lower origin ASN
    with pytest.raises(ValueError):
        best_path([])


def test_announcement_path_must_end_at_origin():
    with pytest.raises(ValueError):
        Announcement("10.0.0.0/22", 1, (1, 2))


def ixp(rov=True):
    t = Topology()
    t.add_as(64500, ["10.0.0.0/22"], ["10.0.1.10"])
    t.add_as(64510, ["172.16.0.0/24"], ["172.16.0.10"])
    t.add_as(64666, ["203.0.113.0/24"], ["203.0.113.10"])
    t.set_route_server([64500, 64510, 64666], "rp" if rov else None)
    t.receive_vrps("rp", VRPS)
    return t


def test_hijack_filtered_then_hijacked_after_downgrade():
    t = ixp()
    hijack = Announcement("10.0.1.0/24", 64666)
    assert t.hijack_outcome("10.0.0.0/22", hijack, 64510) == "filtered"
    assert t.reachability("172.16.0.10", "10.0.1.10") == 1
    t.receive_vrps("rp", [])
    assert t.hijack_outcome("10.0.0.0/22", hijack, 64510) == "hijacked"
    # the announcement is withdrawn again afterwards
    assert t.lookup(64510, "10.0.1.10").origin_asn == 64500


def test_same_length_hijack_not_preferred_over_direct_peer():
    t = ixp(rov=False)
    t.add_as(64520, ["172.16.1.0/24"], ["172.16.1.10"])
    t.link(64510, 64500, "direct-peer", 300)
    assert t.hijack_outcome("10.0.0.0/22", Announcement("10.0.0.0/22", 64666), 64510) == "not-preferred"


def test_strict_deny_cuts_reachability():
    t = ixp()
    t.receive_vrps("rp", [(parse_prefix("10.0.0.0/22"), 32, 0)])
    assert t.hijack_outcome("10.0.0.0/22", Announcement("10.0.1.0/24", 64666), 64510) == "filtered"
    assert t.reachability("172.16.0.10", "10.0.1.10") == 0


def test_forward_path_through_transit():
    t = Topology()
    t.add_as(1, ["10.1.0.0/24"], ["10.1.0.1"])
    t.add_as(2, ["10.2.0.0/24"], ["10.2.0.1"])
    t.add_as(3, ["10.3.0.0/24"], ["10.3.0.1"])
    t.link(1, 2)
    t.link(2, 3)
    assert t.forward_path(1, "10.3.0.1") == [1, 2, 3]
    assert t.reachability("10.1.0.1", "10.3.0.1") == 1
    with pytest.raises(KeyError):
        t.as_of("10.9.9.9")
    with pytest.raises(ValueError):
        t.add_as(1)


@settings(max_examples=50, deadline=None)
@given(plen=st.integers(22, 32), origin=st.sampled_from([64500, 64666, 0]), max_len=st.integers(22, 32))
def test_classification_is_covered_and_consistent(plen, origin, max_len):
    vrps = [(parse_prefix("10.0.0.0/22"), max_len, 64500)]
    prefix = parse_prefix(f"10.0.0.0/{plen}")
    state = classify(Announcement(prefix, origin), vrps)
    assert state is not RouteState.UNKNOWN
    assert (state is RouteState.VALID) == (origin == 64500 and plen <= max_len)


def test_ixp_route_beats_upstream_for_equal_prefix():
    ixp_route = Announcement("10.0.0.0/22", 64500, (64500,), "route-server", 200)
    upstream = Announcement("10.0.0.0/22", 64500, (64800, 64500), "upstream", 100)
    assert best_path([upstream, ixp_route]) is ixp_route


def test_longer_path_equal_pref_not_preferred():
    t = Topology()
    t.add_as(64500, ["10.0.0.0/22"], ["10.0.1.10"])
    t.add_as(64510, ["172.16.0.0/24"], ["172.16.0.10"])
    t.add_as(64600, ["10.6.0.0/24"], ["10.6.0.1"])
    t.add_as(64666, ["203.0.113.0/24"], ["203.0.113.10"])
    t.link(64510, 64500)
    t.link(64510, 64600)
    t.link(64600, 64666)
    assert t.hijack_outcome("10.0.0.0/22", Announcement("10.0.0.0/22", 64666), 64510) == "not-preferred"
