import pytest
from hypothesis import given, settings, strategies as st

from rpkisim.rpki import (Certificate, Manifest, ObjectState, PpUri, RepositoryTree, Resource, Roa,
                          build_delegation_chain, content_hash, maintain_manifest)

HOUR, DAY = 3600.0, 86400.0


def small_tree():
    t = RepositoryTree()
    t.add_cert(Certificate("ta", Resource(0, ("10.0.0.0/8",)), PpUri("ta.example")))
    t.add_cert(Certificate("ca", Resource(64500, ("10.0.0.0/22",)), PpUri("ca.example"), parent="ta"),
               Manifest("ca", valid_until=24 * HOUR))
    t.add_roa(Roa("roa", "10.0.0.0/22", 64500, 24, "ca"))
    t.domain_map.update({"ta.example": "192.0.2.1", "ca.example": "192.0.2.2"})
    return t


def test_resource_normalises_and_covers():
    r = Resource(1, ("10.0.0.0/8", "10.0.0.0/8"))
    assert len(r.prefixes) == 1
    assert r.covers(Resource(2, ("10.1.0.0/16",)))
    assert not r.covers(Resource(2, ("11.0.0.0/16",)))
    with pytest.raises(ValueError):
        Resource(1, ())


def test_roa_bounds():
    with pytest.raises(ValueError):
        Roa("r", "10.0.0.0/22", 1, 20, "ca")
    with pytest.raises(ValueError):
        Roa("r", "10.0.0.0/22", 1, 33, "ca")
    assert Roa("r", "10.0.0.0/22", 1, 32, "ca").vrp[1] == 32


@pytest.mark.parametrize("remaining,renewed", [(7 * HOUR, False), (5 * HOUR, True), (-1.0, True)])
def test_maintain_manifest(remaining, renewed):
    now = 100 * HOUR
    m = Manifest("ca", valid_from=0.0, valid_until=now + remaining, threshold=6 * HOUR, period=24 * HOUR)
    out = maintain_manifest(m, now)
    assert (out is not m) == renewed
    if renewed:
        assert out.valid_until == now + 24 * HOUR and out.valid_from == now


def test_object_state():
    t = small_tree()
    assert t.object_state("roa", HOUR) is ObjectState.CURRENT
    assert t.object_state("roa", 25 * HOUR) is ObjectState.STALE
    assert t.object_state("mft:ca", 25 * HOUR) is ObjectState.EXPIRED
    assert t.object_state("roa", 600 * DAY) is ObjectState.EXPIRED
    assert t.object_state("ta", 600 * DAY) is ObjectState.EXPIRED
    with pytest.raises(KeyError):
        t.object_state("nope", 0)


def test_seven_day_renewal_keeps_objects_current():
    t = small_tree()
    for hour in range(7 * 24):
        now = hour * HOUR
        t.manifests["ca"] = maintain_manifest(t.manifests["ca"], now)
        assert t.object_state("roa", now) is ObjectState.CURRENT


def test_manifest_lists_content_hashes():
    t = small_tree()
    assert t.manifests["ca"].listed["roa"] == content_hash(t.roas["roa"])
    assert t.manifests["ta"].listed["ca"] == content_hash(t.certs["ca"])


def test_validate_catches_resource_overreach_and_orphans():
    t = small_tree()
    t.validate()
    bad = small_tree()
    bad.add_cert(Certificate("x", Resource(1, ("11.0.0.0/8",)), PpUri("ca.example"), parent="ta"))
    with pytest.raises(ValueError):
        bad.validate()
    with pytest.raises(KeyError):
        small_tree().add_roa(Roa("r2", "10.0.0.0/24", 1, 24, "ghost"))
    with pytest.raises(ValueError):
        small_tree().add_cert(Certificate("ca", Resource(1, ("10.0.0.0/24",)), PpUri("y"), parent="ta"))


def test_round_trip_through_dict():
    t = small_tree()
    back = RepositoryTree.from_dict(t.to_dict())
    assert back.to_dict() == t.to_dict()


@settings(max_examples=25, deadline=None)
@given(depth=st.integers(1, 6), width=st.integers(1, 3))
def test_chain_size_and_depth(depth, width):
    frag = build_delegation_chain(depth, width, "a.example", Resource(1, ("10.0.0.0/24",)), address="192.0.2.9")
    assert len(frag.certs) == sum(width ** i for i in range(1, depth + 1))
    assert len(frag.domain_map) == len(frag.certs)
    t = small_tree()
    t.graft(frag, "ca")
    assert max(t.depth(c) for c in t.certs) == depth + 1


def test_chain_depth_three_width_two():
    frag = build_delegation_chain(3, 2, "a.example", Resource(1, ("10.0.0.0/24",)))
    assert len(frag.certs) == 14
    with pytest.raises(ValueError):
        build_delegation_chain(0, 2, "a.example", Resource(1, ("10.0.0.0/24",)))


def test_day_long_chain_has_288_domains():
    frag = build_delegation_chain(288, 1, "a.example", Resource(1, ("10.0.0.0/24",)), address="192.0.2.9")
    assert len(set(frag.domain_map)) == 288
    assert {c.resources for c in frag.certs.values()} == {Resource(1, ("10.0.0.0/24",))}
    assert 288 * 300.0 == 86_400.0
