import pytest
import yaml
from hypothesis import given, settings, strategies as st

from rpkisim.engine import EventLog
from rpkisim.scenario import (ConfigError, bundled_names, dump_config, load_bundled, load_config, monte_carlo,
                              resolve_config, run_scenario)

BUNDLED = ["healthy-baseline", "ixp", "table4-scenario1", "table4-scenario2", "table4-scenario3",
           "table4-scenarioS", "victim-identification"]


def test_bundled_scenarios_listed():
    assert bundled_names() == BUNDLED


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_round_trip(name):
    cfg = load_bundled(name)
    again = load_config(dump_config(cfg))
    assert again.data == cfg.data
    assert dump_config(again) == dump_config(cfg)


def raw(name="healthy-baseline"):
    return yaml.safe_load(dump_config(load_bundled(name)))


@pytest.mark.parametrize("mutate,key", [
    (lambda d: d.pop("rpki"), "rpki"),
    (lambda d: d.update(duration="soon"), "duration"),
    (lambda d: d["relying_parties"][0].update(profile="rpki-client"), "relying_parties[0].profile"),
    (lambda d: d["dns"]["resolvers"][0].update(profile="knot"), "dns.resolvers[0].profile"),
    (lambda d: d["rpki"]["roas"][0].update(prefix="10.0.0.1/22"), "rpki.roas[0].prefix"),
    (lambda d: d.update(colour="blue"), "colour"),
])
def test_config_errors_name_the_key(mutate, key):
    d = raw()
    mutate(d)
    with pytest.raises(ConfigError) as exc:
        load_config(yaml.safe_dump(d))
    assert exc.value.key == key


def test_unknown_bundled_name():
    with pytest.raises(ConfigError):
        resolve_config("no-such-scenario")
    with pytest.raises(ConfigError):
        resolve_config("/nonexistent/file.yaml")
    with pytest.raises(ConfigError):
        load_config("a: [unclosed")


def test_overrides_reach_list_items():
    cfg = load_bundled("healthy-baseline").with_overrides(**{"relying_parties.0.profile": "fort", "seed": 9})
    assert cfg.data["relying_parties"][0]["profile"] == "fort" and cfg.seed == 9


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), hours=st.integers(1, 100), drop=st.integers(1, 5000),
       halfwidth=st.integers(5, 60))
def test_round_trip_with_random_fields(seed, hours, drop, halfwidth):
    cfg = load_bundled("table4-scenario2").with_overrides(
        **{"seed": seed, "duration": f"{hours}h", "dns.nameservers.1.drop_limit": drop,
           "attacker.window_halfwidth": f"{halfwidth}s"})
    assert load_config(dump_config(cfg)).data == cfg.data
    assert cfg.data["duration"] == hours * 3600.0


def test_healthy_run_keeps_hijack_filtered():
    s, _ = run_scenario(load_bundled("healthy-baseline"), None, EventLog(enabled=False))
    assert not s.downgrade_achieved and s.hijack_outcome == "filtered" and s.victim_reachability == 1


def test_zero_rate_attack_never_downgrades():
    cfg = load_bundled("table4-scenario2").with_overrides(**{"attacker.rate": 0})
    s, _ = run_scenario(cfg, None, EventLog(enabled=False))
    assert not s.downgrade_achieved and s.packets_injected == 0


@settings(max_examples=3, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_runs_replay_identically(seed):
    cfg = load_bundled("table4-scenario1").with_overrides(duration="3h")
    assert run_scenario(cfg, seed)[1].dumps() == run_scenario(cfg, seed)[1].dumps()


def test_downgrade_monotone_in_attacker_rate():
    cfg = load_bundled("table4-scenario1")
    rates = [0, 20, 5000]
    results = [monte_carlo(cfg.with_overrides(**{"attacker.rate": r}), 4, base_seed=40)["mean"] for r in rates]
    assert results == sorted(results)
    assert results[0] == 0.0 and results[-1] == 1.0


def test_monte_carlo_rejects_zero_trials():
    with pytest.raises(ValueError):
        monte_carlo(load_bundled("table4-scenario1"), 0)


def test_ixp_syn_flood_downgrade():
    s, _ = run_scenario(load_bundled("ixp"), None, EventLog(enabled=False))
    assert s.downgrade_achieved and s.hijack_outcome == "hijacked"
    assert abs(s.time_to_unknown - 86400) <= 625
