import csv
import io
import json

import pytest

from rpkisim.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, LOG_DIR_ENV, main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_list(capsys):
    code, out, _ = run(capsys, "list")
    assert code == EXIT_OK and "table4-scenario2" in out.split()


def test_analyze_tables(capsys):
    code, out, _ = run(capsys, "analyze")
    assert code == EXIT_OK
    t4, t5 = out.split("\n\n")
    rows4 = list(csv.DictReader(io.StringIO(t4)))
    rows5 = list(csv.DictReader(io.StringIO(t5)))
    assert [int(r["n_attempts"]) for r in rows4] == [24, 864, 23040, 55]
    assert len(rows5) == 12
    assert [r for r in rows5 if r["flag"].startswith("differs")][0]["total_packets_per_update"] == "144000"


def test_analyze_one_table(capsys):
    code, out, _ = run(capsys, "analyze", "--tables", "4")
    assert code == EXIT_OK and len(out.strip().splitlines()) == 5


def test_analyze_params(capsys):
    code, out, _ = run(capsys, "analyze", "--params", "t_attack=24h", "t_sleep=600s", "n_retries=6",
                       "p=0.5", "r_limit=3")
    row = next(csv.DictReader(io.StringIO(out)))
    assert code == EXIT_OK and row["n_attempts"] == "864" and row["o"] == "1247"
    assert row["r_attacker"] == "3741" and abs(float(row["p_success_exact_rate"]) - 0.5) < 1e-6


def test_analyze_bad_params(capsys):
    code, _, err = run(capsys, "analyze", "--params", "colour=blue")
    assert code == EXIT_CONFIG and "colour" in err
    code, _, _ = run(capsys, "analyze", "--params", "p=0.5")
    assert code == EXIT_CONFIG


def test_usage_error_is_config_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_CONFIG


def test_run_unknown_scenario(capsys):
    code, _, err = run(capsys, "run", "no-such-scenario")
    assert code == EXIT_CONFIG and "no-such-scenario" in err


def test_run_bad_override(capsys):
    code, _, err = run(capsys, "run", "healthy-baseline", "--set", "relying_parties.0.profile=rpki-client")
    assert code == EXIT_CONFIG and "profile" in err
    code, _, _ = run(capsys, "run", "healthy-baseline", "--set", "novalue")
    assert code == EXIT_CONFIG


def test_run_writes_log_to_env_dir(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv(LOG_DIR_ENV, str(tmp_path))
    code, out, _ = run(capsys, "run", "healthy-baseline", "--set", "duration=1h", "--seed", "4")
    summary = json.loads(out)
    assert code == EXIT_OK and summary["hijack_outcome"] == "filtered"
    log = tmp_path / "healthy-baseline-4.jsonl"
    lines = log.read_text().splitlines()
    assert lines and all(set(json.loads(l)) == {"time", "node", "event_kind", "detail"} for l in lines[:50])


def test_run_explicit_log_replays(capsys, tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for p in (a, b):
        assert run(capsys, "run", "healthy-baseline", "--set", "duration=30m", "--log", str(p), "--packets")[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_runtime_error_exit_code(capsys, tmp_path):
    code, _, err = run(capsys, "run", "healthy-baseline", "--log", str(tmp_path / "missing" / "x" / "\0bad"))
    assert code == EXIT_RUNTIME and "runtime error" in err


def test_montecarlo(capsys):
    code, out, _ = run(capsys, "montecarlo", "table4-scenario1", "--set", "attacker.rate=0", "--trials", "2",
                       "--parallel", "1", "--closed-form")
    res = json.loads(out)
    assert code == EXIT_OK and res["trials"] == 2 and res["successes"] == 0 and "outcomes" not in res
    code, _, _ = run(capsys, "montecarlo", "table4-scenario1", "--trials", "0")
    assert code == EXIT_CONFIG


def test_probe(capsys):
    code, out, err = run(capsys, "probe", "table4-scenario2", "--target", "ns-victim", "--kind", "dns",
                         "--rates", "15,30,48,75,120")
    assert code == EXIT_OK and out.startswith("rate,responses_per_s")
    limit = float(err.split("drop_limit:")[1].split()[0])
    assert abs(limit - 60) / 60 < 0.1
    code, _, _ = run(capsys, "probe", "table4-scenario2", "--target", "ns-victim", "--kind", "syn")
    assert code == EXIT_CONFIG


def test_stall(capsys):
    code, out, _ = run(capsys, "stall", "routinator", "--depth", "4")
    res = json.loads(out)
    assert code == EXIT_OK and res["stalled_pps"] == 4
