import json

import pytest

from restmarl import cli
from restmarl.engine import record_success
from restmarl.session import ConfigError, Session, SessionConfig, run_ablation, run_repeated, run_session
from restmarl.sut_sim import SimService, serve


def test_config_validation():
    with pytest.raises(ConfigError):
        SessionConfig(time_budget=None, max_requests=None)
    with pytest.raises(ConfigError):
        SessionConfig(max_requests=10, mutation_rate=1.5)
    with pytest.raises(ConfigError):
        SessionConfig(max_requests=10, disable=frozenset({"everything"}))
    with pytest.raises(ConfigError):
        SessionConfig(max_requests=10, auth_header="no-colon")


def test_zero_budget_empty_report(tmp_path):
    summary = run_session(SessionConfig(max_requests=0, out_dir=str(tmp_path)))
    assert summary.requests_sent == 0 and summary.operations_processed == 0 and summary.failures == []
    assert (tmp_path / "requests.jsonl").read_text() == ""


def test_stop_condition_respected():
    assert run_session(SessionConfig(max_requests=37, seed=1)).requests_sent == 37
    assert run_session(SessionConfig(time_budget=0.2, seed=1)).requests_sent > 0


def test_disable_nothing_is_identical():
    a = run_session(SessionConfig(max_requests=200, seed=4))
    b = run_ablation(SessionConfig(max_requests=200, seed=4), ())
    assert a.to_dict() == b.to_dict()


def test_ablation_switches(sim_spec):
    s = Session.create(SessionConfig(max_requests=150, seed=2, disable=frozenset({"learning", "llm"})))
    s.run()
    assert len(s.agents.operation_q) == 0 and len(s.agents.value_q) == 0
    assert all("LLM" not in row["sources"].values() for row in s.log)


def test_request_log_fields():
    s = Session.create(SessionConfig(max_requests=100, seed=3))
    s.run()
    assert set(s.log[0]) >= {"seq", "operation", "mutated", "mutation_kind", "status", "latency_ms", "sources"}
    assert [r["seq"] for r in s.log] == list(range(1, 101))


def test_databank_never_sees_mutated_values(monkeypatch):
    from restmarl import agents as agents_mod

    seen = []

    def audit(bank, plan, response, op=None):
        seen.append(plan.mutated)
        return record_success(bank, plan, response, op)

    monkeypatch.setattr(agents_mod, "record_success", audit)
    s = Session.create(SessionConfig(max_requests=600, seed=5))
    s.run()
    assert seen and not any(seen)
    assert any(r["mutated"] for r in s.log)


def test_over_loopback_http():
    with serve(SimService()) as url:
        summary = run_session(SessionConfig(max_requests=300, seed=7, base_url=url))
    assert summary.requests_sent == 300 and summary.operations_processed >= 1


def test_repeat_writes_per_run_and_aggregate(tmp_path):
    agg = run_repeated(SessionConfig(max_requests=60, seed=10, out_dir=str(tmp_path)), 3, parallel=True)
    assert [r["seed"] for r in agg["runs"]] == [10, 11, 12]
    assert all((tmp_path / f"run-{i}" / "report.json").exists() for i in (1, 2, 3))
    assert json.loads((tmp_path / "aggregate.json").read_text())["runs"][0]["seed"] == 10


def test_parallel_matches_sequential():
    cfg = SessionConfig(max_requests=80, seed=20)
    assert run_repeated(cfg, 2, parallel=True) == run_repeated(cfg, 2, parallel=False)


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["--max-requests", "50", "--seed", "1", "--out", str(tmp_path / "o")]) == 0
    assert json.loads(capsys.readouterr().out)["requests_sent"] == 50
    assert cli.main(["--spec", str(tmp_path / "missing.yaml")]) == 3
    assert "missing.yaml" in capsys.readouterr().err
    assert cli.main(["--mutation-rate", "2"]) == 2
    assert cli.main(["--max-requests", "5", "--repeat", "0"]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("swagger: '2.0'\npaths: {}\n")
    assert cli.main(["--spec", str(bad), "--max-requests", "5"]) == 3
    assert cli.main(["--max-requests", "0"]) == 0


def test_cli_disable_and_repeat(tmp_path, capsys):
    code = cli.main(["--max-requests", "40", "--disable", "llm", "--disable", "spdg", "--repeat", "2", "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "aggregate.json").exists()


def test_cli_llm_without_key_uses_stub(monkeypatch, capsys):
    monkeypatch.delenv("RESTMARL_LLM_API_KEY", raising=False)
    assert cli.main(["--max-requests", "30", "--llm-endpoint", "http://127.0.0.1:9/v1"]) == 0


def test_cli_spec_against_served_sim(tmp_path, capsys):
    from restmarl.sut_sim import sim_spec_path

    with serve(SimService()) as url:
        code = cli.main(["--spec", str(sim_spec_path()), "--base-url", url, "--max-requests", "60"])
    assert code == 0
    assert json.loads(capsys.readouterr().out)["operations_total"] == 4
