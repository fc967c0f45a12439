import io
import json
from pathlib import Path

import pytest

from kgsec import cli, pipeline
from kgsec.evaluation import parse_scored
from kgsec.pipeline import RunConfig

SMALL = dict(n_baseline=300, epochs=3, rank=4, scenario_events=6)


def run_cli(*argv, environ=None, monkeypatch=None):
    out = io.StringIO()
    code = cli.run(list(argv), stdout=out)
    return code, out.getvalue()


def tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = RunConfig(out=str(out), **SMALL)
    pipeline.simulate(cfg, out / "data")
    pipeline.train(cfg, out / "data", out)
    pipeline.score(cfg, out / "data", out, out)
    return cfg, out


# -- config -----------------------------------------------------------------------------


def test_config_round_trip():
    cfg = RunConfig(seed=7, scenarios=("network_scan", "ssh_access/2"), conn_repr="edge", lr=0.01)
    assert RunConfig.loads(cfg.dumps()) == cfg


def test_config_rejects_unknown_key_and_bad_value():
    with pytest.raises(ValueError, match="unknown key"):
        RunConfig.loads("rnak=3\n")
    with pytest.raises(ValueError):
        RunConfig.loads("rank=three\n")
    with pytest.raises(ValueError):
        RunConfig(trainer="sgd")


def test_select_scenarios():
    assert [str(s) for s in pipeline.select_scenarios(["network_scan"])] == [
        "network_scan/1", "network_scan/2", "network_scan/3", "network_scan/4"]
    assert len(pipeline.select_scenarios([])) == 23
    with pytest.raises(ValueError):
        pipeline.select_scenarios(["ssh_access/9"])


# -- pipeline -------------------------------------------------------------------------------


def test_simulate_layout(tmp_path):
    m = pipeline.simulate(RunConfig(scenarios=("network_scan",), **SMALL), tmp_path)
    for name in ("conn.log", "opcua.csv", "topology.tsv", "manifest.json"):
        assert (tmp_path / name).is_file()
    ids = [e["id"] for e in m["scenarios"]]
    assert ids == ["network_scan/1", "network_scan/2", "network_scan/3", "network_scan/4", "noise"]
    for e in m["scenarios"]:
        assert (tmp_path / e["dir"] / "conn.log").is_file()
    assert json.loads((tmp_path / "manifest.json").read_text())["scenarios"] == m["scenarios"]


def test_simulate_reproducible(tmp_path):
    cfg = RunConfig(seed=3, scenarios=("ssh_access",), **SMALL)
    pipeline.simulate(cfg, tmp_path / "a")
    pipeline.simulate(cfg, tmp_path / "b")
    assert tree(tmp_path / "a") == tree(tmp_path / "b")


def test_test_events_follow_manifest(tmp_path):
    pipeline.simulate(RunConfig(scenarios=("credential_use",), noise=False, **SMALL), tmp_path)
    events = pipeline.load_test_events(tmp_path)
    assert [e.scenario for e in events][0] == "credential_use/1"
    assert {e.scenario for e in events} == {"credential_use/1", "credential_use/2", "credential_use/3"}
    for scen in {e.scenario for e in events}:
        ts = [e.event.ts for e in events if e.scenario == scen]
        assert ts == sorted(ts)


def test_missing_input(tmp_path):
    with pytest.raises(pipeline.IoError):
        pipeline.train(RunConfig(**SMALL), tmp_path / "nothing", tmp_path)
    with pytest.raises(pipeline.IoError):
        pipeline.load_model(tmp_path)


def test_scored_file(trained):
    cfg, out = trained
    scored = parse_scored((out / pipeline.SCORED).read_text())
    assert scored
    keys = [(s.scenario, s.prob) for s in scored]
    assert keys == sorted(keys)
    events = pipeline.load_test_events(out / "data")
    assert {s.event_index for s in scored} == set(range(len(events)))
    assert all(0.0 < s.prob < 1.0 for s in scored)


def test_training_reproducible(trained, tmp_path):
    cfg, out = trained
    pipeline.train(cfg, out / "data", tmp_path)
    assert (tmp_path / pipeline.CHECKPOINT).read_bytes() == (out / pipeline.CHECKPOINT).read_bytes()


def test_evaluate_threshold(trained, tmp_path):
    cfg, out = trained
    loose = pipeline.evaluate(cfg.replace(threshold=1.0), out / "data", out / pipeline.SCORED, tmp_path)
    strict = pipeline.evaluate(cfg.replace(threshold=-1.01), out / "data", out / pipeline.SCORED, tmp_path)
    assert loose.passed and not strict.passed
    assert set(loose.files) == {"text", "csv", "json"}
    assert loose.report.entities


# -- cli ---------------------------------------------------------------------------------------


def test_cli_dump_config_round_trip(tmp_path, monkeypatch):
    monkeypatch.delenv(cli.SEED_ENV, raising=False)
    code, text = run_cli("train", "--dump-config", "--rank", "12", "--scenarios", "network_scan,ssh_access/3")
    assert code == cli.EXIT_OK
    cfg = RunConfig.loads(text)
    assert cfg.rank == 12 and cfg.scenarios == ("network_scan", "ssh_access/3")
    path = tmp_path / "run.cfg"
    path.write_text(text)
    code, again = run_cli("train", "--dump-config", "--config", str(path))
    assert again == text


def test_cli_seed_precedence(tmp_path, monkeypatch):
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text("seed=5\n")
    monkeypatch.setenv(cli.SEED_ENV, "9")
    assert RunConfig.loads(run_cli("demo", "--dump-config")[1]).seed == 9
    assert RunConfig.loads(run_cli("demo", "--dump-config", "--config", str(cfg_file))[1]).seed == 5
    assert RunConfig.loads(run_cli("demo", "--dump-config", "--config", str(cfg_file),
                                   "--seed", "2")[1]).seed == 2
    monkeypatch.setenv(cli.SEED_ENV, "nine")
    assert run_cli("demo", "--dump-config")[0] == cli.EXIT_ERROR


def test_cli_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.run(["simulate", "--trainer", "adam"], stdout=io.StringIO())
    assert exc.value.code == 2


def test_cli_missing_input_exit_code(tmp_path, monkeypatch):
    monkeypatch.delenv(cli.SEED_ENV, raising=False)
    code, _ = run_cli("train", "--out", str(tmp_path), "--data", str(tmp_path / "absent"))
    assert code == cli.EXIT_ERROR
    code, _ = run_cli("train", "--config", str(tmp_path / "absent.cfg"))
    assert code == cli.EXIT_ERROR


def test_cli_end_to_end(tmp_path, monkeypatch):
    monkeypatch.delenv(cli.SEED_ENV, raising=False)
    base = ["--out", str(tmp_path), "--n-baseline", "300", "--epochs", "3", "--rank", "4",
            "--scenarios", "network_scan,ssh_access"]
    code, text = run_cli("simulate", *base)
    assert code == cli.EXIT_OK and "11 scenario sets" in text
    assert run_cli("train", *base)[0] == cli.EXIT_OK
    assert run_cli("score", *base)[0] == cli.EXIT_OK
    code, text = run_cli("evaluate", *base, "--threshold", "1", "--format", "json")
    assert code == cli.EXIT_OK and "ordering" in json.loads(text)
    code, _ = run_cli("evaluate", *base, "--threshold", "-1.5")
    assert code == cli.EXIT_THRESHOLD
    code, text = run_cli("evaluate", *base, "--threshold", "1", "--format", "csv")
    assert text.startswith("scenario,severity")


def test_cli_evaluate_degenerate(tmp_path, monkeypatch):
    monkeypatch.delenv(cli.SEED_ENV, raising=False)
    base = ["--out", str(tmp_path), "--n-baseline", "300", "--epochs", "2", "--rank", "4",
            "--scenarios", "ssh_access/4"]
    for cmd in ("simulate", "train", "score"):
        assert run_cli(cmd, *base)[0] == cli.EXIT_OK
    # one severity label plus unlabeled noise
    assert run_cli("evaluate", *base)[0] == cli.EXIT_ERROR
