"""Acceptance criteria 1-10, one test each.

Every test records a one-line verdict; ``conftest.py`` prints them at the end
of the session as ``ACCEPTANCE <n> PASS|FAIL <detail>``. Run alone with

    pytest tests/test_acceptance.py -v

The end-to-end criteria (1, 2, 5, 6, 7, 9) train default-size models on five
seeds and take several minutes each on one core; they are marked ``slow``.
"""

import functools
import statistics
import time

import numpy as np
import pytest

from kgsec import evaluation as ev
from kgsec import pipeline
from kgsec import testbed as tb
from kgsec.embedding.model import TrainConfig, grad_mse, init_params, mse_loss, scores
from kgsec.embedding.trainers import train_mse
from kgsec.graph_store import ParseError, TripleStore
from kgsec.ingestion import parse_conn_log, parse_opcua_log, parse_topology
from kgsec.pipeline import RunConfig

SEEDS = range(5)
TIME_LIMIT = 300.0
RESULTS: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str):
    RESULTS[n] = (ok, detail)
    assert ok, f"criterion {n}: {detail}"


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def run(workdir):
    """Cached end-to-end run: run(seed, conn_repr) -> (Evaluation, scored, seconds)."""

    @functools.lru_cache(maxsize=None)
    def go(seed: int, conn_repr: str = "node"):
        cfg = RunConfig(seed=seed, conn_repr=conn_repr, out=str(workdir / f"{conn_repr}-{seed}"))
        start = time.perf_counter()
        result = pipeline.demo(cfg)
        elapsed = time.perf_counter() - start
        scored = ev.parse_scored((workdir / f"{conn_repr}-{seed}" / pipeline.SCORED).read_text())
        return result, scored, elapsed

    return go


# -- 1 ---------------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_1_severity_ordering(run):
    rhos, strict, times = [], 0, []
    for seed in SEEDS:
        result, _, secs = run(seed)
        rhos.append(result.report.ordering)
        strict += result.report.strictly_decreasing
        times.append(secs)
    mean_rho = statistics.mean(rhos)
    ok = strict >= 3 and mean_rho <= -0.9 and max(times) <= TIME_LIMIT
    record(1, ok, f"strictly decreasing in {strict}/5 seeds, mean Spearman {mean_rho:.3f} "
                  f"({', '.join(f'{r:.2f}' for r in rhos)}), slowest seed {max(times):.0f}s")


# -- 2 ---------------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_2_entity_families(run):
    wins: dict[str, int] = {}
    for seed in SEEDS:
        report = run(seed)[0].report
        for name, fam in report.entities.items():
            better = fam["ordering"] is not None and fam["ordering"] <= report.ordering
            wins[name] = wins.get(name, 0) + better
    ok = len(wins) == 5 and all(w >= 3 for w in wins.values())
    record(2, ok, "; ".join(f"{name} {w}/5" for name, w in wins.items()))


# -- 3 ---------------------------------------------------------------------------------------


def _flat(p):
    return np.concatenate([p.entity_embeddings.ravel(), p.relation_matrices.ravel()])


def _unflat(x, n, m, r):
    from kgsec.embedding.model import ModelParams

    return ModelParams(x[: n * r].reshape(n, r).copy(), x[n * r:].reshape(m, r, r).copy())


def test_criterion_3_gradient():
    worst = 0.0
    for instance in range(100):
        rng = np.random.default_rng(77_000 + instance)
        n, m, r = int(rng.integers(2, 8)), int(rng.integers(1, 4)), int(rng.integers(1, 9))
        k = int(rng.integers(1, 17))
        p = init_params(n, m, r, 0.5, instance)
        trip = np.column_stack([rng.integers(n, size=k), rng.integers(m, size=k), rng.integers(n, size=k)])
        target = rng.integers(0, 2, size=k).astype(float)
        analytic = _flat(grad_mse(p, trip, target, 1e-3))
        x0, h = _flat(p), 1e-4
        numeric = np.empty_like(x0)
        for i in range(x0.size):
            xp, xm = x0.copy(), x0.copy()
            xp[i] += h
            xm[i] -= h
            numeric[i] = (mse_loss(_unflat(xp, n, m, r), trip, target, 1e-3)
                          - mse_loss(_unflat(xm, n, m, r), trip, target, 1e-3)) / (2 * h)
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / scale))
    record(3, worst < 1e-4, f"worst relative error {worst:.2e} over 100 instances")


# -- 4 ---------------------------------------------------------------------------------------


def _auc(store, params, n, m):
    cand = np.array([(s, p, o) for s in range(n) for p in range(m) for o in range(n)])
    th = scores(params, cand)
    pos = store.contains_many(cand)
    a, b = th[pos][:, None], th[~pos][None, :]
    return float((a > b).mean() + 0.5 * (a == b).mean())


def test_criterion_4_factorization():
    toy = TripleStore()
    for s, p, o in [("a", "r", "b"), ("b", "r", "c"), ("c", "r", "a"),
                    ("a", "q", "a"), ("b", "q", "a"), ("c", "q", "b")]:
        toy.add(s, "n", p, o, "n")
    toy.freeze()
    toy_auc = _auc(toy, train_mse(toy, TrainConfig(rank=4, epochs=500, lr=0.05, trainer="mse", batch_size=6,
                                                   seed=0)), 3, 2)
    planted = []
    for seed in range(3):
        rng = np.random.default_rng(seed)
        n, m, r = 10, 3, 3
        E, R = rng.normal(size=(n, r)), rng.normal(size=(m, r, r))
        theta = np.einsum("si,pij,oj->spo", E, R, E)
        store = TripleStore()
        for i in range(n):
            store.intern_entity(f"e{i}", "n")
        for j in range(m):
            store.intern_relation(f"r{j}")
        for s, p, o in zip(*np.nonzero(theta > np.quantile(theta, 0.8))):
            store.add_triple((int(s), int(p), int(o)))
        store.freeze()
        params = train_mse(store, TrainConfig(rank=6, epochs=400, lr=0.02, trainer="mse", batch_size=16,
                                              seed=seed))
        planted.append(_auc(store, params, n, m))
    ok = toy_auc == 1.0 and min(planted) >= 0.95
    record(4, ok, f"toy AUC {toy_auc:.3f}, planted rank-3 AUC {', '.join(f'{a:.3f}' for a in planted)}")


# -- 5 ---------------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_5_score_spread(run, workdir):
    wins, pairs = 0, []
    for seed in SEEDS:
        _, energy_scored, _ = run(seed)
        base = workdir / f"node-{seed}"
        cfg = RunConfig(seed=seed, trainer="mse", out=str(workdir / f"mse-{seed}"))
        pipeline.train(cfg, base / "data", cfg.out)
        path = pipeline.score(cfg, base / "data", cfg.out, cfg.out)
        mse_scored = ev.parse_scored(path.read_text())
        e, m = ev.score_spread_metric(energy_scored), ev.score_spread_metric(mse_scored)
        pairs.append(f"{e:.2f}/{m:.2f}")
        wins += e > m
    record(5, wins >= 3, f"energy > mse spread in {wins}/5 seeds (energy/mse: {', '.join(pairs)})")


# -- 6 ---------------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_6_noise(run):
    wins, pairs = 0, []
    for seed in SEEDS:
        scored = run(seed)[1]
        noise = [s.prob for s in scored if s.scenario == pipeline.NOISE_DIR]
        susp = [s.prob for s in scored if s.label == tb.SeverityLabel.SUSPICIOUS]
        a, b = float(np.median(noise)), float(np.median(susp))
        pairs.append(f"{a:.2f}/{b:.2f}")
        wins += a > b
    record(6, wins >= 3, f"noise median > Suspicious median in {wins}/5 seeds ({', '.join(pairs)})")


# -- 7 ---------------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_7_edge_mapping(run):
    rhos = [run(seed, "edge")[0].report.ordering for seed in SEEDS]
    mean_rho = statistics.mean(rhos)
    record(7, mean_rho <= -0.8, f"edge mapping mean Spearman {mean_rho:.3f} ({', '.join(f'{r:.2f}' for r in rhos)})")


# -- 8 ---------------------------------------------------------------------------------------


def test_criterion_8_formats(tmp_path):
    spec = tb.build_testbed(8)
    events = list(tb.generate_baseline(spec, 10_000, 8))
    for sid, _, _ in tb.list_scenarios():
        events += [le.event for le in tb.inject_scenario(spec, sid, 8)]
    conns, accesses, _ = tb.split_events(sorted(events, key=lambda e: e.ts))
    topo = spec.topology()
    tb.write_logs(conns + accesses + topo, tmp_path)
    exact = (parse_conn_log((tmp_path / "conn.log").read_text()) == conns
             and parse_opcua_log((tmp_path / "opcua.csv").read_text()) == accesses
             and parse_topology((tmp_path / "topology.tsv").read_text()) == topo)

    header = (tmp_path / "conn.log").read_text().split("\n")
    head = [l for l in header if l.startswith("#")]
    rows = [l for l in header if l and not l.startswith("#")]
    bad_conn = "\n".join(head + rows[:2] + ["garbage"] + rows[2:4]) + "\n"
    opc = (tmp_path / "opcua.csv").read_text().splitlines()
    bad_opc = "\n".join(opc[:3] + [opc[3].replace(",read", ",erase").replace(",write", ",erase")]) + "\n"
    lines = []
    for parser, text, want in ((parse_conn_log, bad_conn, len(head) + 3), (parse_opcua_log, bad_opc, 4),
                               (parse_topology, "a\tdevice\tbelongsTo\tb\tmodule\n#\nz\tinvalid\n", 3)):
        try:
            parser(text)
            lines.append(None)
        except ParseError as exc:
            lines.append((exc.line, want))
    good_lines = all(l is not None and l[0] == l[1] for l in lines)
    record(8, exact and good_lines,
           f"{len(conns)} conns, {len(accesses)} accesses, {len(topo)} topology records round-trip "
           f"{'exactly' if exact else 'with differences'}; malformed-line numbers {lines}")


# -- 9 ---------------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_9_determinism(run, workdir):
    run(0)
    again = RunConfig(seed=0, out=str(workdir / "rerun-0"))
    pipeline.demo(again)
    a = (workdir / "node-0" / pipeline.SCORED).read_bytes()
    b = (workdir / "rerun-0" / pipeline.SCORED).read_bytes()
    record(9, a == b, f"scored files {'byte-identical' if a == b else 'differ'} ({len(a)} bytes)")


# -- 10 --------------------------------------------------------------------------------------


def test_criterion_10_scenarios():
    rows = tb.list_scenarios()
    per_group = {g: sum(1 for sid, _, _ in rows if sid.group == g) for g in tb.GROUPS}
    want = {"variable_access": 4, "https_access": 6, "ssh_access": 6, "credential_use": 3, "network_scan": 4}
    hits = 0
    for seed in SEEDS:
        spec = tb.build_testbed(seed)
        dev = tb.RuleChecker(spec).deviations(tb.generate_baseline(spec, 5000, seed))
        hits += sum(dev.values())
    ok = len(rows) == 23 and per_group == want and hits == 0
    record(10, ok, f"{len(rows)} rows {per_group}; {hits} non-Observed matches in 5 baselines")
