"""End-to-end runs: simulate logs, train a baseline model, score scenarios, report.

Directory layout produced by :func:`simulate`::

    out/conn.log, out/opcua.csv, out/topology.tsv    baseline streams
    out/scenarios/<group>-<row>/conn.log, opcua.csv  one directory per scenario
    out/scenarios/noise/...                          spurious test-time events
    out/manifest.json                                scenario ids, labels, seeds, files

:func:`train` writes ``model.ckpt`` and ``store.tsv`` next to each other;
:func:`score` writes ``scored.csv``; :func:`evaluate` writes ``report.txt``,
``report.csv`` and ``report.json``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import evaluation as ev
from . import testbed as tb
from .embedding.model import TrainConfig, load_checkpoint, save_checkpoint
from .embedding.trainers import train as train_model
from .graph_store import deserialize, serialize
from .ingestion import (
    MappingConfig,
    build_graph,
    parse_conn_log,
    parse_opcua_log,
    parse_topology,
)

log = logging.getLogger(__name__)

DEFAULT_BASELINE_EVENTS = 3000
NOISE_DIR = "noise"
CHECKPOINT = "model.ckpt"
STORE_DUMP = "store.tsv"
SCORED = "scored.csv"
MANIFEST = "manifest.json"


class IoError(OSError):
    pass


@dataclass
class RunConfig:
    """Every knob of a run. All fields have defaults; see :func:`RunConfig.loads`."""

    seed: int = 0
    # training
    trainer: str = "energy"
    rank: int = 32
    lr: float = 0.05
    epochs: int = 200
    batch_size: int = 128
    negatives_per_positive: int = 4
    init_scale: float = 0.1
    l2: float = 1e-4
    # mapping
    conn_repr: str = "node"
    volume_bucket_edges: tuple = (1e5, 1e7)
    ip_top_k: int = 8
    emit_type_triples: bool = True
    # simulation and evaluation
    n_baseline: int = DEFAULT_BASELINE_EVENTS
    scenario_events: int = tb.SCENARIO_EVENTS
    noise: bool = True
    scenarios: tuple = ()  # empty selects all rows; entries are groups or group/row ids
    threshold: float = -0.9
    foldin_reg: float = ev.FOLDIN_REG
    out: str = "run"

    def __post_init__(self):
        self.volume_bucket_edges = tuple(float(x) for x in self.volume_bucket_edges)
        self.scenarios = tuple(self.scenarios)
        if self.n_baseline < 1:
            raise ValueError("n_baseline must be >= 1")
        if self.scenario_events < 5:
            raise ValueError("scenario_events must be >= 5")
        self.train_config()
        self.mapping_config()
        self.scenario_ids()

    def train_config(self) -> TrainConfig:
        return TrainConfig(rank=self.rank, lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                           negatives_per_positive=self.negatives_per_positive,
                           init_scale=self.init_scale, seed=self.seed, trainer=self.trainer, l2=self.l2)

    def mapping_config(self) -> MappingConfig:
        return MappingConfig(connection_repr=self.conn_repr,
                             volume_bucket_edges=self.volume_bucket_edges,
                             ip_top_k=self.ip_top_k, emit_type_triples=self.emit_type_triples)

    def scenario_ids(self) -> list[tb.ScenarioId]:
        return select_scenarios(self.scenarios)

    # flat key=value text, one field per line
    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(_fmt_scalar(x) for x in v)
            else:
                v = _fmt_scalar(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        return cls(**parse_config_text(text))

    def replace(self, **changes) -> "RunConfig":
        data = asdict(self)
        data.update(changes)
        return RunConfig(**data)


def _fmt_scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def parse_config_text(text: str) -> dict:
    """Parse flat ``key=value`` lines into typed RunConfig keyword arguments.

    Blank lines and ``#`` comments are skipped; unknown keys raise ValueError.
    """
    kinds = {f.name: f for f in fields(RunConfig)}
    defaults = RunConfig.__dataclass_fields__
    out = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {no}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ValueError(f"line {no}: unknown key {key!r}")
        out[key] = coerce_value(key, value, defaults[key].default)
    return out


def coerce_value(key: str, value: str, default):
    try:
        if isinstance(default, bool):
            return _BOOL[value.lower()]
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if key == "volume_bucket_edges":
            return tuple(float(x) for x in value.split(",") if x.strip())
        if key == "scenarios":
            return tuple(x.strip() for x in value.split(",") if x.strip())
    except (KeyError, ValueError):
        raise ValueError(f"bad value for {key}: {value!r}") from None
    return value


def select_scenarios(selection) -> list[tb.ScenarioId]:
    """Scenario ids in table order matching any group name or group/row id in ``selection``."""
    all_ids = [sid for sid, _, _ in tb.list_scenarios()]
    if not selection:
        return all_ids
    picked = set()
    for item in selection:
        if item in tb.GROUPS:
            picked.update(s for s in all_ids if s.group == item)
        else:
            try:
                sid = tb.ScenarioId.parse(item)
                tb.scenario_label(sid)
            except (KeyError, ValueError):
                raise ValueError(f"unknown scenario or group {item!r}") from None
            picked.add(sid)
    return [s for s in all_ids if s in picked]


# -- simulation ------------------------------------------------------------------


def _scenario_dir(sid) -> str:
    return f"scenarios/{sid.group}-{sid.row}"


def simulate(config: RunConfig, out_dir=None) -> dict:
    """Write baseline and scenario logs plus the manifest; return the manifest."""
    out = Path(out_dir or config.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    spec = tb.build_testbed(config.seed)
    baseline = tb.generate_baseline(spec, config.n_baseline, config.seed)
    files = tb.write_logs(spec.topology() + baseline, out)
    descriptions = {sid: desc for sid, _, desc in tb.list_scenarios()}
    entries = []
    for sid in config.scenario_ids():
        events = tb.inject_scenario(spec, sid, config.seed, config.scenario_events)
        sub = _scenario_dir(sid)
        entries.append({
            "id": str(sid), "group": sid.group, "row": sid.row,
            "label": events[0].label.display, "rank": int(events[0].label),
            "description": descriptions[sid], "seed": config.seed,
            "dir": sub, "files": tb.write_logs(events, out / sub), "n_events": len(events),
        })
    if config.noise:
        events = tb.generate_noise(spec, tb.noise_count(config.n_baseline), config.seed)
        sub = f"scenarios/{NOISE_DIR}"
        entries.append({
            "id": NOISE_DIR, "group": NOISE_DIR, "row": 0, "label": None, "rank": None,
            "description": "spurious events unseen in training but consistent with host roles",
            "seed": config.seed, "dir": sub, "files": tb.write_logs(events, out / sub),
            "n_events": len(events),
        })
    meta = {"seed": config.seed, "n_baseline": config.n_baseline, "baseline": files,
            "noise": config.noise, "scenario_events": config.scenario_events}
    tb.write_manifest(out / MANIFEST, entries, meta)
    return {"meta": meta, "scenarios": entries}


def _read(path: Path) -> str:
    try:
        return path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc


def load_manifest(data_dir) -> dict:
    return json.loads(_read(Path(data_dir) / MANIFEST))


def load_baseline(data_dir):
    """(topology records, conn events, variable accesses) of a simulated baseline."""
    d = Path(data_dir)
    topo_path = d / "topology.tsv"
    topology = parse_topology(_read(topo_path)) if topo_path.exists() else []
    return topology, parse_conn_log(_read(d / "conn.log")), parse_opcua_log(_read(d / "opcua.csv"))


def _merge_by_time(conns, accesses) -> list:
    # connections first on equal timestamps; sort is stable
    return sorted(list(conns) + list(accesses), key=lambda e: e.ts)


def load_test_events(data_dir) -> list[tb.LabeledEvent]:
    """Labeled scenario and noise events, in manifest order, time-ordered within each entry."""
    d = Path(data_dir)
    out = []
    for entry in load_manifest(d)["scenarios"]:
        sub = d / entry["dir"]
        conns = parse_conn_log(_read(sub / "conn.log"))
        accesses = parse_opcua_log(_read(sub / "opcua.csv"))
        label = None if entry["rank"] is None else tb.SeverityLabel(entry["rank"])
        out.extend(tb.LabeledEvent(e, entry["id"], label) for e in _merge_by_time(conns, accesses))
    return out


# -- training and scoring -------------------------------------------------------------


def build_store(config: RunConfig, data_dir):
    topology, conns, accesses = load_baseline(data_dir)
    return build_graph(topology, conns, accesses, config.mapping_config())


def train(config: RunConfig, data_dir, out_dir=None) -> Path:
    """Train on the baseline under ``data_dir``; write checkpoint and store dump."""
    out = Path(out_dir or config.out)
    store = build_store(config, data_dir)
    log.info("graph: %d entities, %d relations, %d triples",
             store.n_entities, store.n_relations, len(store))
    params = train_model(store, config.train_config())
    out.mkdir(parents=True, exist_ok=True)
    meta = {"train": asdict(config.train_config()), "mapping": config.mapping_config().dumps()}
    save_checkpoint(out / CHECKPOINT, params, store, meta)
    (out / STORE_DUMP).write_text(serialize(store))
    return out / CHECKPOINT


def load_model(model_dir):
    d = Path(model_dir)
    store = deserialize(_read(d / STORE_DUMP))
    if not (d / CHECKPOINT).exists():
        raise IoError(f"cannot read {d / CHECKPOINT}: no such file")
    params, header = load_checkpoint(d / CHECKPOINT, store)
    return params, store, header["meta"]


def score(config: RunConfig, data_dir, model_dir=None, out_dir=None) -> Path:
    """Score every test statement; write ``scored.csv`` sorted by (scenario, p)."""
    params, store, meta = load_model(model_dir or config.out)
    mapping = MappingConfig.loads(meta["mapping"])
    events = load_test_events(data_dir)
    scored = ev.score_events(params, store, mapping, events, kind=meta["train"]["trainer"],
                             foldin_reg=config.foldin_reg)
    out = Path(out_dir or config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / SCORED).write_text(ev.format_scored(scored))
    return out / SCORED


@dataclass
class Evaluation:
    report: ev.EvalReport
    passed: bool
    files: dict = field(default_factory=dict)


def evaluate(config: RunConfig, data_dir, scored_path=None, out_dir=None) -> Evaluation:
    """Render reports; ``passed`` iff the ordering metric is at most the threshold.

    Raises Degenerate when fewer than two severity labels are present.
    """
    out = Path(out_dir or config.out)
    scored_path = Path(scored_path or out / SCORED)
    scored = ev.parse_scored(_read(scored_path))
    events = load_test_events(data_dir) if (Path(data_dir) / MANIFEST).exists() else None
    seed = load_manifest(data_dir)["meta"]["seed"] if events is not None else config.seed
    families = ev.default_entity_families(tb.build_testbed(seed))
    labeled = [st for st in scored if st.label is not None]
    metric = ev.severity_ordering_metric(labeled)
    report = ev.build_report(scored, events, families, config.trainer)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for fmt, name in (("text", "report.txt"), ("csv", "report.csv"), ("json", "report.json")):
        (out / name).write_text(ev.render_report(report, fmt))
        files[fmt] = str(out / name)
    return Evaluation(report, metric <= config.threshold, files)


def demo(config: RunConfig) -> Evaluation:
    """simulate, train, score and evaluate under ``config.out``."""
    out = Path(config.out)
    simulate(config, out / "data")
    train(config, out / "data", out)
    score(config, out / "data", out, out)
    return evaluate(config, out / "data", out / SCORED, out)


def severity_table(report: ev.EvalReport) -> str:
    lines = [f"{'severity':<18} {'n':>6} {'mean p':>8}"]
    for row in report.labels:
        lines.append(f"{row['severity']:<18} {row['count']:>6} {row['mean']:>8.4f}")
    return "\n".join(lines)
