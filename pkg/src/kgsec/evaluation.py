"""Scoring of test events and severity-oriented evaluation."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .embedding.foldin import FoldIn
from .embedding.model import DictMismatch, ModelParams, probability, scores
from .graph_store import TripleStore, UnknownId
from .ingestion import CONN_QUERY, ConnEvent, GraphMapper, MappingConfig, VarAccessEvent
from .testbed import LabeledEvent, SeverityLabel

FOLDIN_REG = 3.0
QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)
SPREAD_BAND = (0.1, 0.9)


class Degenerate(ValueError):
    pass


@dataclass(frozen=True)
class ScoredStatement:
    s: int
    p: int
    o: int
    s_label: str
    p_label: str
    o_label: str
    theta: float
    prob: float
    event_index: int
    scenario: str
    label: SeverityLabel | None

    @property
    def severity(self) -> str:
        return self.label.display if self.label is not None else "-"


def score_events(params: ModelParams, store: TripleStore, mapping: MappingConfig,
                 labeled_events: Sequence[LabeledEvent], kind: str = "energy",
                 foldin_reg: float = FOLDIN_REG) -> list[ScoredStatement]:
    """One scored statement per triple of every event, in event order.

    Node-mode connections have no trained entity of their own. Each of their
    statements is scored through an embedding inferred from the event's other
    statements, starting from the ``conn_query`` surrogate.
    """
    if params.n != store.n_entities or params.m != store.n_relations:
        raise DictMismatch("parameters do not match the store dictionaries")
    mapper = GraphMapper(store, mapping, building=False)
    query = store.entity_id(CONN_QUERY)
    foldin = None
    if mapping.connection_repr == "node" and query is not None:
        foldin = FoldIn(params, kind, prior=params.entity_embeddings[query], reg=foldin_reg)
    labels, rels = store.entity_labels, store.relation_labels
    out = []
    for idx, le in enumerate(labeled_events):
        ev = le.event if isinstance(le, LabeledEvent) else le
        scen = le.scenario if isinstance(le, LabeledEvent) else "baseline"
        sev = le.label if isinstance(le, LabeledEvent) else None
        triples = mapper.map_event(ev)
        if foldin is not None and isinstance(ev, ConnEvent):
            theta = foldin.leave_one_out([t.p for t in triples], [t.o for t in triples])
        else:
            theta = scores(params, triples)
        prob = probability(theta)
        for t, th, pr in zip(triples, theta, prob):
            out.append(ScoredStatement(t.s, t.p, t.o, labels[t.s], rels[t.p], labels[t.o],
                                       float(th), float(pr), idx, scen, sev))
    return out


# -- statistics ----------------------------------------------------------------


@dataclass
class Stats:
    count: int
    mean: float | None = None
    std: float | None = None
    quantiles: dict = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return self.count == 0


EMPTY = Stats(0)


def describe(values: Iterable[float]) -> Stats:
    v = np.sort(np.asarray(list(values), dtype=np.float64))
    if v.size == 0:
        return Stats(0)
    return Stats(
        count=int(v.size),
        mean=float(v.mean()),
        std=float(v.std()),
        quantiles={f"q{int(q * 100):02d}": float(np.quantile(v, q)) for q in QUANTILES},
    )


def _group_key(st: ScoredStatement):
    return (st.scenario, -1 if st.label is None else int(st.label))


def aggregate_by_scenario(scored: Sequence[ScoredStatement]) -> dict:
    """Descriptive statistics of p per (scenario, severity label)."""
    if not scored:
        raise ValueError("nothing to aggregate")
    groups: dict = {}
    for st in scored:
        groups.setdefault((st.scenario, st.label), []).append(st.prob)
    order = sorted(groups, key=lambda k: (_scenario_sort_key(k[0]), -1 if k[1] is None else int(k[1])))
    return {k: describe(groups[k]) for k in order}


def _scenario_sort_key(scenario: str):
    group, _, row = scenario.partition("/")
    return (group, int(row) if row.isdigit() else -1)


def aggregate_by_label(scored: Sequence[ScoredStatement]) -> dict:
    groups: dict = {}
    for st in scored:
        if st.label is not None:
            groups.setdefault(st.label, []).append(st.prob)
    return {k: describe(groups[k]) for k in sorted(groups)}


def aggregate_by_entity(scored: Sequence[ScoredStatement], entity, store: TripleStore | None = None) -> Stats:
    """Statistics over statements whose subject or object is ``entity`` (id or label)."""
    if isinstance(entity, str):
        if store is not None:
            eid = store.entity_id(entity)
            if eid is None:
                raise UnknownId(f"entity {entity!r} not interned")
            vals = [st.prob for st in scored if st.s == eid or st.o == eid]
        else:
            vals = [st.prob for st in scored if entity in (st.s_label, st.o_label)]
    else:
        eid = int(entity)
        if store is not None and not 0 <= eid < store.n_entities:
            raise UnknownId(f"entity id {eid} not interned")
        vals = [st.prob for st in scored if st.s == eid or st.o == eid]
    return describe(vals) if vals else EMPTY


def _rank(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1, ties receiving the mean of their positions."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sv = values[order]
    i = 0
    while i < len(sv):
        j = i
        while j + 1 < len(sv) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rx, ry = _rank(x), _rank(y)
    dx, dy = rx - rx.mean(), ry - ry.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0.0:
        return 0.0
    return float(dx @ dy) / denom


def label_means(scored: Sequence[ScoredStatement]) -> dict:
    return {lab: st.mean for lab, st in aggregate_by_label(scored).items()}


def severity_ordering_metric(scored: Sequence[ScoredStatement]) -> float:
    """Spearman correlation between severity rank and per-label mean probability.

    -1 means the mean probability falls strictly as severity rises.
    """
    means = label_means(scored)
    if len(means) < 2:
        raise Degenerate(f"need at least two severity labels, got {len(means)}")
    labs = sorted(means)
    return spearman([int(l) for l in labs], [means[l] for l in labs])


def strictly_decreasing(scored: Sequence[ScoredStatement]) -> bool:
    means = label_means(scored)
    vals = [means[l] for l in sorted(means)]
    return all(a > b for a, b in zip(vals, vals[1:]))


def score_spread_metric(scored: Sequence[ScoredStatement]) -> float:
    """Fraction of statements with probability strictly inside (0.1, 0.9)."""
    if not scored:
        raise ValueError("empty statement list")
    lo, hi = SPREAD_BAND
    return sum(1 for st in scored if lo < st.prob < hi) / len(scored)


# -- entity families ---------------------------------------------------------------

EntityFilter = Callable[[LabeledEvent, ScoredStatement], bool]


def default_entity_families(spec) -> dict[str, EntityFilter]:
    """Five statement families: one app's variables, one dev host's web traffic,
    historian-bound HTTPS, SSH touching one edge server, SSH to the app repository."""
    app1 = next(iter(spec.apps))
    dev2 = spec.ip("dev2")
    hist = spec.ip("historian")
    edge1 = spec.ip("edge1")
    repo = spec.ip("app_repo")

    def conn(pred):
        def f(le, st):
            ev = le.event
            return isinstance(ev, ConnEvent) and pred(ev)
        return f

    def app_vars(le, st):
        ev = le.event
        return isinstance(ev, VarAccessEvent) and ev.app == app1 and st.p_label in ("reads", "writes")

    return {
        f"{app1} variables": app_vars,
        "dev2 web access": conn(lambda e: e.src_ip == dev2 and e.service in ("https", "http")),
        "historian https": conn(lambda e: e.dst_ip == hist and e.service == "https"),
        "edge1 ssh": conn(lambda e: e.service == "ssh" and edge1 in (e.src_ip, e.dst_ip)),
        "app_repo ssh": conn(lambda e: e.service == "ssh" and e.dst_ip == repo),
    }


def family_statements(scored, events, pred: EntityFilter) -> list[ScoredStatement]:
    return [st for st in scored if pred(events[st.event_index], st)]


# -- report -----------------------------------------------------------------------------


@dataclass
class EvalReport:
    groups: list  # rows: scenario, severity, rank, count, mean, std, quantiles
    labels: list  # rows per severity label
    entities: dict  # family -> {"stats": ..., "ordering": ...}
    ordering: float | None
    strictly_decreasing: bool
    spread: dict  # trainer -> spread metric
    histograms: dict = field(default_factory=dict)  # severity -> bin counts

    def to_dict(self) -> dict:
        return asdict(self)


HIST_BINS = 10


def _stats_row(st: Stats) -> dict:
    row = {"count": st.count, "mean": st.mean, "std": st.std}
    row.update(st.quantiles)
    return row


def build_report(scored: Sequence[ScoredStatement], events: Sequence[LabeledEvent] | None = None,
                 families: dict | None = None, trainer: str = "energy",
                 extra_spread: dict | None = None) -> EvalReport:
    labeled = [st for st in scored if st.label is not None]
    groups = []
    for (scen, lab), st in aggregate_by_scenario(scored).items():
        row = {"scenario": scen, "severity": lab.display if lab is not None else "-",
               "rank": int(lab) if lab is not None else None}
        row.update(_stats_row(st))
        groups.append(row)
    labels = []
    hist = {}
    for lab, st in aggregate_by_label(labeled).items():
        row = {"severity": lab.display, "rank": int(lab)}
        row.update(_stats_row(st))
        labels.append(row)
        probs = [s.prob for s in labeled if s.label == lab]
        hist[lab.display] = np.histogram(probs, bins=HIST_BINS, range=(0.0, 1.0))[0].tolist()
    try:
        ordering = severity_ordering_metric(labeled)
    except Degenerate:
        ordering = None
    entities = {}
    if families and events is not None:
        for name, pred in families.items():
            fam = [st for st in family_statements(labeled, events, pred)]
            try:
                fam_order = severity_ordering_metric(fam)
            except Degenerate:
                fam_order = None
            entities[name] = {
                "count": len(fam),
                "ordering": fam_order,
                "labels": {lab.display: _stats_row(s) for lab, s in aggregate_by_label(fam).items()},
            }
    spread = {trainer: score_spread_metric(scored)} if scored else {}
    if extra_spread:
        spread.update(extra_spread)
    return EvalReport(groups, labels, entities, ordering,
                      strictly_decreasing(labeled) if len(label_means(labeled)) >= 2 else False,
                      spread, hist)


def _fmt(v, nd=4):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.{nd}f}"
    return str(v)


def render_report(report: EvalReport, fmt: str = "text") -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        cols = ["scenario", "severity", "rank", "count", "mean", "std"] + [
            f"q{int(q * 100):02d}" for q in QUANTILES]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for row in report.groups:
            w.writerow({k: ("" if row.get(k) is None else
                            (f"{row[k]:.6f}" if isinstance(row.get(k), float) else row.get(k)))
                        for k in cols})
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    lines = ["Per-severity probability (p = logistic(theta))", ""]
    lines.append(f"{'severity':<18} {'n':>6} {'mean':>8} {'std':>8} {'median':>8}")
    for row in report.labels:
        lines.append(f"{row['severity']:<18} {row['count']:>6} {_fmt(row['mean']):>8} "
                     f"{_fmt(row['std']):>8} {_fmt(row.get('q50')):>8}")
    lines.append("")
    lines.append(f"severity ordering (Spearman): {_fmt(report.ordering)}")
    lines.append(f"strictly decreasing means:    {report.strictly_decreasing}")
    for trainer, val in sorted(report.spread.items()):
        lines.append(f"score spread [{trainer}]:        {_fmt(val)}")
    lines.append("")
    lines.append("Histograms of p (10 bins over [0, 1])")
    for sev, counts in report.histograms.items():
        peak = max(counts) or 1
        bars = "".join(" .:-=+*#%@"[min(9, int(round(9 * c / peak)))] for c in counts)
        lines.append(f"{sev:<18} |{bars}|")
    lines.append("")
    lines.append(f"{'scenario':<20} {'severity':<18} {'n':>5} {'mean':>8} {'q10':>8} {'q90':>8}")
    for row in report.groups:
        lines.append(f"{row['scenario']:<20} {row['severity']:<18} {row['count']:>5} "
                     f"{_fmt(row['mean']):>8} {_fmt(row.get('q10')):>8} {_fmt(row.get('q90')):>8}")
    if report.entities:
        lines.append("")
        lines.append("Entity families")
        for name, ent in report.entities.items():
            lines.append(f"  {name:<24} n={ent['count']:<5} ordering={_fmt(ent['ordering'])}")
            for sev, st in ent["labels"].items():
                lines.append(f"    {sev:<18} mean={_fmt(st['mean'])} n={st['count']}")
    return "\n".join(lines) + "\n"


# -- scored statement files ------------------------------------------------------------

SCORED_COLUMNS = ("scenario", "severity", "event", "subject", "relation", "object", "theta", "p")


def sort_scored(scored: Sequence[ScoredStatement]) -> list[ScoredStatement]:
    return sorted(scored, key=lambda st: (st.scenario, st.prob, st.event_index, st.p_label,
                                          st.s_label, st.o_label))


def format_scored(scored: Sequence[ScoredStatement]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORED_COLUMNS)
    for st in sort_scored(scored):
        w.writerow((st.scenario, st.severity, st.event_index, st.s_label, st.p_label, st.o_label,
                    repr(st.theta), repr(st.prob)))
    return buf.getvalue()


def parse_scored(text: str) -> list[ScoredStatement]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != SCORED_COLUMNS:
        raise ValueError("not a scored statement file")
    out = []
    for row in reader:
        sev = row["severity"]
        out.append(ScoredStatement(
            -1, -1, -1, row["subject"], row["relation"], row["object"],
            float(row["theta"]), float(row["p"]), int(row["event"]), row["scenario"],
            None if sev == "-" else SeverityLabel.parse(sev),
        ))
    return out
