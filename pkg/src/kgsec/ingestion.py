"""Observation parsing and event-to-graph mapping.

Three inputs are understood:

* Zeek ``conn.log`` (TSV with ``#fields`` header, ``-`` for unset values)
* OPC-UA variable access logs as CSV ``ts,session_id,app,client_ip,variable,mode``
* topology records as TSV ``s_label  s_type  relation  o_label  o_type``

Every event becomes one or more triples. Baseline ingestion interns new
entities; scoring-time ingestion only resolves labels, routing unseen ones to
per-type surrogate entities.
"""

from __future__ import annotations

import csv
import io
import ipaddress
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Union

from .graph_store import ParseError, Triple, TripleStore

PROTOCOLS = ("tcp", "udp", "icmp")
MODES = ("read", "write")

CONN_FIELDS = ("ts", "uid", "id.orig_h", "id.orig_p", "id.resp_h", "id.resp_p", "proto",
               "service", "duration", "orig_bytes", "resp_bytes", "conn_state")
CONN_TYPES = ("time", "string", "addr", "port", "addr", "port", "enum",
              "string", "interval", "count", "count", "string")
_CONSUMED = ("ts", "id.orig_h", "id.resp_h", "id.resp_p", "proto", "service",
             "orig_bytes", "resp_bytes")
OPCUA_HEADER = ("ts", "session_id", "app", "client_ip", "variable", "mode")

# surrogate entities, interned at build time so unseen labels stay scoreable
CONN_QUERY = "conn_query"
SURROGATES = {
    "external_ip": "external_ip_other",
    "host": "unknown_host",
    "variable": "unknown_variable",
    "port": "port_other",
    "service": "svc_other",
}
EDGE_SERVICE_OTHER = "connectsTo::other"
CONN_QUERY_EVERY = 100  # 1% of baseline connections also feed the surrogate


class MissingHeader(ParseError):
    def __init__(self, msg="missing #fields header"):
        super().__init__(0, msg)


class BadMode(ParseError):
    pass


class NoSurrogate(KeyError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ConnEvent:
    ts: float
    src_ip: str
    dst_ip: str
    dst_port: int
    proto: str = "tcp"
    service: str | None = None
    orig_bytes: int = 0
    resp_bytes: int = 0

    def __post_init__(self):
        if not 0 <= self.dst_port <= 65535:
            raise ValueError(f"port out of range: {self.dst_port}")
        if self.orig_bytes < 0 or self.resp_bytes < 0:
            raise ValueError("byte counts must be non-negative")
        if self.proto not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.proto!r}")

    @property
    def total_bytes(self) -> int:
        return self.orig_bytes + self.resp_bytes


@dataclass(frozen=True)
class VarAccessEvent:
    ts: float
    session_id: str
    app: str
    client_ip: str
    variable: str
    mode: str = "read"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be read or write, not {self.mode!r}")


@dataclass(frozen=True)
class TopologyRecord:
    s_label: str
    s_type: str
    relation: str
    o_label: str
    o_type: str

    def __post_init__(self):
        if not all((self.s_label, self.s_type, self.relation, self.o_label, self.o_type)):
            raise ValueError("topology labels must be non-empty")


Event = Union[ConnEvent, VarAccessEvent]


@dataclass
class MappingConfig:
    connection_repr: str = "node"
    volume_bucket_edges: tuple = (100_000, 10_000_000)
    ip_top_k: int = 8
    emit_type_triples: bool = True

    def __post_init__(self):
        if self.connection_repr not in ("node", "edge"):
            raise ConfigError(f"connection_repr must be node or edge, not {self.connection_repr!r}")
        edges = tuple(int(x) for x in self.volume_bucket_edges)
        if len(edges) != 2 or not edges[0] < edges[1]:
            raise ConfigError("volume_bucket_edges must be two strictly ascending thresholds")
        self.volume_bucket_edges = edges
        if self.ip_top_k < 0:
            raise ConfigError("ip_top_k must be >= 0")

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "MappingConfig":
        return cls(**_coerce_mapping(parse_kv(text), strict=True))


def parse_kv(text: str) -> dict[str, str]:
    """Flat ``key=value`` lines; ``#`` starts a comment line."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ParseError(lineno, f"expected key=value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def _coerce_mapping(kv: dict, strict: bool) -> dict:
    names = {f.name for f in fields(MappingConfig)}
    out = {}
    for key, value in kv.items():
        if key not in names:
            if strict:
                raise ConfigError(f"unknown mapping key {key!r}")
            continue
        if key == "volume_bucket_edges":
            out[key] = tuple(int(float(x)) for x in str(value).split(","))
        elif key == "ip_top_k":
            out[key] = int(value)
        elif key == "emit_type_triples":
            out[key] = str(value).lower() in ("1", "true", "yes", "on")
        else:
            out[key] = str(value)
    return out


# -- parsers / writers --------------------------------------------------------


def _absent(v: str) -> bool:
    return v in ("-", "(empty)", "")


def parse_conn_log(text: str) -> list[ConnEvent]:
    columns = None
    unset = "-"
    events = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line:
            continue
        if line.startswith("#"):
            key, _, rest = line.partition("\t")
            if key == "#fields":
                columns = line.split("\t")[1:]
                missing = [c for c in _CONSUMED if c not in columns]
                if missing:
                    raise ParseError(lineno, f"#fields lacks required columns {missing}")
            elif key == "#unset_field":
                unset = rest
            continue
        if columns is None:
            raise MissingHeader(f"line {lineno}: data before #fields header")
        values = line.split("\t")
        if len(values) != len(columns):
            raise ParseError(lineno, f"expected {len(columns)} fields, got {len(values)}")
        row = dict(zip(columns, values))
        try:
            events.append(ConnEvent(
                ts=float(row["ts"]),
                src_ip=_addr(row["id.orig_h"]),
                dst_ip=_addr(row["id.resp_h"]),
                dst_port=int(row["id.resp_p"]),
                proto=row["proto"],
                service=None if row["service"] in (unset, "-", "") else row["service"],
                orig_bytes=0 if row["orig_bytes"] in (unset, "-", "") else int(row["orig_bytes"]),
                resp_bytes=0 if row["resp_bytes"] in (unset, "-", "") else int(row["resp_bytes"]),
            ))
        except (ValueError, KeyError) as exc:
            raise ParseError(lineno, str(exc)) from None
    if columns is None:
        raise MissingHeader()
    return events


def _addr(v: str) -> str:
    if _absent(v):
        raise ValueError("address is unset")
    return v


def format_conn_log(events: Iterable[ConnEvent]) -> str:
    lines = [
        "#separator \\x09",
        "#set_separator\t,",
        "#empty_field\t(empty)",
        "#unset_field\t-",
        "#path\tconn",
        "#fields\t" + "\t".join(CONN_FIELDS),
        "#types\t" + "\t".join(CONN_TYPES),
    ]
    for i, ev in enumerate(events):
        lines.append("\t".join((
            f"{ev.ts:.6f}",
            f"C{i:08d}",
            ev.src_ip,
            str(49152 + i % 16384),
            ev.dst_ip,
            str(ev.dst_port),
            ev.proto,
            ev.service or "-",
            "-",
            str(ev.orig_bytes),
            str(ev.resp_bytes),
            "SF" if ev.total_bytes else "S0",
        )))
    return "\n".join(lines) + "\n"


def parse_opcua_log(text: str) -> list[VarAccessEvent]:
    reader = csv.reader(io.StringIO(text))
    header = None
    events = []
    for row in reader:
        lineno = reader.line_num
        if header is None:
            if not row:
                continue
            header = tuple(c.strip() for c in row)
            if header != OPCUA_HEADER:
                raise ParseError(lineno, f"expected header {','.join(OPCUA_HEADER)}")
            continue
        if not row:
            continue
        if len(row) != len(OPCUA_HEADER):
            raise ParseError(lineno, f"expected {len(OPCUA_HEADER)} fields, got {len(row)}")
        ts, session, app, client, variable, mode = row
        norm = mode.strip().lower()
        if norm not in MODES:
            raise BadMode(lineno, f"mode must be read or write, not {mode!r}")
        if not (session and app and client and variable):
            raise ParseError(lineno, "empty field")
        try:
            events.append(VarAccessEvent(float(ts), session, app, client, variable, norm))
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
    return events


def format_opcua_log(events: Iterable[VarAccessEvent]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(OPCUA_HEADER)
    for ev in events:
        w.writerow((f"{ev.ts:.6f}", ev.session_id, ev.app, ev.client_ip, ev.variable, ev.mode))
    return buf.getvalue()


def parse_topology(text: str) -> list[TopologyRecord]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5 or not all(parts):
            raise ParseError(lineno, f"expected 5 non-empty tab-separated fields, got {len(parts)}")
        out.append(TopologyRecord(*parts))
    return out


def format_topology(records: Iterable[TopologyRecord]) -> str:
    return "".join(
        f"{r.s_label}\t{r.s_type}\t{r.relation}\t{r.o_label}\t{r.o_type}\n" for r in records
    )


# -- mapping -------------------------------------------------------------------


def bucket_volume(nbytes: int, config: MappingConfig | None = None) -> str:
    t1, t2 = (config or MappingConfig()).volume_bucket_edges
    if nbytes < t1:
        return "low"
    if nbytes < t2:
        return "medium"
    return "high"


# ipaddress' is_private also covers the documentation ranges (203.0.113/24 and
# friends), which the simulator uses as public addresses; only RFC 1918,
# loopback and link-local count as local here.
_LOCAL_NETS = tuple(ipaddress.ip_network(n) for n in (
    "10.0.0.0/8", "172.16.0.0/12", "192.168.0.0/16", "127.0.0.0/8", "169.254.0.0/16"))


def ip_type(ip: str) -> str:
    """``host`` for local addresses, ``external_ip`` for everything else."""
    try:
        addr = ipaddress.ip_address(ip)
    except ValueError:
        return "host"
    if addr.version == 6:
        return "host" if addr.is_private or addr.is_loopback else "external_ip"
    return "host" if any(addr in net for net in _LOCAL_NETS) else "external_ip"


def port_label(port: int) -> str:
    return f"port_{port}"


def service_label(service: str) -> str:
    return f"svc_{service}"


def volume_label(bucket: str) -> str:
    return f"volume_{bucket}"


@dataclass
class GraphMapper:
    """Maps events to triples against one store.

    While ``building`` is true, unseen labels are interned. Afterwards every
    label is resolved read-only, with unseen ones routed to surrogates.
    """

    store: TripleStore
    config: MappingConfig = field(default_factory=MappingConfig)
    public_keep: frozenset = frozenset()
    building: bool = True
    n_conn: int = 0

    def __post_init__(self):
        if self.building:
            for etype, label in SURROGATES.items():
                self._intern(label, etype)
            self._intern(CONN_QUERY, "connection")
            if self.config.connection_repr == "edge":
                self.store.intern_relation(EDGE_SERVICE_OTHER)

    # entity resolution

    def _intern(self, label: str, etype: str) -> int:
        known = self.store.entity_id(label)
        eid = self.store.intern_entity(label, etype)
        if known is None and self.config.emit_type_triples and etype != "connection":
            self.store.add(label, etype, "hasType", f"type_{etype}", "type")
        return eid

    def resolve_entity(self, label: str, etype: str) -> int:
        if etype == "external_ip" and label not in self.public_keep and self.building:
            label = SURROGATES["external_ip"]
        if self.building:
            return self._intern(label, etype)
        eid = self.store.entity_id(label)
        if eid is not None and self.store.entity_type(eid) == etype:
            return eid
        return self._surrogate(etype)

    def _surrogate(self, etype: str) -> int:
        label = SURROGATES.get(etype)
        eid = None if label is None else self.store.entity_id(label)
        if eid is None:
            raise NoSurrogate(f"no surrogate entity for type {etype!r}")
        return eid

    def resolve_ip(self, ip: str) -> int:
        return self.resolve_entity(ip, ip_type(ip))

    def _relation(self, label: str) -> int:
        rid = self.store.relation_id(label)
        if rid is None:
            if not self.building:
                raise NoSurrogate(f"relation {label!r} unseen in baseline")
            rid = self.store.intern_relation(label)
        return rid

    # event mapping

    def map_topology(self, rec: TopologyRecord) -> list[Triple]:
        s = self.resolve_entity(rec.s_label, rec.s_type)
        o = self.resolve_entity(rec.o_label, rec.o_type)
        return [Triple(s, self._relation(rec.relation), o)]

    def map_access(self, ev: VarAccessEvent) -> list[Triple]:
        app = self.resolve_entity(ev.app, "app")
        var = self.resolve_entity(ev.variable, "variable")
        client = self.resolve_ip(ev.client_ip)
        verb = "reads" if ev.mode == "read" else "writes"
        return [Triple(app, self._relation(verb), var),
                Triple(app, self._relation("hasSessionFrom"), client)]

    def _service(self, service: str) -> int:
        label = service_label(service)
        eid = self.store.entity_id(label)
        if eid is None and not self.building:
            return self._surrogate("service")
        return self.resolve_entity(label, "service")

    def _port(self, port: int) -> int:
        label = port_label(port)
        eid = self.store.entity_id(label)
        if eid is None and not self.building:
            return self._surrogate("port")
        return self.resolve_entity(label, "port")

    def map_conn(self, ev: ConnEvent) -> list[Triple]:
        src = self.resolve_ip(ev.src_ip)
        dst = self.resolve_ip(ev.dst_ip)
        bucket = bucket_volume(ev.total_bytes, self.config)
        if self.config.connection_repr == "edge":
            svc = ev.service or "none"
            rel = f"connectsTo::{svc}"
            if self.building:
                rid = self._relation(rel)
            else:
                rid = self.store.relation_id(rel)
                if rid is None:
                    rid = self.store.relation_id(EDGE_SERVICE_OTHER)
            return [Triple(src, rid, dst),
                    Triple(src, self._relation(f"sendsVolume::{bucket}"), dst)]
        if self.building:
            conn = self.store.intern_entity(f"conn_{self.n_conn}", "connection")
            self.n_conn += 1
        else:
            conn = self.store.entity_id(CONN_QUERY)
        out = [Triple(conn, self._relation("hasSource"), src),
               Triple(conn, self._relation("hasDestination"), dst)]
        if ev.service:
            out.append(Triple(conn, self._relation("usesService"), self._service(ev.service)))
        out.append(Triple(conn, self._relation("onPort"), self._port(ev.dst_port)))
        out.append(Triple(conn, self._relation("hasVolume"),
                          self.resolve_entity(volume_label(bucket), "volume")))
        return out

    def map_event(self, ev) -> list[Triple]:
        if isinstance(ev, ConnEvent):
            return self.map_conn(ev)
        if isinstance(ev, VarAccessEvent):
            return self.map_access(ev)
        if isinstance(ev, TopologyRecord):
            return self.map_topology(ev)
        raise TypeError(f"cannot map {type(ev).__name__}")


def map_event_to_triples(event, config: MappingConfig, store: TripleStore) -> list[Triple]:
    """Scoring-time mapping of one event against a frozen store."""
    return GraphMapper(store, config, public_keep=frozenset(), building=False).map_event(event)


def top_public_ips(conns: Iterable[ConnEvent], k: int) -> frozenset:
    """The k most frequent public addresses; ties broken by address string."""
    counts = Counter()
    for ev in conns:
        for ip in (ev.src_ip, ev.dst_ip):
            if ip_type(ip) == "external_ip":
                counts[ip] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return frozenset(ip for ip, _ in ranked[:k])


def build_graph(topology: Iterable[TopologyRecord], conns: list[ConnEvent],
                accesses: list[VarAccessEvent], config: MappingConfig | None = None) -> TripleStore:
    """Baseline knowledge graph from topology and observed events, frozen."""
    config = config or MappingConfig()
    store = TripleStore()
    mapper = GraphMapper(store, config, public_keep=top_public_ips(conns, config.ip_top_k))
    for rec in topology:
        for t in mapper.map_topology(rec):
            store.add_triple(t)
    for ev in accesses:
        for t in mapper.map_access(ev):
            store.add_triple(t)
    query = store.entity_id(CONN_QUERY)
    for i, ev in enumerate(conns):
        triples = mapper.map_conn(ev)
        for t in triples:
            store.add_triple(t)
        if config.connection_repr == "node" and i % CONN_QUERY_EVERY == 0:
            for t in triples:
                store.add_triple(Triple(query, t.p, t.o))
    return store.freeze()


def mapping_dict(config: MappingConfig) -> dict:
    return asdict(config)
