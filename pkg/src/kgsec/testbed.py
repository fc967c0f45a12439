"""Deterministic simulator of a small IT/OT automation testbed.

The simulated plant has a PLC with peripherals (drive, camera, distributed
I/O, HMI) exposing variables through an OPC-UA server, edge servers running
analytics apps, and a development environment (dev hosts, historian, app
repository) that occasionally talks to the internet.

Besides the baseline streams, the module produces labeled deviation events
for 23 evaluation scenarios and a rule checker that recognises each
scenario's pattern in arbitrary event streams.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .ingestion import (
    ConnEvent,
    TopologyRecord,
    VarAccessEvent,
    bucket_volume,
    format_conn_log,
    format_opcua_log,
    format_topology,
    ip_type,
)


class SeverityLabel(enum.IntEnum):
    OBSERVED = 0
    EXPECTED = 1
    UNEXPECTED = 2
    SUSPICIOUS = 3
    HIGHLY_SUSPICIOUS = 4

    @property
    def display(self) -> str:
        return _DISPLAY[self]

    @classmethod
    def parse(cls, text: str) -> "SeverityLabel":
        key = text.strip().lower().replace("_", " ")
        for label, name in _DISPLAY.items():
            if name.lower() == key:
                return label
        raise ValueError(f"unknown severity {text!r}")


_DISPLAY = {
    SeverityLabel.OBSERVED: "Observed",
    SeverityLabel.EXPECTED: "Expected",
    SeverityLabel.UNEXPECTED: "Unexpected",
    SeverityLabel.SUSPICIOUS: "Suspicious",
    SeverityLabel.HIGHLY_SUSPICIOUS: "Highly Suspicious",
}

GROUPS = ("variable_access", "https_access", "ssh_access", "credential_use", "network_scan")


class UnknownScenario(KeyError):
    pass


@dataclass(frozen=True, order=True)
class ScenarioId:
    group: str
    row: int

    def __str__(self):
        return f"{self.group}/{self.row}"

    @classmethod
    def parse(cls, text: str) -> "ScenarioId":
        group, _, row = text.partition("/")
        try:
            sid = cls(group, int(row))
        except ValueError:
            raise UnknownScenario(text) from None
        if sid not in _SCENARIO_INDEX:
            raise UnknownScenario(text)
        return sid


_S = SeverityLabel
SCENARIO_TABLE = (
    ("variable_access", _S.OBSERVED, "App accesses the same variables as during training."),
    ("variable_access", _S.EXPECTED, "App accesses variables from the same (or a closely related) device or module as those observed during training."),
    ("variable_access", _S.UNEXPECTED, "App changes the way it accesses some variables (e.g. writes instead of reads)."),
    ("variable_access", _S.HIGHLY_SUSPICIOUS, "App accesses variables completely unrelated to those accessed during training."),
    ("https_access", _S.OBSERVED, "A dev. host makes an HTTPS access (internet or historian) as observed during training for the same host."),
    ("https_access", _S.EXPECTED, "A dev. host makes an HTTPS access for the first time, but in a way consistent with the actions of other dev. hosts."),
    ("https_access", _S.EXPECTED, "A dev. host observed to access the internet during training accesses a previously unseen public IP address."),
    ("https_access", _S.SUSPICIOUS, "A local address not corresponding to a dev. host (e.g. an edge server) accesses the historian."),
    ("https_access", _S.HIGHLY_SUSPICIOUS, "A local address not corresponding to a dev. host (e.g. an edge server) accesses a public IP address."),
    ("https_access", _S.HIGHLY_SUSPICIOUS, "A high-volume HTTP access is made to a public IP address (high volumes only from historian in baseline)."),
    ("ssh_access", _S.OBSERVED, "A dev. host makes an SSH access to the app repository as seen during training."),
    ("ssh_access", _S.EXPECTED, "A dev. host makes an SSH access to the app repository for the first time, but exactly like other dev. hosts."),
    ("ssh_access", _S.EXPECTED, "A dev. host accesses the app repository via SSH as during training but with a slightly higher data volume."),
    ("ssh_access", _S.UNEXPECTED, "The historian host (not a dev. host but on the same network) accesses the app repository via SSH."),
    ("ssh_access", _S.SUSPICIOUS, "A dev. host accesses an edge server via SSH, but during training no edge servers received SSH connections."),
    ("ssh_access", _S.HIGHLY_SUSPICIOUS, "SSH connection between two edge servers. During training no edge servers started or received SSH connections."),
    ("credential_use", _S.OBSERVED, "Access to OPC-UA server from the same IP address as observed for the corresponding app during training."),
    ("credential_use", _S.EXPECTED, "Access to OPC-UA server from a different IP address but which also corresponds to an edge server."),
    ("credential_use", _S.SUSPICIOUS, "Access to OPC-UA server from an IP address that corresponds to a development host."),
    ("network_scan", _S.OBSERVED, "Connections (source, dest., port) matching those observed during training."),
    ("network_scan", _S.EXPECTED, "Connection matching source-destination pairs observed during training, but on a different port."),
    ("network_scan", _S.SUSPICIOUS, "Connection which does not match any source-destination pair observed during training."),
    ("network_scan", _S.HIGHLY_SUSPICIOUS, "Attempt to connect to an IP which is not assigned to any host."),
)


def _index_scenarios():
    index, rows = {}, {}
    for group, label, desc in SCENARIO_TABLE:
        rows[group] = rows.get(group, 0) + 1
        index[ScenarioId(group, rows[group])] = (label, desc)
    return index


_SCENARIO_INDEX = _index_scenarios()


def list_scenarios() -> list[tuple[ScenarioId, SeverityLabel, str]]:
    return [(sid, label, desc) for sid, (label, desc) in _SCENARIO_INDEX.items()]


def scenario_label(sid: ScenarioId) -> SeverityLabel:
    try:
        return _SCENARIO_INDEX[sid][0]
    except KeyError:
        raise UnknownScenario(str(sid)) from None


@dataclass(frozen=True)
class LabeledEvent:
    event: object
    scenario: str  # "group/row", or "noise" for spurious baseline events
    label: SeverityLabel | None


# -- testbed spec ------------------------------------------------------------

_OT_NET, _DEV_NET, _EDGE_NET = "192.168.0", "10.0.1", "10.0.2"

# role -> (host name, ip)
_HOSTS = (
    ("plc", "plc", f"{_OT_NET}.10"),
    ("hmi", "hmi", f"{_OT_NET}.11"),
    ("drive", "drive", f"{_OT_NET}.12"),
    ("camera", "camera", f"{_OT_NET}.13"),
    ("io_subsystem", "io_subsystem", f"{_OT_NET}.14"),
    ("opcua_server", "opcua_server", f"{_OT_NET}.15"),
    ("historian", "historian", f"{_DEV_NET}.10"),
    ("app_repo", "app_repo", f"{_DEV_NET}.11"),
    ("dev_host", "dev1", f"{_DEV_NET}.31"),
    ("dev_host", "dev2", f"{_DEV_NET}.32"),
    ("dev_host", "dev3", f"{_DEV_NET}.33"),
    ("edge_server", "edge1", f"{_EDGE_NET}.21"),
    ("edge_server", "edge2", f"{_EDGE_NET}.22"),
)

_SUBNET_OF = {_OT_NET: "ot_net", _DEV_NET: "dev_net", _EDGE_NET: "edge_net"}

# device -> module -> variables
_VARIABLES = {
    "drive": {
        "motor": ("belt_speed", "motor_current", "motor_temp", "motor_torque"),
        "encoder": ("belt_position", "belt_velocity"),
    },
    "camera": {
        "imaging": ("frame_count", "detect_count", "exposure_time"),
        "optics": ("focus_distance", "aperture"),
    },
    "io_subsystem": {
        "analog_in": ("pressure", "temperature", "humidity"),
        "digital_in": ("light_barrier_1", "light_barrier_2", "proximity"),
    },
    "plc": {
        "cpu": ("plc_mode", "cycle_time", "cpu_load"),
        "control": ("recipe_id", "alarm_state", "setpoint_speed"),
    },
}

# app -> (edge host, subscribed read variables, written variables)
_APPS = (
    ("conveyor_monitor", "edge1", ("belt_speed", "motor_current", "motor_temp"), ()),
    ("vision_qc", "edge1", ("frame_count", "detect_count"), ()),
    ("env_logger", "edge2", ("pressure", "temperature"), ()),
    ("line_optimizer", "edge2", ("recipe_id", "alarm_state", "plc_mode"), ("setpoint_speed",)),
)

INTERNET_POOL_SIZE = 64
INTERNET_PER_HOST = 10

# baseline flow mixture (fraction of events)
FLOW_MIX = (
    ("app_read", 0.30),
    ("dev_historian_https", 0.20),
    ("dev_repo_ssh", 0.15),
    ("edge_repo_https", 0.15),
    ("dev_internet_https", 0.10),
    ("intra_ot", 0.10),
)
WRITE_FRACTION = 0.02
NOISE_FRACTION = 0.005

# log-normal byte volumes: (median, sigma, clip_lo, clip_hi)
VOLUMES = {
    "historian": (4e7, 0.4, 1.5e7, 2e8),
    "ssh_push": (1.0e6, 0.35, 3e5, 3e6),
    "app_pull": (8e5, 0.35, 3e5, 3e6),
    "internet": (2e4, 0.5, 2e3, 8e4),
    "ot_small": (3e3, 0.3, 500, 2e4),
    "ot_collect": (5e5, 0.3, 2e5, 2e6),
}
SSH_MAX_BASELINE = 3e6

# intra-OT flows: (src host, dst host, port, proto, volume kind)
_OT_FLOWS = (
    ("hmi", "plc", 102, "tcp", "ot_small"),
    ("plc", "drive", 34964, "udp", "ot_small"),
    ("plc", "camera", 34964, "udp", "ot_small"),
    ("plc", "io_subsystem", 34964, "udp", "ot_small"),
    ("historian", "opcua_server", 4840, "tcp", "ot_collect"),
)

SCAN_PORTS = (21, 23, 80, 502, 5900, 8080)
SCENARIO_EVENTS = 20
T0 = 1_600_000_000.0


@dataclass
class TestbedSpec:
    seed: int
    hosts: dict  # name -> (role, ip)
    variables: dict  # variable -> (module, device)
    apps: dict  # app -> {"host", "reads", "writes"}
    internet_pool: tuple
    internet_use: dict  # dev host -> tuple of public ips used in baseline
    historian_users: tuple
    internet_users: tuple
    repo_users: tuple  # dev hosts pushing to the app repository

    __test__ = False  # not a pytest class

    def ip(self, name: str) -> str:
        return self.hosts[name][1]

    def role_of_ip(self, ip: str) -> str | None:
        for role, addr in self.hosts.values():
            if addr == ip:
                return role
        return None

    def name_of_ip(self, ip: str) -> str | None:
        for name, (_, addr) in self.hosts.items():
            if addr == ip:
                return name
        return None

    def hosts_with_role(self, role: str) -> list[str]:
        return [n for n, (r, _) in self.hosts.items() if r == role]

    def assigned_ips(self) -> set:
        return {ip for _, ip in self.hosts.values()} | set(self.internet_pool)

    def module_of(self, var: str) -> str:
        return self.variables[var][0]

    def device_of(self, var: str) -> str:
        return self.variables[var][1]

    def modules_of_device(self, device: str) -> list[str]:
        return list(_VARIABLES[device])

    def baseline_flows(self) -> dict:
        """Normal (src ip, dst ip) pairs mapped to their allowed (port, service) set."""
        flows: dict = {}

        def add(src, dst, port, svc):
            flows.setdefault((src, dst), set()).add((port, svc))

        hist, repo = self.ip("historian"), self.ip("app_repo")
        for h in self.historian_users:
            add(self.ip(h), hist, 443, "https")
        for h in self.repo_users:
            add(self.ip(h), repo, 22, "ssh")
        for h in self.hosts_with_role("edge_server"):
            add(self.ip(h), repo, 443, "https")
        for h, ips in self.internet_use.items():
            for ip in ips:
                add(self.ip(h), ip, 443, "https")
        for src, dst, port, _, _ in _OT_FLOWS:
            add(self.ip(src), self.ip(dst), port, None)
        return flows

    def topology(self) -> list[TopologyRecord]:
        recs = []
        for device, modules in _VARIABLES.items():
            recs.append(TopologyRecord(device, "device", "connectedTo", "ot_net", "network"))
            for module, variables in modules.items():
                recs.append(TopologyRecord(module, "module", "partOf", device, "device"))
                for var in variables:
                    recs.append(TopologyRecord(var, "variable", "belongsTo", module, "module"))
        for name, (role, ip) in self.hosts.items():
            subnet = _SUBNET_OF[ip.rsplit(".", 1)[0]]
            recs.append(TopologyRecord(ip, "host", "inSubnet", subnet, "network"))
            recs.append(TopologyRecord(ip, "host", "hasRole", f"role_{role}", "role"))
            if role in _VARIABLES:
                recs.append(TopologyRecord(ip, "host", "isDevice", role, "device"))
        for app, info in self.apps.items():
            recs.append(TopologyRecord(app, "app", "deployedOn", self.ip(info["host"]), "host"))
        return recs


def build_testbed(seed: int = 0) -> TestbedSpec:
    rng = np.random.default_rng([int(seed), 101])
    hosts = {name: (role, ip) for role, name, ip in _HOSTS}
    variables = {v: (m, d) for d, mods in _VARIABLES.items() for m, vs in mods.items() for v in vs}
    apps = {a: {"host": h, "reads": tuple(r), "writes": tuple(w)} for a, h, r, w in _APPS}
    # documentation ranges plus a few public /24s; unique, sorted for stable output
    octets = rng.choice(np.arange(1, 255), size=INTERNET_POOL_SIZE, replace=False)
    nets = ("203.0.113", "198.51.100", "93.184.216", "151.101.1")
    pool = tuple(f"{nets[i % len(nets)]}.{int(o)}" for i, o in enumerate(octets))
    internet_users = ("dev1", "dev2")
    use = {}
    for h in internet_users:
        picks = rng.choice(len(pool), size=INTERNET_PER_HOST, replace=False)
        use[h] = tuple(pool[i] for i in sorted(picks))
    return TestbedSpec(
        seed=int(seed),
        hosts=hosts,
        variables=variables,
        apps=apps,
        internet_pool=pool,
        internet_use=use,
        historian_users=("dev1", "dev2"),
        internet_users=internet_users,
        repo_users=("dev1", "dev3"),
    )


# -- event generation ------------------------------------------------------------


def _volume(rng, kind: str, scale: float = 1.0) -> int:
    median, sigma, lo, hi = VOLUMES[kind]
    v = median * math.exp(sigma * rng.standard_normal()) * scale
    return int(min(max(v, lo * scale), hi * scale))


def _split(total: int, rng, upload: bool) -> tuple[int, int]:
    """Split a byte volume into (orig, resp); pushes are upload-heavy."""
    frac = 0.9 if upload else 0.05
    orig = int(total * frac)
    return orig, total - orig


class _Clock:
    def __init__(self, rng, t0=T0):
        self.rng = rng
        self.t = t0

    def __call__(self) -> float:
        self.t += float(self.rng.exponential(2.0)) + 0.001
        return round(self.t, 6)


def _conn(ts, src, dst, port, proto, svc, total, upload=False, rng=None):
    orig, resp = _split(total, rng, upload)
    return ConnEvent(ts, src, dst, port, proto, svc, orig, resp)


def _flow_event(spec: TestbedSpec, kind: str, rng, clock, sessions: dict):
    ts = clock()
    if kind == "app_read":
        app = list(spec.apps)[int(rng.integers(len(spec.apps)))]
        info = spec.apps[app]
        writers = [a for a, i in spec.apps.items() if i["writes"]]
        if writers and rng.random() < WRITE_FRACTION:
            app = writers[int(rng.integers(len(writers)))]
            info = spec.apps[app]
            var, mode = info["writes"][int(rng.integers(len(info["writes"])))], "write"
        else:
            var, mode = info["reads"][int(rng.integers(len(info["reads"])))], "read"
        sess = sessions.setdefault(app, f"{app}-{int(rng.integers(1000, 9999))}")
        return VarAccessEvent(ts, sess, app, spec.ip(info["host"]), var, mode)
    if kind == "dev_historian_https":
        h = spec.historian_users[int(rng.integers(len(spec.historian_users)))]
        return _conn(ts, spec.ip(h), spec.ip("historian"), 443, "tcp", "https",
                     _volume(rng, "historian"), rng=rng)
    if kind == "dev_repo_ssh":
        h = spec.repo_users[int(rng.integers(len(spec.repo_users)))]
        return _conn(ts, spec.ip(h), spec.ip("app_repo"), 22, "tcp", "ssh",
                     _volume(rng, "ssh_push"), upload=True, rng=rng)
    if kind == "edge_repo_https":
        # edge hosts fetch app updates over HTTPS; they never start or receive SSH
        edges = spec.hosts_with_role("edge_server")
        h = edges[int(rng.integers(len(edges)))]
        return _conn(ts, spec.ip(h), spec.ip("app_repo"), 443, "tcp", "https",
                     _volume(rng, "app_pull"), rng=rng)
    if kind == "dev_internet_https":
        h = spec.internet_users[int(rng.integers(len(spec.internet_users)))]
        ips = spec.internet_use[h]
        dst = ips[int(rng.integers(len(ips)))]
        return _conn(ts, spec.ip(h), dst, 443, "tcp", "https", _volume(rng, "internet"), rng=rng)
    if kind == "intra_ot":
        src, dst, port, proto, vol = _OT_FLOWS[int(rng.integers(len(_OT_FLOWS)))]
        return _conn(ts, spec.ip(src), spec.ip(dst), port, proto, None, _volume(rng, vol), rng=rng)
    raise ValueError(kind)


def generate_baseline(spec: TestbedSpec, n_events: int, seed: int = 0) -> list:
    """Normal-operation events drawn from the fixed flow mixture, in time order."""
    if n_events < 1:
        raise ValueError("n_events must be >= 1")
    rng = np.random.default_rng([int(seed), 202])
    clock = _Clock(rng)
    kinds = [k for k, _ in FLOW_MIX]
    probs = np.array([p for _, p in FLOW_MIX])
    draws = rng.choice(len(kinds), size=n_events, p=probs / probs.sum())
    sessions: dict = {}
    return [_flow_event(spec, kinds[k], rng, clock, sessions) for k in draws]


def flow_kind(spec: TestbedSpec, ev) -> str | None:
    """Inverse of the baseline generator: which flow type produced ``ev``."""
    if isinstance(ev, VarAccessEvent):
        return "app_read"
    src, dst = spec.name_of_ip(ev.src_ip), spec.name_of_ip(ev.dst_ip)
    if dst == "historian" and ev.service == "https":
        return "dev_historian_https"
    if dst == "app_repo" and ev.service == "ssh":
        return "dev_repo_ssh"
    if dst == "app_repo" and ev.service == "https" and spec.hosts.get(src, ("",))[0] == "edge_server":
        return "edge_repo_https"
    if ev.service == "https" and ip_type(ev.dst_ip) == "external_ip":
        return "dev_internet_https"
    if ev.service is None and src is not None and dst is not None:
        return "intra_ot"
    return None


def generate_noise(spec: TestbedSpec, n_events: int, seed: int = 0) -> list[LabeledEvent]:
    """Spurious test-time events: unseen in training but consistent with host roles.

    Examples are a dev host reaching a public address outside its usual set,
    a fresh OPC-UA session id, or a flow with an unusual but in-bucket volume.
    """
    rng = np.random.default_rng([int(seed), 303])
    clock = _Clock(rng, T0 + 1e6)
    used = {ip for ips in spec.internet_use.values() for ip in ips}
    unseen = [ip for ip in spec.internet_pool if ip not in used]
    out = []
    for i in range(n_events):
        ts = clock()
        kind = i % 4
        if kind == 0:
            h = spec.internet_users[int(rng.integers(len(spec.internet_users)))]
            ev = _conn(ts, spec.ip(h), unseen[int(rng.integers(len(unseen)))], 443, "tcp", "https",
                       _volume(rng, "internet"), rng=rng)
        elif kind == 1:
            app = list(spec.apps)[int(rng.integers(len(spec.apps)))]
            info = spec.apps[app]
            ev = VarAccessEvent(ts, f"{app}-r{int(rng.integers(10000, 99999))}", app,
                                spec.ip(info["host"]),
                                info["reads"][int(rng.integers(len(info["reads"])))], "read")
        elif kind == 2:
            edges = spec.hosts_with_role("edge_server")
            h = edges[int(rng.integers(len(edges)))]
            ev = _conn(ts, spec.ip(h), spec.ip("app_repo"), 443, "tcp", "https",
                       _volume(rng, "app_pull", 0.8), rng=rng)
        else:
            h = spec.historian_users[int(rng.integers(len(spec.historian_users)))]
            ev = _conn(ts, spec.ip(h), spec.ip("historian"), 443, "tcp", "https",
                       _volume(rng, "historian", 1.2), rng=rng)
        out.append(LabeledEvent(ev, "noise", None))
    return out


def noise_count(n_baseline: int) -> int:
    return max(1, int(round(NOISE_FRACTION * n_baseline)))


# -- scenario injection ------------------------------------------------------------


def _scan(ts, src, dst, port):
    return ConnEvent(ts, src, dst, port, "tcp", None, 0, 0)


def _related_unsubscribed(spec: TestbedSpec, app: str) -> list[str]:
    info = spec.apps[app]
    mods = {spec.module_of(v) for v in info["reads"]}
    devices = {spec.device_of(v) for v in info["reads"]}
    related_mods = mods | {m for d in devices for m in spec.modules_of_device(d)}
    touched = set(info["reads"]) | set(info["writes"])
    return [v for v, (m, _) in spec.variables.items() if m in related_mods and v not in touched]


def _unrelated(spec: TestbedSpec, app: str) -> list[str]:
    devices = {spec.device_of(v) for v in spec.apps[app]["reads"] + spec.apps[app]["writes"]}
    read_anywhere = {v for i in spec.apps.values() for v in i["reads"] + i["writes"]}
    return [v for v, (_, d) in spec.variables.items() if d not in devices and v not in read_anywhere]


def _inject(spec: TestbedSpec, sid: ScenarioId, rng, n: int) -> list:
    clock = _Clock(rng, T0 + 2e6)
    apps = list(spec.apps)
    edges = spec.hosts_with_role("edge_server")
    devs = spec.hosts_with_role("dev_host")
    pick = lambda seq: seq[int(rng.integers(len(seq)))]  # noqa: E731
    out = []
    g, r = sid.group, sid.row
    for _ in range(n):
        ts = clock()
        if g in ("variable_access", "credential_use"):
            app = pick(apps)
            info = spec.apps[app]
            host_ip = spec.ip(info["host"])
            sess = f"{app}-t{int(rng.integers(1000, 9999))}"
            var, mode, client = pick(info["reads"]), "read", host_ip
            if g == "variable_access":
                if r == 2:
                    var = pick(_related_unsubscribed(spec, app))
                elif r == 3:
                    mode = "write"
                elif r == 4:
                    var = pick(_unrelated(spec, app))
            else:
                if r == 2:
                    client = spec.ip(pick([e for e in edges if e != info["host"]]))
                elif r == 3:
                    client = spec.ip(pick(devs))
            ev = VarAccessEvent(ts, sess, app, client, var, mode)
        elif g == "https_access":
            if r == 1:
                h = pick(spec.historian_users)
                if rng.random() < 0.5:
                    ev = _conn(ts, spec.ip(h), spec.ip("historian"), 443, "tcp", "https",
                               _volume(rng, "historian"), rng=rng)
                else:
                    h = pick(spec.internet_users)
                    ev = _conn(ts, spec.ip(h), pick(spec.internet_use[h]), 443, "tcp", "https",
                               _volume(rng, "internet"), rng=rng)
            elif r == 2:
                h = pick([d for d in devs if d not in spec.historian_users])
                ev = _conn(ts, spec.ip(h), spec.ip("historian"), 443, "tcp", "https",
                           _volume(rng, "historian"), rng=rng)
            elif r == 3:
                h = pick(spec.internet_users)
                ev = _conn(ts, spec.ip(h), pick(_unseen_public(spec)), 443, "tcp", "https",
                           _volume(rng, "internet"), rng=rng)
            elif r == 4:
                ev = _conn(ts, spec.ip(pick(edges)), spec.ip("historian"), 443, "tcp", "https",
                           _volume(rng, "historian"), rng=rng)
            elif r == 5:
                ev = _conn(ts, spec.ip(pick(edges)), pick(spec.internet_pool), 443, "tcp", "https",
                           _volume(rng, "internet"), rng=rng)
            else:
                h = pick(spec.internet_users)
                ev = _conn(ts, spec.ip(h), pick(spec.internet_use[h]), 80, "tcp", "http",
                           _volume(rng, "historian"), rng=rng)
        elif g == "ssh_access":
            repo = spec.ip("app_repo")
            if r == 1:
                ev = _conn(ts, spec.ip(pick(spec.repo_users)), repo, 22, "tcp", "ssh",
                           _volume(rng, "ssh_push"), upload=True, rng=rng)
            elif r == 2:
                h = pick([d for d in devs if d not in spec.repo_users])
                ev = _conn(ts, spec.ip(h), repo, 22, "tcp", "ssh",
                           _volume(rng, "ssh_push"), upload=True, rng=rng)
            elif r == 3:
                total = int(SSH_MAX_BASELINE * (1.05 + 0.25 * rng.random()))
                ev = _conn(ts, spec.ip(pick(spec.repo_users)), repo, 22, "tcp", "ssh",
                           total, upload=True, rng=rng)
            elif r == 4:
                ev = _conn(ts, spec.ip("historian"), repo, 22, "tcp", "ssh",
                           _volume(rng, "ssh_push"), upload=True, rng=rng)
            elif r == 5:
                ev = _conn(ts, spec.ip(pick(devs)), spec.ip(pick(edges)), 22, "tcp", "ssh",
                           _volume(rng, "ssh_push"), upload=True, rng=rng)
            else:
                a, b = (edges if rng.random() < 0.5 else edges[::-1])[:2]
                ev = _conn(ts, spec.ip(a), spec.ip(b), 22, "tcp", "ssh",
                           _volume(rng, "ssh_push"), upload=True, rng=rng)
        elif g == "network_scan":
            if r == 1:
                src, dst, port, proto, vol = pick(_OT_FLOWS)
                ev = _conn(ts, spec.ip(src), spec.ip(dst), port, proto, None, _volume(rng, vol), rng=rng)
            elif r == 2:
                src, dst, port, _, _ = pick(_OT_FLOWS)
                ev = _scan(ts, spec.ip(src), spec.ip(dst), pick(SCAN_PORTS))
            elif r == 3:
                flows = spec.baseline_flows()
                local = [n for n, (_, ip) in spec.hosts.items()]
                while True:
                    src, dst = spec.ip(pick(local)), spec.ip(pick(local))
                    if src != dst and (src, dst) not in flows:
                        break
                ot_ports = sorted({f[2] for f in _OT_FLOWS})
                ev = _scan(ts, src, dst, pick(ot_ports))
            else:
                assigned = spec.assigned_ips()
                while True:
                    net = pick((_OT_NET, _DEV_NET, _EDGE_NET))
                    dst = f"{net}.{int(rng.integers(100, 250))}"
                    if dst not in assigned:
                        break
                src = spec.ip(pick(devs + ["hmi"]))
                ev = _scan(ts, src, dst, pick(SCAN_PORTS + (102, 22, 443)))
        else:
            raise UnknownScenario(str(sid))
        out.append(ev)
    return out


def _unseen_public(spec: TestbedSpec) -> list[str]:
    used = {ip for ips in spec.internet_use.values() for ip in ips}
    return [ip for ip in spec.internet_pool if ip not in used]


def inject_scenario(spec: TestbedSpec, scenario: ScenarioId, seed: int = 0,
                    n_events: int = SCENARIO_EVENTS) -> list[LabeledEvent]:
    if not isinstance(scenario, ScenarioId):
        scenario = ScenarioId.parse(str(scenario))
    label = scenario_label(scenario)
    gi = GROUPS.index(scenario.group)
    rng = np.random.default_rng([int(seed), 404, gi, scenario.row])
    return [LabeledEvent(ev, str(scenario), label)
            for ev in _inject(spec, scenario, rng, max(n_events, 5))]


# -- rule checker ----------------------------------------------------------------------


@dataclass
class RuleChecker:
    """Replays each scenario's predicate against events, relative to ``spec``."""

    spec: TestbedSpec
    _rules: dict = field(default_factory=dict, init=False)

    def __post_init__(self):
        s = self.spec
        flows = s.baseline_flows()
        devs = {s.ip(h) for h in s.hosts_with_role("dev_host")}
        edges = {s.ip(h) for h in s.hosts_with_role("edge_server")}
        hist, repo = s.ip("historian"), s.ip("app_repo")
        assigned = s.assigned_ips()
        used_public = {ip for ips in s.internet_use.values() for ip in ips}
        hist_users = {s.ip(h) for h in s.historian_users}
        net_users = {s.ip(h) for h in s.internet_users}
        repo_users = {s.ip(h) for h in s.repo_users}

        def va(pred: Callable):
            return lambda e: isinstance(e, VarAccessEvent) and e.app in s.apps and pred(e, s.apps[e.app])

        def conn(pred: Callable):
            return lambda e: isinstance(e, ConnEvent) and pred(e)

        def host_ip(info):
            return s.ip(info["host"])

        def related(e, info):
            return e.variable in _related_unsubscribed(s, e.app)

        def unrelated(e, info):
            return e.variable in _unrelated(s, e.app)

        def local_non_dev(ip):
            return ip_type(ip) == "host" and ip in assigned and ip not in devs

        def bucket(e):
            return bucket_volume(e.total_bytes)

        R = {
            ("variable_access", 1): va(lambda e, i: e.mode == "read" and e.variable in i["reads"]),
            ("variable_access", 2): va(lambda e, i: e.mode == "read" and related(e, i)),
            ("variable_access", 3): va(lambda e, i: e.mode == "write" and e.variable in i["reads"]),
            ("variable_access", 4): va(lambda e, i: unrelated(e, i)),
            ("https_access", 1): conn(lambda e: e.service == "https" and e.src_ip in devs
                                      and (e.src_ip, e.dst_ip) in flows),
            ("https_access", 2): conn(lambda e: e.service == "https" and e.src_ip in devs and (
                (e.dst_ip == hist and e.src_ip not in hist_users)
                or (ip_type(e.dst_ip) == "external_ip" and e.src_ip not in net_users))),
            ("https_access", 3): conn(lambda e: e.service == "https" and e.src_ip in net_users
                                      and ip_type(e.dst_ip) == "external_ip"
                                      and e.dst_ip not in used_public),
            ("https_access", 4): conn(lambda e: e.dst_ip == hist and e.service == "https"
                                      and local_non_dev(e.src_ip)),
            ("https_access", 5): conn(lambda e: ip_type(e.dst_ip) == "external_ip"
                                      and local_non_dev(e.src_ip)),
            ("https_access", 6): conn(lambda e: e.service == "http" and ip_type(e.dst_ip) == "external_ip"
                                      and bucket(e) == "high"),
            ("ssh_access", 1): conn(lambda e: e.service == "ssh" and e.dst_ip == repo and e.src_ip in repo_users
                                    and e.total_bytes <= SSH_MAX_BASELINE),
            ("ssh_access", 2): conn(lambda e: e.service == "ssh" and e.dst_ip == repo and e.src_ip in devs
                                    and e.src_ip not in repo_users),
            ("ssh_access", 3): conn(lambda e: e.service == "ssh" and e.dst_ip == repo and e.src_ip in repo_users
                                    and e.total_bytes > SSH_MAX_BASELINE and bucket(e) == "medium"),
            ("ssh_access", 4): conn(lambda e: e.service == "ssh" and e.src_ip == hist and e.dst_ip == repo),
            ("ssh_access", 5): conn(lambda e: e.service == "ssh" and e.src_ip in devs and e.dst_ip in edges),
            ("ssh_access", 6): conn(lambda e: e.service == "ssh" and e.src_ip in edges and e.dst_ip in edges),
            ("credential_use", 1): va(lambda e, i: e.client_ip == host_ip(i)),
            ("credential_use", 2): va(lambda e, i: e.client_ip in edges and e.client_ip != host_ip(i)),
            ("credential_use", 3): va(lambda e, i: e.client_ip in devs),
            ("network_scan", 1): conn(lambda e: (e.dst_port, e.service) in flows.get((e.src_ip, e.dst_ip), ())),
            ("network_scan", 2): conn(lambda e: (e.src_ip, e.dst_ip) in flows and e.dst_port not in
                                      {p for p, _ in flows[(e.src_ip, e.dst_ip)]}),
            ("network_scan", 3): conn(lambda e: e.service is None and e.src_ip in assigned
                                      and e.dst_ip in assigned and (e.src_ip, e.dst_ip) not in flows),
            ("network_scan", 4): conn(lambda e: ip_type(e.dst_ip) == "host" and e.dst_ip not in assigned),
        }
        self._rules = {ScenarioId(g, r): fn for (g, r), fn in R.items()}

    def matches(self, scenario: ScenarioId, event) -> bool:
        return bool(self._rules[scenario](event))

    def classify(self, event) -> list[ScenarioId]:
        return [sid for sid, fn in self._rules.items() if fn(event)]

    def deviations(self, events) -> dict:
        """Count matches of every non-Observed scenario over ``events``."""
        out = {}
        for sid, (label, _) in _SCENARIO_INDEX.items():
            if label == SeverityLabel.OBSERVED:
                continue
            out[sid] = sum(1 for e in events if self._rules[sid](e))
        return out


# -- log writing ---------------------------------------------------------------------


def split_events(events) -> tuple[list[ConnEvent], list[VarAccessEvent], list[TopologyRecord]]:
    conns, accesses, topo = [], [], []
    for ev in events:
        ev = ev.event if isinstance(ev, LabeledEvent) else ev
        if isinstance(ev, ConnEvent):
            conns.append(ev)
        elif isinstance(ev, VarAccessEvent):
            accesses.append(ev)
        elif isinstance(ev, TopologyRecord):
            topo.append(ev)
        else:
            raise TypeError(f"cannot write {type(ev).__name__}")
    return conns, accesses, topo


def write_logs(events, out_dir, topology_always: bool = False) -> dict:
    """Write conn.log, opcua.csv and (if present) topology.tsv under ``out_dir``."""
    events = list(events)
    if not events:
        raise ValueError("no events to write")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    conns, accesses, topo = split_events(events)
    files = {}
    (out / "conn.log").write_text(format_conn_log(conns))
    files["conn"] = "conn.log"
    (out / "opcua.csv").write_text(format_opcua_log(accesses))
    files["opcua"] = "opcua.csv"
    if topo or topology_always:
        (out / "topology.tsv").write_text(format_topology(topo))
        files["topology"] = "topology.tsv"
    return files


def write_manifest(path, entries: list[dict], meta: dict):
    doc = {"meta": meta, "scenarios": entries}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
