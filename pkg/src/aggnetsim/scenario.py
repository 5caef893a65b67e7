"""Scenario files: JSON schema, validation, defaults.

A scenario describes the topology (nodes, links, core peers), the
controller wiring, the BRAS section, measurement probes, customers, and
a timed event list drawn from a closed verb set.  Validation errors carry
the JSON path of the offending key.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .simnet import (DEFAULT_CC_INTERVAL_US, DEFAULT_CC_K,
                     DEFAULT_CTL_LATENCY_US, DEFAULT_LINK_DELAY_US,
                     DEFAULT_PER_MESSAGE_PROC_US)

ACTIONS = frozenset({"fail_link", "restore_link", "enable_bras",
                     "disable_bras", "send_padi", "start_probe", "stop_probe",
                     "create_pw", "setup_e2e_lsp", "assert_metric"})

ASSERT_OPS = frozenset({"lt", "le", "gt", "ge", "eq", "ne"})


class ConfigError(Exception):
    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


@dataclass
class Scenario:
    nodes: list
    links: list
    controllers: list
    core_peers: list
    bras: dict | None
    customers: list
    oam: dict
    probes: list
    events: list
    horizon_us: int
    discovery_quiet_us: int
    config_hash: str
    link_ports: dict = field(default_factory=dict)  # link id -> ((a,pa),(b,pb))


def parse_scenario(path: str) -> Scenario:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON: {exc}") from None
    return scenario_from_dict(cfg, raw)


def scenario_from_dict(cfg: dict, raw: bytes | None = None) -> Scenario:
    if raw is None:
        raw = json.dumps(cfg, sort_keys=True).encode()
    digest = hashlib.sha256(raw).hexdigest()[:16]

    nodes = cfg.get("nodes")
    if not isinstance(nodes, list) or not nodes:
        raise ConfigError("nodes", "required non-empty list")
    node_ids = set()
    norm_nodes = []
    for i, n in enumerate(nodes):
        nid = n.get("id")
        if not isinstance(nid, str) or not nid:
            raise ConfigError(f"nodes[{i}].id", "required string")
        if nid in node_ids:
            raise ConfigError(f"nodes[{i}].id", f"duplicate node id {nid!r}")
        node_ids.add(nid)
        norm_nodes.append({"id": nid, "processing": bool(n.get("processing"))})

    used_ports: dict = {nid: set() for nid in node_ids}
    auto_port: dict = {nid: 1 for nid in node_ids}

    def claim_port(nid: str, port, path: str) -> int:
        if port is None:
            while auto_port[nid] in used_ports[nid]:
                auto_port[nid] += 1
            port = auto_port[nid]
        if not isinstance(port, int) or port < 1:
            raise ConfigError(path, "port must be a positive integer")
        if port in used_ports[nid]:
            raise ConfigError(path, f"port {port} on {nid} already in use")
        used_ports[nid].add(port)
        return port

    def endpoint(spec, path: str) -> tuple:
        if isinstance(spec, str):
            nid, port = spec, None
        elif isinstance(spec, list) and len(spec) == 2:
            nid, port = spec
        else:
            raise ConfigError(path, "expected node id or [node, port]")
        if nid not in node_ids:
            raise ConfigError(path, f"unknown node {nid!r}")
        return nid, port

    norm_links = []
    link_ports = {}
    link_ids = set()
    for i, l in enumerate(cfg.get("links", [])):
        a_node, a_port = endpoint(l.get("a"), f"links[{i}].a")
        b_node, b_port = endpoint(l.get("b"), f"links[{i}].b")
        if a_node == b_node:
            raise ConfigError(f"links[{i}].b", "self-loop link")
        a_port = claim_port(a_node, a_port, f"links[{i}].a")
        b_port = claim_port(b_node, b_port, f"links[{i}].b")
        lid = l.get("id", f"{a_node}-{b_node}")
        if lid in link_ids:
            raise ConfigError(f"links[{i}].id", f"duplicate link id {lid!r}")
        link_ids.add(lid)
        delay = l.get("delay_us", DEFAULT_LINK_DELAY_US)
        weight = l.get("weight", 1)
        if not isinstance(delay, int) or delay < 1:
            raise ConfigError(f"links[{i}].delay_us", "must be >= 1")
        if not isinstance(weight, int) or weight < 1:
            raise ConfigError(f"links[{i}].weight", "must be >= 1")
        norm_links.append({"id": lid, "a": (a_node, a_port),
                           "b": (b_node, b_port), "delay_us": delay,
                           "weight": weight})
        link_ports[lid] = ((a_node, a_port), (b_node, b_port))

    norm_peers = []
    peer_ids = set()
    for i, p in enumerate(cfg.get("core_peers", [])):
        pid = p.get("id")
        if not isinstance(pid, str) or not pid:
            raise ConfigError(f"core_peers[{i}].id", "required string")
        if pid in peer_ids or pid in node_ids:
            raise ConfigError(f"core_peers[{i}].id", f"duplicate id {pid!r}")
        peer_ids.add(pid)
        attach = p.get("attach", {})
        an = attach.get("node")
        if an not in node_ids:
            raise ConfigError(f"core_peers[{i}].attach.node",
                              f"unknown node {an!r}")
        ap = claim_port(an, attach.get("port"), f"core_peers[{i}].attach.port")
        norm_peers.append({"id": pid, "attach": (an, ap),
                           "delay_us": p.get("delay_us", DEFAULT_LINK_DELAY_US),
                           "echo": bool(p.get("echo", True)),
                           "latency_us": p.get("latency_us",
                                               DEFAULT_CTL_LATENCY_US),
                           "per_message_proc_us": p.get(
                               "per_message_proc_us",
                               DEFAULT_PER_MESSAGE_PROC_US)})

    norm_ctls = []
    assigned = set()
    for i, c in enumerate(cfg.get("controllers", [])):
        cid = c.get("id")
        if not isinstance(cid, str) or not cid:
            raise ConfigError(f"controllers[{i}].id", "required string")
        domain = c.get("domain")
        if not isinstance(domain, list) or not domain:
            raise ConfigError(f"controllers[{i}].domain",
                              "required non-empty list")
        for j, nid in enumerate(domain):
            if nid not in node_ids:
                raise ConfigError(f"controllers[{i}].domain[{j}]",
                                  f"unknown node {nid!r}")
            if nid in assigned:
                raise ConfigError(f"controllers[{i}].domain[{j}]",
                                  f"{nid!r} already controlled")
            assigned.add(nid)
        norm_ctls.append({"id": cid, "domain": list(domain),
                          "latency_us": c.get("latency_us",
                                              DEFAULT_CTL_LATENCY_US),
                          "per_message_proc_us": c.get(
                              "per_message_proc_us",
                              DEFAULT_PER_MESSAGE_PROC_US)})
    if not norm_ctls:
        raise ConfigError("controllers", "at least one controller required")

    norm_customers = []
    cust_ids = set()
    for i, c in enumerate(cfg.get("customers", [])):
        cid = c.get("id")
        if not isinstance(cid, str) or not cid:
            raise ConfigError(f"customers[{i}].id", "required string")
        if cid in cust_ids:
            raise ConfigError(f"customers[{i}].id", f"duplicate id {cid!r}")
        cust_ids.add(cid)
        nid = c.get("node")
        if nid not in node_ids:
            raise ConfigError(f"customers[{i}].node", f"unknown node {nid!r}")
        port = claim_port(nid, c.get("port"), f"customers[{i}].port")
        mac = c.get("mac", f"02:c0:00:00:00:{i + 1:02x}")
        norm_customers.append({"id": cid, "node": nid, "port": port,
                               "mac": mac})

    bras = cfg.get("bras")
    if bras is not None:
        descs = bras.get("descriptors")
        if not isinstance(descs, list) or not descs:
            raise ConfigError("bras.descriptors", "required non-empty list")
        seen = set()
        for i, d in enumerate(descs):
            if d.get("id") in seen:
                raise ConfigError(f"bras.descriptors[{i}].id", "duplicate id")
            seen.add(d.get("id"))
            if d.get("host") not in node_ids:
                raise ConfigError(f"bras.descriptors[{i}].host",
                                  f"unknown node {d.get('host')!r}")
            if not isinstance(d.get("priority"), int):
                raise ConfigError(f"bras.descriptors[{i}].priority",
                                  "required integer")
        if "pool" not in bras:
            raise ConfigError("bras.pool", "required prefix")
        gw = bras.get("gateway", {})
        gw_attach = (gw.get("border_node"), gw.get("port"))
        peer_attaches = {p["attach"]: p["id"] for p in norm_peers}
        if tuple(gw_attach) not in peer_attaches:
            raise ConfigError("bras.gateway",
                              "must name a core peer attachment")
        bras = dict(bras)
        bras["gateway_peer"] = peer_attaches[tuple(gw_attach)]

    oam = cfg.get("oam", {})
    oam = {"interval_us": oam.get("interval_us", DEFAULT_CC_INTERVAL_US),
           "k": oam.get("k", DEFAULT_CC_K)}

    horizon = cfg.get("horizon_us")
    if not isinstance(horizon, int) or horizon <= 0:
        raise ConfigError("horizon_us", "required positive integer")

    norm_probes = []
    probe_ids = set()
    for i, p in enumerate(cfg.get("probes", [])):
        pid = p.get("id")
        if not isinstance(pid, str) or not pid:
            raise ConfigError(f"probes[{i}].id", "required string")
        if pid in probe_ids:
            raise ConfigError(f"probes[{i}].id", f"duplicate id {pid!r}")
        probe_ids.add(pid)
        period = p.get("period_us", 1000)
        if not isinstance(period, int) or period < 1:
            raise ConfigError(f"probes[{i}].period_us", "must be >= 1")
        kind = p.get("kind", "oneway")
        if kind not in ("oneway", "echo"):
            raise ConfigError(f"probes[{i}].kind", f"unknown kind {kind!r}")
        norm = {"id": pid, "period_us": period, "kind": kind}
        if kind == "echo":
            if p.get("customer") not in cust_ids:
                raise ConfigError(f"probes[{i}].customer",
                                  f"unknown customer {p.get('customer')!r}")
            norm["customer"] = p["customer"]
            norm["echo_dst"] = p.get("echo_dst", "192.0.2.1")
        else:
            src_n, src_p = endpoint(p.get("src"), f"probes[{i}].src")
            dst_n, dst_p = endpoint(p.get("sink"), f"probes[{i}].sink")
            norm["src"] = (src_n, claim_port(src_n, src_p,
                                             f"probes[{i}].src"))
            norm["sink"] = (dst_n, claim_port(dst_n, dst_p,
                                              f"probes[{i}].sink"))
            transport = p.get("transport", "none")
            if transport not in ("none", "pw", "tree", "protected"):
                raise ConfigError(f"probes[{i}].transport",
                                  f"unknown transport {transport!r}")
            norm["transport"] = transport
        norm_probes.append(norm)

    norm_events = []
    bras_ids = {d["id"] for d in (bras or {}).get("descriptors", [])}
    for i, e in enumerate(cfg.get("events", [])):
        at = e.get("at_us")
        if not isinstance(at, int) or at < 0 or at > horizon:
            raise ConfigError(f"events[{i}].at_us",
                              "must lie within [0, horizon_us]")
        action = e.get("action")
        if action not in ACTIONS:
            raise ConfigError(f"events[{i}].action",
                              f"unknown action {action!r}")
        args = e.get("args", {})
        _validate_event_args(i, action, args, link_ids, bras_ids, cust_ids,
                             probe_ids, node_ids, peer_ids)
        norm_events.append({"at_us": at, "action": action, "args": args})

    return Scenario(nodes=norm_nodes, links=norm_links, controllers=norm_ctls,
                    core_peers=norm_peers, bras=bras,
                    customers=norm_customers, oam=oam, probes=norm_probes,
                    events=norm_events, horizon_us=horizon,
                    discovery_quiet_us=cfg.get("discovery_quiet_us", 5000),
                    config_hash=digest, link_ports=link_ports)


def _validate_event_args(i: int, action: str, args: dict, link_ids, bras_ids,
                         cust_ids, probe_ids, node_ids, peer_ids) -> None:
    path = f"events[{i}].args"
    if action in ("fail_link", "restore_link"):
        lid = args.get("link")
        if lid not in link_ids and not (isinstance(lid, str)
                                        and lid.startswith("core:")
                                        and lid[5:] in peer_ids):
            raise ConfigError(f"{path}.link", f"unknown link {lid!r}")
    elif action in ("enable_bras", "disable_bras"):
        if args.get("bras") not in bras_ids:
            raise ConfigError(f"{path}.bras", f"unknown bras {args.get('bras')!r}")
    elif action == "send_padi":
        if args.get("customer") not in cust_ids:
            raise ConfigError(f"{path}.customer",
                              f"unknown customer {args.get('customer')!r}")
    elif action in ("start_probe", "stop_probe"):
        if args.get("probe") not in probe_ids:
            raise ConfigError(f"{path}.probe",
                              f"unknown probe {args.get('probe')!r}")
    elif action == "create_pw":
        for side in ("a", "b"):
            spec = args.get(side)
            if not (isinstance(spec, list) and len(spec) == 2
                    and spec[0] in node_ids):
                raise ConfigError(f"{path}.{side}", "expected [node, port]")
    elif action == "setup_e2e_lsp":
        if args.get("head") not in node_ids:
            raise ConfigError(f"{path}.head",
                              f"unknown node {args.get('head')!r}")
        if args.get("peer") not in peer_ids:
            raise ConfigError(f"{path}.peer",
                              f"unknown peer {args.get('peer')!r}")
    elif action == "assert_metric":
        if not isinstance(args.get("metric"), str):
            raise ConfigError(f"{path}.metric", "required string")
        if args.get("op") not in ASSERT_OPS:
            raise ConfigError(f"{path}.op", f"one of {sorted(ASSERT_OPS)}")
        if not isinstance(args.get("value"), (int, float)):
            raise ConfigError(f"{path}.value", "required number")
