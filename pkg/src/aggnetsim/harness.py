"""Scenario runner: wiring, timed events, metrics, CSV/trace output.

Builds the network and the controller hierarchy from a validated
scenario, executes the event list, and reduces the run into a metrics
report whose rows are a pure function of (scenario bytes, seed).
Embedded assert_metric events make runs self-checking.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

from . import brasctl, ctlproto as cp, endpoints, packet as pk
from . import scenario as sc
from . import simnet, transportctl as tc

log = logging.getLogger(__name__)


@dataclass
class RunContext:
    engine: simnet.Engine
    net: simnet.Network
    controllers: dict
    node_ctl: dict
    steering: object = None
    nms: object = None
    bras_modules: dict = field(default_factory=dict)
    customers: dict = field(default_factory=dict)
    probes: dict = field(default_factory=dict)
    probe_specs: dict = field(default_factory=dict)
    peers: dict = field(default_factory=dict)
    assertions: list = field(default_factory=list)
    restore_batches: dict = field(default_factory=dict)  # tag -> (mods, last_t)
    mac_customer: dict = field(default_factory=dict)


@dataclass
class MetricsReport:
    seed: int
    config_hash: str
    rows: list            # (metric, subject, value)
    assertion_results: list  # (ok, description)

    def value(self, metric: str, subject: str):
        for m, s, v in self.rows:
            if m == metric and s == subject:
                return v
        return None

    @property
    def ok(self) -> bool:
        return all(ok for ok, _ in self.assertion_results)


def build_network(scn: sc.Scenario, engine: simnet.Engine) -> RunContext:
    """Instantiate switches, links, endpoints, controllers and channels."""
    net = simnet.Network(engine)
    node_index = {n["id"]: i for i, n in enumerate(scn.nodes)}
    processing = {n["id"]: n["processing"] for n in scn.nodes}
    for n in scn.nodes:
        net.add_switch(n["id"], node_index[n["id"]], n["processing"])
    weights = {}
    for l in scn.links:
        net.add_link(simnet.Link(link_id=l["id"], a=l["a"], b=l["b"],
                                 delay_us=l["delay_us"], weight=l["weight"]))
        u, v = l["a"][0], l["b"][0]
        weights[(u, v) if u <= v else (v, u)] = l["weight"]

    ctx = RunContext(engine=engine, net=net, controllers={}, node_ctl={})
    ctx.mac_customer = {}

    peers = {}
    for p in scn.core_peers:
        peer = endpoints.CorePeer(engine, p["id"], echo=p["echo"])
        peers[p["id"]] = peer
        net.add_endpoint(peer.data)
        net.add_link(simnet.Link(link_id=f"core:{p['id']}", a=p["attach"],
                                 b=(peer.data.name, 1),
                                 delay_us=p["delay_us"]))
    ctx.peers = peers

    for c in scn.controllers:
        border = {p["id"]: p["attach"] for p in scn.core_peers
                  if p["attach"][0] in c["domain"]}
        ctl = tc.TransportController(
            engine, c["id"], c["domain"], node_index, weights, border=border,
            quiesce_us=scn.discovery_quiet_us, processing=processing)
        ctl.oam_interval_us = scn.oam["interval_us"]
        ctl.oam_k = scn.oam["k"]
        ctx.controllers[c["id"]] = ctl
        for node in c["domain"]:
            chan = net.add_channel(simnet.Channel(
                engine, f"sw:{node}", net.switches[node], ctl,
                latency_us=c["latency_us"],
                per_message_proc_us=c["per_message_proc_us"], kind="switch"))
            net.switches[node].channel = chan
            ctl.wire_switch(node, chan)
            ctx.node_ctl[node] = ctl
        for pid, attach in sorted(border.items()):
            pcfg = next(p for p in scn.core_peers if p["id"] == pid)
            chan = net.add_channel(simnet.Channel(
                engine, f"core:{c['id']}:{pid}", ctl, peers[pid],
                latency_us=pcfg["latency_us"],
                per_message_proc_us=pcfg["per_message_proc_us"], kind="core"))
            ctl.wire_core_peer(pid, chan)
        engine.schedule(0, lambda now, c=ctl: c.start())

    for cust in scn.customers:
        ep = endpoints.Customer(engine, cust["id"], pk.mac(cust["mac"]))
        net.add_endpoint(ep)
        net.add_link(simnet.Link(link_id=f"drop:{cust['id']}",
                                 a=(cust["node"], cust["port"]),
                                 b=(cust["id"], 1), delay_us=1))
        ctx.customers[cust["id"]] = ep
        ctx.mac_customer[cust["mac"].lower()] = cust["id"]

    for i, p in enumerate(scn.probes):
        eth_dst = bytes([0x0A, 0, 0, 0, (i >> 8) & 255, i & 255])
        if p["kind"] == "oneway":
            probe = simnet.ProbeFlow(probe_id=p["id"], src=p["src"],
                                     sink=p["sink"], period_us=p["period_us"],
                                     eth_dst=eth_dst)
            src_ep = endpoints.ProbeSource(engine, f"probe:{p['id']}:src")
            sink_ep = endpoints.ProbeSink(engine, f"probe:{p['id']}:sink",
                                          net.probes)
            net.add_endpoint(src_ep)
            net.add_endpoint(sink_ep)
            net.add_link(simnet.Link(link_id=f"probe:{p['id']}:src",
                                     a=p["src"], b=(src_ep.name, 1),
                                     delay_us=1))
            net.add_link(simnet.Link(link_id=f"probe:{p['id']}:sink",
                                     a=p["sink"], b=(sink_ep.name, 1),
                                     delay_us=1))
        else:
            probe = simnet.ProbeFlow(probe_id=p["id"], src=("", 0),
                                     sink=("", 0), period_us=p["period_us"],
                                     eth_dst=eth_dst)
        net.probes[p["id"]] = probe
        ctx.probes[p["id"]] = probe
        ctx.probe_specs[p["id"]] = p

    if scn.bras is not None:
        _wire_bras(scn, ctx)

    hook_state = ctx.restore_batches

    def on_applied(node: str, tag: str | None, at: int) -> None:
        if tag and tag.startswith("restore:"):
            count, _ = hook_state.get(tag, (0, 0))
            hook_state[tag] = (count + 1, at)

    engine.on_flow_applied(on_applied)
    return ctx


def _wire_bras(scn: sc.Scenario, ctx: RunContext) -> None:
    engine, net = ctx.engine, ctx.net
    bras = scn.bras
    gateway_peer = bras["gateway_peer"]
    allow = bras.get("allow_list")
    allow_set = {pk.mac(m) for m in allow} if allow else None
    steering = brasctl.SteeringModule(engine, gateway_peer,
                                      allow_list=allow_set)
    ctx.steering = steering
    ctx.nms = brasctl.Nms(steering)

    host_ctl = None
    vs_ports = {}
    names = {}
    for i, cust in enumerate(scn.customers):
        vp = i + 1
        vs_ports[vp] = (cust["node"], cust["port"])
        names[vp] = cust["id"]
        steering.vs_ports[vp] = (cust["node"], cust["port"])
    for d in bras["descriptors"]:
        host_ctl = ctx.node_ctl[d["host"]]
    ctl = host_ctl or next(iter(ctx.controllers.values()))
    chan = net.add_channel(simnet.Channel(engine, "ctl:steering", steering,
                                          ctl, kind="ctl"))
    steering.transport_chan = chan
    if vs_ports:
        ctl.register_client("steering", chan, vs_ports, names,
                            match_fields={"ethertype", "eth_dst"})
    for d in bras["descriptors"]:
        module = brasctl.BrasModule(engine, d["id"], d["host"], bras["pool"])
        ctx.bras_modules[d["id"]] = module
        mctl = ctx.node_ctl[d["host"]]
        m_chan = net.add_channel(simnet.Channel(
            engine, f"ctl:bras:{d['id']}", module, mctl, kind="ctl"))
        module.transport_chan = m_chan
        mctl.register_client(
            d["id"], m_chan, {1: (d["host"], None)}, {1: "host"},
            match_fields={"ethertype", "eth_dst", "pppoe_session",
                          "ppp_proto", "ipv4_dst"})
        s_chan = net.add_channel(simnet.Channel(
            engine, f"steer:{d['id']}", steering, module, kind="ctl"))
        module.steering_chan = s_chan
        steering.add_descriptor(
            brasctl.BrasDescriptor(bras_id=d["id"], host=d["host"],
                                   priority=d["priority"]), s_chan)


def _exec_event(ctx: RunContext, action: str, args: dict, now: int) -> None:
    net = ctx.net
    if action == "fail_link":
        net.fail_link(args["link"])
    elif action == "restore_link":
        net.restore_link(args["link"])
    elif action == "enable_bras":
        ctx.nms.enable_bras(args["bras"])
    elif action == "disable_bras":
        ctx.nms.disable_bras(args["bras"])
    elif action == "send_padi":
        ctx.customers[args["customer"]].send_padi(now)
    elif action == "start_probe":
        _start_probe(ctx, args["probe"], now)
    elif action == "stop_probe":
        net.stop_probe(args["probe"])
    elif action == "create_pw":
        a_node = args["a"][0]
        ctx.node_ctl[a_node].svc_dispatch("create_pw", args)
    elif action == "setup_e2e_lsp":
        head = args["head"]
        e2e_args = {"e2e_id": args.get("e2e_id", f"e2e:{head}:{args['peer']}"),
                    "head": head, "peer": args["peer"]}
        ctx.node_ctl[head].svc_dispatch("setup_e2e", e2e_args)
    elif action == "assert_metric":
        ctx.assertions.append(args)


def _start_probe(ctx: RunContext, probe_id: str, now: int) -> None:
    spec = ctx.probe_specs[probe_id]
    probe = ctx.probes[probe_id]
    if spec["kind"] == "echo":
        cust = ctx.customers[spec["customer"]]
        cust.start_echo(probe, pk.ipv4_int(spec["echo_dst"]), now)
        return
    transport = spec["transport"]
    if transport in ("none", "pw"):
        ctx.net.start_probe(probe, now)
        return
    ctl = ctx.node_ctl[spec["src"][0]]

    def ready(ok: bool, result: dict, error: str) -> None:
        if ok:
            ctx.net.start_probe(probe, ctx.engine.now_us)
        else:
            ctx.engine.record("probe_flow_failed", probe_id, error=error)

    ctl.svc_dispatch("flow_create",
                     {"flow_id": f"flow:{probe_id}", "ingress": spec["src"],
                      "egress": spec["sink"], "eth_dst": probe.eth_dst,
                      "transport": transport},
                     reply_to=(ready, 0))


def execute_scenario(scn: sc.Scenario, seed: int = 0,
                     full_trace: bool = False) -> tuple:
    engine = simnet.Engine(seed)
    engine.full_trace = full_trace
    ctx = build_network(scn, engine)
    for ev in scn.events:
        engine.schedule(ev["at_us"],
                        lambda now, e=ev: _exec_event(ctx, e["action"],
                                                      e["args"], now))
    engine.run_until(scn.horizon_us)
    report = _reduce_metrics(scn, ctx)
    return report, ctx


def run_scenario(scn: sc.Scenario, seed: int = 0,
                 full_trace: bool = False) -> MetricsReport:
    report, _ = execute_scenario(scn, seed, full_trace)
    return report


# --- metrics -------------------------------------------------------------------

def _gap_bounds(probe: simnet.ProbeFlow):
    """(gap_us, t_before, t_after) of the widest seq-skipping silence."""
    worst = (0, 0, 0)
    for (s0, t0), (s1, t1) in zip(probe.rx_log, probe.rx_log[1:]):
        if s1 > s0 + 1 and (t1 - t0) - probe.period_us > worst[0]:
            worst = ((t1 - t0) - probe.period_us, t0, t1)
    return worst


def _reduce_metrics(scn: sc.Scenario, ctx: RunContext) -> MetricsReport:
    rows: list = []
    engine, net = ctx.engine, ctx.net

    fail_times = {}
    for rec in engine.trace:
        if rec.kind == "link_fail" and rec.node not in fail_times:
            fail_times[rec.node] = rec.at_us
    first_fail = min(fail_times.values()) if fail_times else None

    switch_names = set(net.switches)
    for pid in sorted(ctx.probes):
        probe = ctx.probes[pid]
        rows.append(("probe_rx", pid, len(probe.rx_log)))
        if len(probe.rx_log) >= 2:
            gap, t0, t1 = _gap_bounds(probe)
            rows.append(("probe_gap", pid, gap))
            if gap > 0 and first_fail is not None:
                count = 0
                for chan in net.channels.values():
                    if chan.kind != "switch":
                        continue
                    for send_at, toward, _ in chan.msg_log:
                        if toward in switch_names \
                                and first_fail < send_at + chan.latency_us < t1:
                            count += 1
                rows.append(("ctl_to_switch_in_gap", pid, count))

    for cid in sorted(net.channels):
        rows.append(("chan_msgs", cid, net.channels[cid].count))

    # restoration completion per failed edge, from the apply hook
    edge_fail = {}
    for lid, t in fail_times.items():
        ends = scn.link_ports.get(lid)
        if ends:
            u, v = sorted((ends[0][0], ends[1][0]))
            edge_fail[f"{u}-{v}"] = t
    for tag in sorted(ctx.restore_batches):
        mods, last_t = ctx.restore_batches[tag]
        edge = tag.split(":", 1)[1]
        rows.append(("restore_mods", edge, mods))
        if edge in edge_fail:
            rows.append(("restore_time", edge, last_t - edge_fail[edge]))

    opens_by_cust: dict = {}
    opens_by_bras: dict = {}
    for rec in engine.trace:
        if rec.kind == "session_open":
            bras_id = rec.node.split(":", 1)[1]
            opens_by_bras[bras_id] = opens_by_bras.get(bras_id, 0) + 1
            cust = ctx.mac_customer.get(rec.detail["mac"].lower())
            if cust:
                opens_by_cust[cust] = opens_by_cust.get(cust, 0) + 1
    for cust in sorted(opens_by_cust):
        rows.append(("session_open_count", cust, opens_by_cust[cust]))
    for bras_id in sorted(opens_by_bras):
        rows.append(("session_via", bras_id, opens_by_bras[bras_id]))

    for cid in sorted(net.channels):
        chan = net.channels[cid]
        if chan.kind != "core":
            continue
        advert_t = None
        for send_at, _, kind in chan.msg_log:
            if kind == "DomainAdvert":
                advert_t = send_at
                break
        count = sum(1 for send_at, _, _ in chan.msg_log
                    if advert_t is not None and send_at > advert_t)
        if advert_t is None:
            count = len(chan.msg_log)
        rows.append(("core_msgs_after_advert", cid.split(":")[-1], count))

    results = []
    lookup = {(m, s): v for m, s, v in rows}
    ops = {"lt": lambda a, b: a < b, "le": lambda a, b: a <= b,
           "gt": lambda a, b: a > b, "ge": lambda a, b: a >= b,
           "eq": lambda a, b: a == b, "ne": lambda a, b: a != b}
    for a in ctx.assertions:
        key = (a["metric"], a.get("subject", ""))
        desc = f"{a['metric']}[{a.get('subject', '')}] {a['op']} {a['value']}"
        if key not in lookup:
            results.append((False, f"{desc}: metric missing"))
            continue
        got = lookup[key]
        ok = ops[a["op"]](got, a["value"])
        results.append((ok, f"{desc}: got {got}"))

    return MetricsReport(seed=ctx.engine.seed, config_hash=scn.config_hash,
                         rows=sorted(rows), assertion_results=results)


def emit_csv(report: MetricsReport, path: str) -> None:
    """Deterministic CSV: header plus rows sorted by (metric, subject)."""
    lines = ["metric,subject,value_us,seed,config_hash"]
    for metric, subject, value in sorted(report.rows):
        lines.append(f"{metric},{subject},{value},{report.seed},"
                     f"{report.config_hash}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def emit_trace(engine: simnet.Engine, path: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for rec in engine.trace:
            fh.write(json.dumps(rec.as_json_obj(), sort_keys=True,
                                ensure_ascii=True, separators=(",", ":")))
            fh.write("\n")
