"""Deterministic discrete-event engine: links, control channels, timers.

Events execute in (time, insertion-sequence) order, so a run is a pure
function of the scenario and the seed.  Times are integer microseconds.

Controllers are sequential reactors: each received message costs the
channel's per-message processing time before its handler runs, and each
message a handler sends costs the same before it enters the channel.
That serialization is what makes controller-driven restoration scale
linearly with the number of affected flows, while switches send and
receive at zero cost.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import random
from collections import deque
from dataclasses import dataclass, field

from . import dataplane as dp
from . import packet as pk
from .packet import Packet

log = logging.getLogger(__name__)

DEFAULT_LINK_DELAY_US = 100
DEFAULT_CTL_LATENCY_US = 1000
DEFAULT_PER_MESSAGE_PROC_US = 100
DEFAULT_CC_INTERVAL_US = 3333
DEFAULT_CC_K = 3


class UnknownLink(Exception):
    pass


class NoTraffic(Exception):
    """A probe log too short to bound a silence interval."""


@dataclass
class TraceRecord:
    at_us: int
    kind: str
    node: str
    detail: dict

    def as_json_obj(self) -> dict:
        return {"at_us": self.at_us, "kind": self.kind, "node": self.node,
                "detail": self.detail}


@dataclass
class Link:
    link_id: str
    a: tuple  # (node_id, port)
    b: tuple
    delay_us: int = DEFAULT_LINK_DELAY_US
    weight: int = 1
    up: bool = True
    fail_epoch: int = 0

    def other_end(self, node_id: str) -> tuple:
        if node_id == self.a[0]:
            return self.b
        if node_id == self.b[0]:
            return self.a
        raise UnknownLink(f"{node_id} not on {self.link_id}")


class Engine:
    """Event heap plus the shared clock; owns all scheduling."""

    def __init__(self, seed: int = 0):
        self.now_us = 0
        self.seed = seed
        self.rng = random.Random(seed)
        self._heap: list = []
        self._seq = itertools.count()
        self.trace: list[TraceRecord] = []
        self.full_trace = False
        self.counters = {"emitted": 0, "delivered": 0, "lost": 0,
                         "pipeline_dropped": 0}
        self._apply_hooks: list = []

    def schedule(self, at_us: int, fn, *args) -> None:
        if at_us < self.now_us:
            raise ValueError(f"event in the past: {at_us} < {self.now_us}")
        heapq.heappush(self._heap, (at_us, next(self._seq), fn, args))

    def run_until(self, t_us: int) -> None:
        if t_us < self.now_us:
            raise ValueError("horizon before current clock")
        while self._heap and self._heap[0][0] <= t_us:
            at, _, fn, args = heapq.heappop(self._heap)
            self.now_us = at
            fn(at, *args)
        self.now_us = t_us

    def record(self, kind: str, node: str, **detail) -> None:
        self.trace.append(TraceRecord(self.now_us, kind, node, detail))

    def record_event(self, kind: str, node: str, **detail) -> None:
        """High-volume records kept only when full tracing is requested."""
        if self.full_trace:
            self.record(kind, node, **detail)

    def on_flow_applied(self, fn) -> None:
        self._apply_hooks.append(fn)

    def notify_flow_applied(self, node: str, tag: str | None) -> None:
        for fn in self._apply_hooks:
            fn(node, tag, self.now_us)


class Channel:
    """Point-to-point FIFO control channel between two entities."""

    def __init__(self, engine: Engine, chan_id: str, end_a, end_b,
                 latency_us: int = DEFAULT_CTL_LATENCY_US,
                 per_message_proc_us: int = DEFAULT_PER_MESSAGE_PROC_US,
                 kind: str = "ctl"):
        self.engine = engine
        self.chan_id = chan_id
        self.end_a = end_a
        self.end_b = end_b
        self.latency_us = latency_us
        self.per_message_proc_us = per_message_proc_us
        self.kind = kind
        self.count = 0
        self.msg_log: list[tuple[int, str, str]] = []  # (at, toward, kind)

    def other(self, end):
        return self.end_b if end is self.end_a else self.end_a

    def transmit(self, sender, msg, send_at: int) -> None:
        receiver = self.other(sender)
        self.count += 1
        self.msg_log.append((send_at, getattr(receiver, "name", "?"),
                             type(msg).__name__))
        self.engine.schedule(send_at + self.latency_us,
                             self._deliver, receiver, msg)

    def _deliver(self, now: int, receiver, msg) -> None:
        self.engine.record_event("chan_deliver", getattr(receiver, "name", "?"),
                                 chan=self.chan_id, msg=type(msg).__name__)
        receiver.receive_message(self, msg, now)


class Reactor:
    """Base for sequential control entities (controllers, peers, modules)."""

    def __init__(self, engine: Engine, name: str):
        self.engine = engine
        self.name = name
        self.busy_until = 0
        self._queue: deque = deque()
        self._pump_armed = False

    # -- receiving --

    def receive_message(self, chan: Channel, msg, now: int) -> None:
        self._queue.append((chan, msg))
        self._pump(now)

    def _pump(self, now: int) -> None:
        if self._pump_armed or not self._queue:
            return
        chan, _ = self._queue[0]
        completes = max(now, self.busy_until) + chan.per_message_proc_us
        self.busy_until = completes
        self._pump_armed = True
        self.engine.schedule(completes, self._run_head)

    def _run_head(self, now: int) -> None:
        self._pump_armed = False
        chan, msg = self._queue.popleft()
        self.handle_message(chan, msg, now)
        self._pump(now)

    def handle_message(self, chan: Channel, msg, now: int) -> None:
        raise NotImplementedError

    # -- sending --

    def send(self, chan: Channel, msg) -> None:
        t = max(self.engine.now_us, self.busy_until) + chan.per_message_proc_us
        self.busy_until = t
        chan.transmit(self, msg, t)

    def schedule_after(self, delay_us: int, token) -> None:
        self.engine.schedule(self.engine.now_us + delay_us,
                             self._on_timer, token)

    def _on_timer(self, now: int, token) -> None:
        self.on_timer(token, now)

    def on_timer(self, token, now: int) -> None:
        pass


class SwitchHost:
    """Engine adapter around a SwitchState: wires ports to links, routes
    pipeline effects, runs logical-port timers; zero-cost message handling."""

    def __init__(self, engine: Engine, state: dp.SwitchState):
        self.engine = engine
        self.state = state
        self.name = state.node_id
        self.links: dict[int, Link] = {}
        self.channel: Channel | None = None
        self.controller = None

    # -- wiring --

    def attach_link(self, port: int, link: Link) -> None:
        self.state.add_port(port, link.link_id)
        self.links[port] = link

    # -- data plane --

    def inject(self, port: int, p: Packet, now: int) -> None:
        st = self.state.ports.get(port)
        if st is None or not st.up:
            self.engine.counters["lost"] += 1
            self.engine.record_event("drop", self.name, reason="port_down_rx",
                                     port=port)
            return
        st.rx_packets += 1
        self.engine.counters["delivered"] += 1
        self.engine.record_event("pkt_arrival", self.name, port=port)
        effects = self.state.process_packet(port, p, now)
        self.apply_effects(effects, now)

    def apply_effects(self, effects: list, now: int) -> None:
        for fx in effects:
            if isinstance(fx, dp.Emit):
                self._emit(fx.port, fx.packet, now)
            elif isinstance(fx, dp.PacketIn):
                self._packet_in(fx, now)
            elif isinstance(fx, dp.Deliver):
                self._deliver_lp(fx.logical_port, fx.packet, now)
            elif isinstance(fx, dp.Drop):
                self.engine.counters["pipeline_dropped"] += 1
                self.engine.record_event("drop", self.name, reason=fx.reason)

    def _emit(self, port: int, p: Packet, now: int) -> None:
        link = self.links.get(port)
        if link is None or not link.up:
            self.engine.counters["pipeline_dropped"] += 1
            self.engine.record_event("drop", self.name, reason="no_link",
                                     port=port)
            return
        self.engine.counters["emitted"] += 1
        peer_node, peer_port = link.other_end(self.name)
        epoch = link.fail_epoch
        net = self.engine._network
        self.engine.schedule(now + link.delay_us, net._arrive,
                             link, epoch, peer_node, peer_port, p)

    def _packet_in(self, fx: dp.PacketIn, now: int) -> None:
        if self.channel is None:
            self.engine.record_event("drop", self.name, reason="no_controller")
            return
        from .ctlproto import PacketInMsg
        self.send_message(PacketInMsg(packet=fx.packet, in_port=fx.in_port,
                                      reason=fx.reason), now)

    def send_message(self, msg, now: int) -> None:
        self.channel.transmit(self, msg, now)

    def _deliver_lp(self, lp_id: int, p: Packet, now: int) -> None:
        lp = self.state.logical_ports.get(lp_id)
        if lp is None:
            self.engine.record_event("drop", self.name, reason="unknown_lp")
            return
        kind = lp.kind
        try:
            if isinstance(kind, dp.OamSink):
                self.apply_effects(self.state.oam_on_receive(lp_id, p, now), now)
            elif isinstance(kind, dp.PwEndpoint):
                self._pw_handoff(lp_id, kind, p, now)
            elif isinstance(kind, dp.IpOverEthernet):
                rewritten, underlay = dp.lp_process(self.state, lp_id,
                                                    "egress", p)
                self._via_underlay(underlay, rewritten, now)
            else:
                self.engine.record_event("drop", self.name,
                                         reason="lp_no_handler")
        except (dp.DecapMismatch, dp.MegMismatch, pk.TruncatedFrame) as exc:
            self.engine.counters["pipeline_dropped"] += 1
            self.engine.record("drop", self.name, reason=type(exc).__name__,
                               lp=lp_id)

    def _pw_handoff(self, lp_id: int, kind: dp.PwEndpoint, p: Packet,
                    now: int) -> None:
        if p.mpls and p.mpls[0].label == kind.pw_label_in:
            inner, attachment = dp.lp_process(self.state, lp_id, "ingress", p)
            if attachment == ("pipeline",):
                self.apply_effects(self.state.process_packet(lp_id, inner, now),
                                   now)
            else:
                self.apply_effects([dp.Emit(attachment[1], inner)], now)
        else:
            wrapped, tunnel = dp.lp_process(self.state, lp_id, "egress", p)
            self._via_underlay(tunnel, wrapped, now)

    def _via_underlay(self, underlay: tuple, p: Packet, now: int) -> None:
        if underlay[0] == "group":
            group = self.state.groups.get(underlay[1])
            if group is None:
                self.engine.record_event("drop", self.name,
                                         reason="unknown_group")
                return
            effects: list = []
            try:
                idx = self.state.select_ff_bucket(group)
            except dp.NoLiveBucket:
                self.engine.counters["pipeline_dropped"] += 1
                self.engine.record("drop", self.name, reason="no_live_bucket")
                self._packet_in(dp.PacketIn("no_live_bucket", p, 0), now)
                return
            out = self.state._run_actions(group.buckets[idx].actions, p,
                                          0, effects)
            self.apply_effects(effects, now)
        else:
            self.apply_effects([dp.Emit(underlay[1], p)], now)

    # -- control messages (switch side: zero-cost) --

    def receive_message(self, chan: Channel, msg, now: int) -> None:
        from . import ctlproto as cp
        if isinstance(msg, cp.FlowModMsg):
            try:
                self.state.apply_flow_mod(msg.op, msg.entry)
                self.engine.record("flow_applied", self.name,
                                   table=msg.entry.table_id, tag=msg.tag)
                self.engine.notify_flow_applied(self.name, msg.tag)
            except (dp.UnknownGroup, dp.UnknownPort, ValueError) as exc:
                self.send_message(cp.ErrorMsg(code=type(exc).__name__,
                                              context=str(exc)), now)
        elif isinstance(msg, cp.GroupModMsg):
            try:
                self.state.apply_group_mod(msg.op, msg.group)
                self.engine.record_event("group_applied", self.name,
                                         group=msg.group.group_id)
                self.engine.notify_flow_applied(self.name, msg.tag)
            except (dp.UnknownPort, ValueError) as exc:
                self.send_message(cp.ErrorMsg(code=type(exc).__name__,
                                              context=str(exc)), now)
        elif isinstance(msg, cp.PortModMsg):
            self._port_mod(msg, now)
        elif isinstance(msg, cp.PacketOutMsg):
            if msg.out_port is not None:
                if msg.out_port in self.state.logical_ports:
                    self._deliver_lp(msg.out_port, msg.packet, now)
                else:
                    self.apply_effects([dp.Emit(msg.out_port, msg.packet)], now)
            else:
                effects: list = []
                out = self.state._run_actions(msg.actions or [], msg.packet,
                                              0, effects)
                self.apply_effects(effects, now)
        elif isinstance(msg, cp.FeaturesRequest):
            ports = sorted(self.state.ports)
            self.send_message(cp.FeaturesReply(
                datapath_id=self.state.node_index,
                ports=[cp.PortDesc(p, f"p{p}") for p in ports]), now)
        elif isinstance(msg, cp.Hello):
            pass
        else:
            self.send_message(cp.ErrorMsg(code="unsupported",
                                          context=type(msg).__name__), now)

    def _port_mod(self, msg, now: int) -> None:
        from . import ctlproto as cp
        if msg.op == "delete":
            self.state.detach_logical_port(msg.lp_id)
            return
        try:
            lp_id = self.state.attach_logical_port(msg.kind)
        except dp.ProcessingUnsupported as exc:
            self.send_message(cp.ErrorMsg(code="ProcessingUnsupported",
                                          context=str(exc)), now)
            return
        if isinstance(msg.kind, dp.OamSource):
            self._arm_source(lp_id, now)
        elif isinstance(msg.kind, dp.OamSink):
            msg.kind.last_rx_us = now
            self._arm_sink(lp_id, now)
        if msg.reply_to is not None:
            msg.reply_to(self.name, msg.token, lp_id, now)

    def _arm_source(self, lp_id: int, now: int) -> None:
        def fire(at: int) -> None:
            lp = self.state.logical_ports.get(lp_id)
            if lp is None:
                return
            self.apply_effects(self.state.oam_emit_cc(lp_id, at), at)
            self.engine.schedule(at + lp.kind.interval_us,
                                 lambda t: fire(t))
        fire(now)

    def _arm_sink(self, lp_id: int, now: int) -> None:
        def tick(at: int) -> None:
            lp = self.state.logical_ports.get(lp_id)
            if lp is None:
                return
            fx = self.state.oam_on_tick(lp_id, at)
            if fx:
                self.engine.record("oam_loc", self.name,
                                   meg=lp.kind.meg_id)
            self.apply_effects(fx, at)
            self.engine.schedule(at + lp.kind.interval_us,
                                 lambda t: tick(t))
        self.engine.schedule(now + self.state.logical_ports[lp_id].kind.interval_us,
                             lambda t: tick(t))


class Endpoint:
    """Non-switch attachment (customer CPE, probe tap, core-peer data side)."""

    def __init__(self, engine: Engine, name: str):
        self.engine = engine
        self.name = name
        self.link: Link | None = None
        self.port_up = True

    def attach(self, link: Link) -> None:
        self.link = link

    def send(self, p: Packet, now: int) -> None:
        if self.link is None or not self.link.up:
            self.engine.record_event("drop", self.name, reason="endpoint_down")
            return
        self.engine.counters["emitted"] += 1
        peer_node, peer_port = self.link.other_end(self.name)
        self.engine.schedule(now + self.link.delay_us,
                             self.engine._network._arrive,
                             self.link, self.link.fail_epoch,
                             peer_node, peer_port, p)

    def inject(self, port: int, p: Packet, now: int) -> None:
        self.engine.counters["delivered"] += 1
        self.on_packet(p, now)

    def on_packet(self, p: Packet, now: int) -> None:
        pass


@dataclass
class ProbeFlow:
    """Measurement flow: periodic sequenced frames plus a reception log."""

    probe_id: str
    src: tuple
    sink: tuple
    period_us: int
    eth_dst: bytes = b"\x0a\x00\x00\x00\x00\x00"
    next_seq: int = 0
    rx_log: list = field(default_factory=list)  # (seq, at_us)
    running: bool = False


def measure_gap(probe: ProbeFlow) -> int:
    """Largest reception silence attributable to loss, in microseconds.

    Returns (t_after - t_before) - period over the widest gap where
    sequence numbers were skipped; 0 when no sequence number is missing.
    """
    if len(probe.rx_log) < 2:
        raise NoTraffic(f"probe {probe.probe_id} has {len(probe.rx_log)} rx")
    worst = 0
    for (s0, t0), (s1, t1) in zip(probe.rx_log, probe.rx_log[1:]):
        if s1 > s0 + 1:
            worst = max(worst, (t1 - t0) - probe.period_us)
    return worst


class Network:
    """Nodes, links and channels bound to one engine instance."""

    def __init__(self, engine: Engine):
        self.engine = engine
        engine._network = self
        self.switches: dict[str, SwitchHost] = {}
        self.endpoints: dict[str, Endpoint] = {}
        self.links: dict[str, Link] = {}
        self.channels: dict[str, Channel] = {}
        self.probes: dict[str, ProbeFlow] = {}

    # -- construction --

    def add_switch(self, node_id: str, node_index: int,
                   processing: bool = False) -> SwitchHost:
        host = SwitchHost(self.engine, dp.SwitchState(node_id, node_index,
                                                      processing))
        self.switches[node_id] = host
        return host

    def add_endpoint(self, ep: Endpoint) -> Endpoint:
        self.endpoints[ep.name] = ep
        return ep

    def node(self, node_id: str):
        if node_id in self.switches:
            return self.switches[node_id]
        if node_id in self.endpoints:
            return self.endpoints[node_id]
        raise KeyError(f"unknown node {node_id!r}")

    def add_link(self, link: Link) -> Link:
        self.links[link.link_id] = link
        for node_id, port in (link.a, link.b):
            n = self.node(node_id)
            if isinstance(n, SwitchHost):
                n.attach_link(port, link)
            else:
                n.attach(link)
        return link

    def add_channel(self, chan: Channel) -> Channel:
        self.channels[chan.chan_id] = chan
        return chan

    # -- delivery --

    def _arrive(self, now: int, link: Link, epoch: int, node_id: str,
                port: int, p: Packet) -> None:
        if not link.up or link.fail_epoch != epoch:
            self.engine.counters["lost"] += 1
            self.engine.record_event("drop", node_id, reason="link_cut",
                                     link=link.link_id)
            return
        self.node(node_id).inject(port, p, now)

    # -- failure injection --

    def fail_link(self, link_id: str, now: int | None = None) -> None:
        link = self.links.get(link_id)
        if link is None:
            raise UnknownLink(link_id)
        if not link.up:
            return
        now = self.engine.now_us if now is None else now
        link.up = False
        link.fail_epoch += 1
        self.engine.record("link_fail", link.link_id)
        for node_id, port in (link.a, link.b):
            self._port_status(node_id, port, up=False, now=now)

    def restore_link(self, link_id: str, now: int | None = None) -> None:
        link = self.links.get(link_id)
        if link is None:
            raise UnknownLink(link_id)
        if link.up:
            return
        now = self.engine.now_us if now is None else now
        link.up = True
        self.engine.record("link_restore", link.link_id)
        for node_id, port in (link.a, link.b):
            self._port_status(node_id, port, up=True, now=now)

    def _port_status(self, node_id: str, port: int, up: bool, now: int) -> None:
        n = self.node(node_id)
        if isinstance(n, SwitchHost):
            st = n.state.ports.get(port)
            if st is not None:
                st.up = up
            if n.channel is not None:
                from .ctlproto import PortStatus
                n.send_message(PortStatus(port=port, up=up), now)
        else:
            n.port_up = up

    # -- probes --

    def start_probe(self, probe: ProbeFlow, now: int) -> None:
        if probe.running:
            return
        probe.running = True
        self.probes[probe.probe_id] = probe
        src_ep = self.endpoints[f"probe:{probe.probe_id}:src"]

        def fire(at: int) -> None:
            if not probe.running:
                return
            seq = probe.next_seq
            probe.next_seq += 1
            frame = Packet(
                eth=pk.EthernetHeader(probe.eth_dst,
                                      b"\x0a\xee" + b"\x00" * 4, pk.ETH_RAW),
                payload=probe.probe_id.encode() + b"|" + seq.to_bytes(8, "big"))
            src_ep.send(frame, at)
            self.engine.schedule(at + probe.period_us, lambda t: fire(t))

        fire(now)

    def stop_probe(self, probe_id: str) -> None:
        if probe_id in self.probes:
            self.probes[probe_id].running = False
