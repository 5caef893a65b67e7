"""Simulated switch: flow tables, fast-failover groups, logical ports.

The pipeline is a plain match-action walk over numbered tables.  A table
miss in table 0 punts to the controller; processing functions (PPPoE, PW,
IP-over-Ethernet, OAM) live behind logical ports whose ids start at
0x10000 so they never collide with physical ports.  OAM continuity
checking runs entirely inside the switch: a source logical port injects
template packets into the pipeline, a sink logical port tracks receptions
and flips its liveness flag, and fast-failover buckets watch either
physical ports or those sinks.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field, replace

from . import packet as pk
from .packet import Packet

log = logging.getLogger(__name__)

LOGICAL_PORT_BASE = 0x10000

TABLE_TRANSPORT = 0
TABLE_DEMUX = 1
TABLE_SERVICE = 2

MATCH_FIELDS = ("in_port", "eth_dst", "ethertype", "vlan_vid",
                "mpls_label", "mpls_bos", "pppoe_session", "ppp_proto",
                "ipv4_dst")


class UnknownGroup(Exception):
    pass


class UnknownPort(Exception):
    pass


class NoLiveBucket(Exception):
    pass


class MegMismatch(Exception):
    pass


class ProcessingUnsupported(Exception):
    pass


class DecapMismatch(Exception):
    pass


# --- actions ---------------------------------------------------------------

@dataclass(frozen=True)
class Output:
    port: int


@dataclass(frozen=True)
class GroupAction:
    group_id: int


@dataclass(frozen=True)
class PushMpls:
    label: int
    tc: int = 0
    ttl: int = 64


@dataclass(frozen=True)
class PopMpls:
    pass


@dataclass(frozen=True)
class SwapMpls:
    label: int


@dataclass(frozen=True)
class SetField:
    field: str
    value: object


@dataclass(frozen=True)
class PushPppoe:
    session_id: int


@dataclass(frozen=True)
class PopPppoe:
    pass


@dataclass(frozen=True)
class ToController:
    pass


# --- effects ---------------------------------------------------------------

@dataclass(frozen=True)
class Emit:
    port: int
    packet: Packet


@dataclass(frozen=True)
class PacketIn:
    reason: str
    packet: Packet
    in_port: int


@dataclass(frozen=True)
class Deliver:
    logical_port: int
    packet: Packet


@dataclass(frozen=True)
class Drop:
    reason: str
    packet: Packet


# --- flow table ------------------------------------------------------------

def match_key(match: dict) -> tuple:
    return tuple(sorted(match.items()))


@dataclass
class FlowEntry:
    table_id: int
    priority: int
    match: dict
    actions: list
    goto_table: int | None = None

    def key(self):
        return (self.priority, match_key(self.match))


@dataclass
class Bucket:
    watch: int           # physical or logical port id
    actions: list = field(default_factory=list)


@dataclass
class Group:
    group_id: int
    buckets: list  # of Bucket, ordered; kind is always fast-failover


# --- logical ports ----------------------------------------------------------

@dataclass
class PppoeTermination:
    """Customer-side PPP/PPPoE encapsulation function.

    sessions: session_id -> (customer mac, local mac, eth endpoint port).
    """
    sessions: dict = field(default_factory=dict)


@dataclass
class IpOverEthernet:
    next_hop_mac: bytes
    src_mac: bytes
    underlay: tuple  # ('group', id) | ('port', id)


@dataclass
class PwEndpoint:
    pw_id: str
    pw_label_out: int          # label the far end expects
    pw_label_in: int           # label we terminate
    tunnel: tuple              # ('group', id) | ('port', id)
    attachment: tuple          # ('port', id) | ('pipeline',)
    local_mac: bytes = b"\x02\x00\x00\x00\x00\x00"


@dataclass
class OamSource:
    meg_id: int
    interval_us: int
    template: Packet
    seq: int = 0


@dataclass
class OamSink:
    meg_id: int
    k_threshold: int
    interval_us: int
    last_rx_us: int = 0
    live: bool = True


PROCESSING_KINDS = (PppoeTermination, PwEndpoint, OamSource, OamSink)


@dataclass
class LogicalPort:
    port_id: int
    kind: object
    live: bool = True


@dataclass
class PortState:
    port_id: int
    up: bool = True
    link_id: str | None = None
    rx_packets: int = 0
    tx_packets: int = 0


class SwitchState:
    """One switch; mutated only by the hosting event loop."""

    def __init__(self, node_id: str, node_index: int, processing_capable: bool = False):
        self.node_id = node_id
        self.node_index = node_index
        self.processing_capable = processing_capable
        self.ports: dict[int, PortState] = {}
        self.tables: dict[int, dict] = {TABLE_TRANSPORT: {}, TABLE_DEMUX: {},
                                        TABLE_SERVICE: {}}
        self.groups: dict[int, Group] = {}
        self.logical_ports: dict[int, LogicalPort] = {}
        self._next_lp = LOGICAL_PORT_BASE

    # -- ports --

    def add_port(self, port_id: int, link_id: str | None = None) -> PortState:
        st = PortState(port_id=port_id, link_id=link_id)
        self.ports[port_id] = st
        return st

    def port_is_up(self, port_id: int) -> bool:
        if port_id in self.logical_ports:
            return self.logical_ports[port_id].live
        st = self.ports.get(port_id)
        return bool(st and st.up)

    def port_exists(self, port_id: int) -> bool:
        return port_id in self.ports or port_id in self.logical_ports

    # -- configuration --

    def attach_logical_port(self, kind) -> int:
        if isinstance(kind, PROCESSING_KINDS) and not self.processing_capable:
            raise ProcessingUnsupported(
                f"{type(kind).__name__} needs a processing-capable switch")
        port_id = self._next_lp
        self._next_lp += 1
        self.logical_ports[port_id] = LogicalPort(port_id=port_id, kind=kind)
        return port_id

    def detach_logical_port(self, port_id: int) -> None:
        self.logical_ports.pop(port_id, None)

    def apply_flow_mod(self, op: str, entry: FlowEntry) -> None:
        """Add/modify overwrite on identical (table, priority, match);
        delete is pattern-based and idempotent."""
        table = self.tables.setdefault(entry.table_id, {})
        if op in ("add", "modify"):
            self._check_refs(entry)
            table[entry.key()] = entry
        elif op == "delete":
            doomed = [k for k, e in table.items()
                      if self._pattern_matches(entry, e)]
            for k in doomed:
                del table[k]
        else:
            raise ValueError(f"unknown flow-mod op {op!r}")

    @staticmethod
    def _pattern_matches(pattern: FlowEntry, entry: FlowEntry) -> bool:
        if pattern.match and match_key(pattern.match) != match_key(entry.match):
            return False
        return True

    def _check_refs(self, entry: FlowEntry) -> None:
        for act in entry.actions:
            if isinstance(act, GroupAction) and act.group_id not in self.groups:
                raise UnknownGroup(f"group {act.group_id} at {self.node_id}")
            if isinstance(act, Output) and not self.port_exists(act.port):
                raise UnknownPort(f"port {act.port} at {self.node_id}")
        if entry.goto_table is not None and entry.goto_table <= entry.table_id:
            raise ValueError("goto_table must strictly increase")

    def apply_group_mod(self, op: str, group: Group) -> None:
        if op in ("add", "modify"):
            for b in group.buckets:
                if not self.port_exists(b.watch):
                    raise UnknownPort(f"watch {b.watch} at {self.node_id}")
            self.groups[group.group_id] = group
        elif op == "delete":
            self.groups.pop(group.group_id, None)
        else:
            raise ValueError(f"unknown group-mod op {op!r}")

    # -- pipeline --

    def select_ff_bucket(self, group: Group) -> int:
        """Index of the first bucket whose watched port is live."""
        for i, b in enumerate(group.buckets):
            if self.port_is_up(b.watch):
                return i
        raise NoLiveBucket(f"group {group.group_id} at {self.node_id}")

    def process_packet(self, in_port: int, p: Packet, now_us: int) -> list:
        """Run the match-action pipeline; total function returning effects."""
        effects: list = []
        table_id = TABLE_TRANSPORT
        work = p
        while True:
            entry = self._lookup(table_id, in_port, work)
            if entry is None:
                if table_id == TABLE_TRANSPORT:
                    effects.append(PacketIn("table_miss", work, in_port))
                else:
                    effects.append(Drop(f"miss_table_{table_id}", work))
                return effects
            work = self._run_actions(entry.actions, work, in_port, effects)
            if work is None or entry.goto_table is None:
                return effects
            table_id = entry.goto_table

    def _lookup(self, table_id: int, in_port: int, p: Packet):
        best = None
        for entry in self.tables.get(table_id, {}).values():
            if entry_matches(entry.match, in_port, p):
                if best is None or entry.priority > best.priority:
                    best = entry
        return best

    def _run_actions(self, actions, p: Packet, in_port: int, effects: list):
        """Apply an action list; returns the surviving packet or None if
        the packet left the pipeline (output/drop/controller)."""
        alive = p
        for act in actions:
            if isinstance(act, Output):
                self._output(act.port, alive, effects)
            elif isinstance(act, GroupAction):
                group = self.groups.get(act.group_id)
                if group is None:
                    effects.append(Drop("unknown_group", alive))
                    return None
                try:
                    idx = self.select_ff_bucket(group)
                except NoLiveBucket:
                    effects.append(Drop("no_live_bucket", alive))
                    effects.append(PacketIn("no_live_bucket", alive, in_port))
                    return None
                alive = self._run_actions(group.buckets[idx].actions, alive,
                                          in_port, effects)
                if alive is None:
                    return None
            elif isinstance(act, PushMpls):
                alive = pk.push_mpls(alive, act.label, act.tc, act.ttl)
            elif isinstance(act, PopMpls):
                alive = pk.pop_mpls(alive)
            elif isinstance(act, SwapMpls):
                alive = pk.swap_mpls(alive, act.label)
            elif isinstance(act, SetField):
                alive = set_field(alive, act.field, act.value)
            elif isinstance(act, PushPppoe):
                alive = push_pppoe_action(alive, act.session_id)
            elif isinstance(act, PopPppoe):
                alive = pop_pppoe_action(alive)
            elif isinstance(act, ToController):
                effects.append(PacketIn("action", alive, in_port))
                return None
            else:
                raise ValueError(f"unknown action {act!r}")
        return alive

    def _output(self, port: int, p: Packet, effects: list) -> None:
        if port in self.logical_ports:
            effects.append(Deliver(port, p))
            return
        st = self.ports.get(port)
        if st is None:
            effects.append(Drop("unknown_port", p))
        elif not st.up:
            effects.append(Drop("port_down", p))
        else:
            st.tx_packets += 1
            effects.append(Emit(port, p))

    # -- OAM ---------------------------------------------------------------

    def oam_emit_cc(self, lp_id: int, now_us: int) -> list:
        """Periodic CC emission: wrap the template under label 13 and run
        it through the pipeline from the source logical port."""
        lp = self.logical_ports[lp_id]
        src: OamSource = lp.kind
        payload = replace(src.template,
                          oam=replace(src.template.oam, seq=src.seq,
                                      src_node=self.node_index))
        src.seq += 1
        cc = pk.push_mpls(payload, pk.OAM_LABEL)
        return self.process_packet(lp_id, cc, now_us)

    def oam_on_receive(self, lp_id: int, p: Packet, now_us: int) -> list:
        lp = self.logical_ports[lp_id]
        sink: OamSink = lp.kind
        if p.oam is None or p.oam.meg_id != sink.meg_id:
            raise MegMismatch(
                f"sink meg {sink.meg_id} got {p.oam and p.oam.meg_id}")
        sink.last_rx_us = now_us
        went_up = not sink.live
        sink.live = True
        lp.live = True
        if went_up:
            log.debug("%s meg %d live again at %d", self.node_id,
                      sink.meg_id, now_us)
        return []

    def oam_on_tick(self, lp_id: int, now_us: int) -> list:
        """Liveness check; edge-triggered loss-of-continuity notification."""
        lp = self.logical_ports[lp_id]
        sink: OamSink = lp.kind
        if sink.live and now_us - sink.last_rx_us > sink.k_threshold * sink.interval_us:
            sink.live = False
            lp.live = False
            notice = Packet(eth=pk.EthernetHeader(pk.BROADCAST_MAC,
                                                  pk.BROADCAST_MAC,
                                                  pk.ETH_OAM_CC),
                            oam=pk.OamCcPayload(meg_id=sink.meg_id, seq=0,
                                                src_node=self.node_index))
            return [PacketIn("oam_loc", notice, lp_id)]
        return []


def entry_matches(match: dict, in_port: int, p: Packet) -> bool:
    """Exact-field match against the packet's wire-visible (outer) headers."""
    mpls_present = bool(p.mpls)
    for fname, want in match.items():
        if fname == "in_port":
            if in_port != want:
                return False
        elif fname == "ethertype":
            vis = pk.ETH_MPLS if mpls_present else p.eth.ethertype
            if vis != want:
                return False
        elif fname == "eth_dst":
            if p.eth.dst_mac != want:
                return False
        elif fname == "vlan_vid":
            if not p.vlans or p.vlans[0].vid != want:
                return False
        elif fname == "mpls_label":
            if not mpls_present or p.mpls[0].label != want:
                return False
        elif fname == "mpls_bos":
            if not mpls_present or p.mpls[0].bos != want:
                return False
        elif fname == "pppoe_session":
            if mpls_present or p.pppoe is None or p.pppoe.session_id != want:
                return False
        elif fname == "ppp_proto":
            if mpls_present or p.ppp_proto != want:
                return False
        elif fname == "ipv4_dst":
            net, plen = want
            if mpls_present or p.pppoe is not None or p.ipv4 is None:
                return False
            shift = 32 - plen
            if plen and (p.ipv4.dst >> shift) != (net >> shift):
                return False
        else:
            raise ValueError(f"unknown match field {fname!r}")
    return True


def set_field(p: Packet, fname: str, value) -> Packet:
    if fname == "eth_dst":
        return replace(p, eth=replace(p.eth, dst_mac=value))
    if fname == "eth_src":
        return replace(p, eth=replace(p.eth, src_mac=value))
    if fname == "ethertype":
        return replace(p, eth=replace(p.eth, ethertype=value))
    raise ValueError(f"unsupported set-field {fname!r}")


def push_pppoe_action(p: Packet, session_id: int) -> Packet:
    """Wrap a bare IPv4 packet into a PPPoE session frame in place."""
    if p.ipv4 is None or p.pppoe is not None or p.mpls:
        raise DecapMismatch("PushPppoe expects a bare IPv4 packet")
    return replace(p, eth=replace(p.eth, ethertype=pk.ETH_PPPOE_SESSION),
                   pppoe=pk.PppoeHeader(code=pk.PPPOE_SESSION,
                                        session_id=session_id),
                   ppp_proto=pk.PPP_IPV4)


def pop_pppoe_action(p: Packet) -> Packet:
    """Strip PPPoE/PPP from an IPv4-carrying session frame."""
    if p.pppoe is None or p.ppp_proto != pk.PPP_IPV4 or p.ipv4 is None:
        raise DecapMismatch("PopPppoe expects PPPoE-encapsulated IPv4")
    return replace(p, eth=replace(p.eth, ethertype=pk.ETH_IPV4),
                   pppoe=None, ppp_proto=None)


# --- logical-port packet processing (shared by fast and slow paths) --------

def lp_process(switch: SwitchState, lp_id: int, direction: str, p: Packet):
    """Apply a logical port's encapsulation (egress) or decapsulation
    (ingress) to a packet; returns the transformed packet plus, for
    PW/tunnel kinds, where it goes next."""
    kind = switch.logical_ports[lp_id].kind
    if isinstance(kind, PwEndpoint):
        if direction == "egress":
            inner = pk.encode_frame(p)
            wrapped = Packet(eth=pk.EthernetHeader(pk.BROADCAST_MAC,
                                                   kind.local_mac, pk.ETH_RAW),
                             payload=inner)
            return pk.push_mpls(wrapped, kind.pw_label_out), kind.tunnel
        if not p.mpls or p.mpls[0].label != kind.pw_label_in or not p.mpls[0].bos:
            raise DecapMismatch(f"pw {kind.pw_id}: unexpected label stack")
        return pk.decode_frame(pk.pop_mpls(p).payload), kind.attachment
    if isinstance(kind, PppoeTermination):
        if direction == "egress":
            # p is bare IPv4 routed toward the customer of some session
            raise DecapMismatch("pppoe egress needs a session id; "
                                "use pppoe_wrap")
        if p.pppoe is None or p.pppoe.session_id not in kind.sessions:
            raise DecapMismatch("unknown pppoe session")
        return pop_pppoe_action(p), None
    if isinstance(kind, IpOverEthernet):
        if direction != "egress":
            raise DecapMismatch("ip-over-ethernet is an egress function")
        rewritten = replace(p, eth=pk.EthernetHeader(kind.next_hop_mac,
                                                     kind.src_mac,
                                                     p.eth.ethertype))
        return rewritten, kind.underlay
    raise DecapMismatch(f"no packet processing for {type(kind).__name__}")


def pppoe_wrap(kind: PppoeTermination, session_id: int, p: Packet) -> Packet:
    """Customer-bound encapsulation for one session of a termination port."""
    if session_id not in kind.sessions:
        raise DecapMismatch(f"unknown pppoe session {session_id}")
    cust_mac, local_mac, _ = kind.sessions[session_id]
    wrapped = push_pppoe_action(p, session_id)
    return replace(wrapped, eth=replace(wrapped.eth, dst_mac=cust_mac,
                                        src_mac=local_mac))
