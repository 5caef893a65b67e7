"""Split BRAS control: PPPoE/PPP sessions, addressing, customer routing.

A BRAS module is a small controller chain (IP layer over an Ethernet
layer) hosted above one processing-capable switch.  The IP layer emits
incomplete bypass rules that reference logical ports only; each layer of
the chain substitutes its ports with concrete encapsulation actions and
lower-layer fields until the rule is installable on the switch.  Above
the modules sits the steering function: it authenticates and steers
PPPoE discovery to the highest-priority enabled BRAS, stitching a
pseudowire from the access node to the serving host first.  The NMS
enables and disables modules, which creates or tears down their gateway
tunnels.
"""

from __future__ import annotations

import ipaddress
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum, auto

from . import ctlproto as cp
from . import dataplane as dp
from . import packet as pk
from .packet import Packet
from .simnet import Channel, Reactor

log = logging.getLogger(__name__)

PRIO_SESSION_RULE = 100
PRIO_PPP_CTRL = 10
PRIO_PPP_DATA_FALLBACK = 5


class NoBrasAvailable(Exception):
    pass


class AuthDenied(Exception):
    pass


class UnknownBras(Exception):
    pass


class PoolExhausted(Exception):
    pass


class SessionNotOpen(Exception):
    pass


class UnknownLogicalPort(Exception):
    pass


class DanglingLayer(Exception):
    pass


class NoRoute(Exception):
    pass


class SessionState(Enum):
    Idle = auto()
    PadoSent = auto()
    SessionUp = auto()
    LcpOpen = auto()
    IpOpen = auto()
    Closed = auto()


@dataclass
class SessionRecord:
    mac: bytes
    access: tuple                  # (node, port) of the customer drop
    vport: int                     # customer Ethernet endpoint in BRAS view
    session_id: int = 0
    state: SessionState = SessionState.Idle
    ip: int | None = None


@dataclass
class BrasDescriptor:
    bras_id: str
    host: str
    priority: int
    enabled: bool = False
    tunnel_ref: str | None = None


class AddressPool:
    """Customer address pool; network and broadcast are never handed out."""

    def __init__(self, prefix: str):
        net = ipaddress.ip_network(prefix)
        self.prefix = prefix
        if net.prefixlen >= 31:
            self._first, self._last = 1, 0     # no usable hosts
        else:
            self._first = int(net.network_address) + 1
            self._last = int(net.broadcast_address) - 1
        self._in_use: set[int] = set()
        self._released: list[int] = []
        self._next = self._first

    def assign(self) -> int:
        """Lowest free usable address."""
        candidates = sorted(self._released)
        while candidates and candidates[0] < self._next:
            ip = candidates.pop(0)
            if ip not in self._in_use:
                self._released.remove(ip)
                self._in_use.add(ip)
                return ip
        if self._next <= self._last:
            ip = self._next
            self._next += 1
            self._in_use.add(ip)
            return ip
        raise PoolExhausted(self.prefix)

    def release(self, ip: int) -> None:
        if ip in self._in_use:
            self._in_use.discard(ip)
            self._released.append(ip)


def ipcp_assign(pool: AddressPool, sess: SessionRecord) -> int:
    if sess.ip is not None:
        return sess.ip
    sess.ip = pool.assign()
    return sess.ip


def ipcp_release(pool: AddressPool, sess: SessionRecord) -> None:
    if sess.ip is not None:
        pool.release(sess.ip)
        sess.ip = None


# --- incomplete rules and the completion chain --------------------------------

@dataclass(frozen=True)
class OutputRef:
    """Symbolic output to a logical endpoint of an upper layer."""
    ref: str


@dataclass
class IncompleteRule:
    origin: str
    priority: int
    match: dict        # client-layer fields; in_port may be a ref string
    actions: list


class ChainLayer:
    """One completion layer: substitutes its refs, leaves the rest."""

    def resolve_out(self, ref: str):
        return None    # -> (actions_prefix, next_ref or concrete Output)

    def resolve_in(self, ref: str):
        return None    # -> (match_additions, next_in_ref, actions_prefix)

    def complete(self, rule: IncompleteRule) -> IncompleteRule:
        match = dict(rule.match)
        actions = []
        prepend: list = []
        if isinstance(match.get("in_port"), str):
            got = self.resolve_in(match["in_port"])
            if got is not None:
                additions, next_ref, pre = got
                match.pop("in_port")
                match.update(additions)
                match["in_port"] = next_ref
                prepend = list(pre)
        for act in rule.actions:
            if isinstance(act, OutputRef):
                got = self.resolve_out(act.ref)
                if got is None:
                    actions.append(act)
                    continue
                extra, nxt = got
                actions.extend(extra)
                actions.append(nxt if not isinstance(nxt, str)
                               else OutputRef(nxt))
            else:
                actions.append(act)
        return IncompleteRule(origin=rule.origin, priority=rule.priority,
                              match=match, actions=prepend + actions)


def complete_rule(chain: list, rule: IncompleteRule) -> cp.FlowModMsg:
    """Walk the layer chain top-down; the result must be concrete.

    An empty chain is the identity.  Raises DanglingLayer when symbolic
    references survive every layer.
    """
    done = rule
    for layer in chain:
        done = layer.complete(done)
    if isinstance(done.match.get("in_port"), str):
        raise DanglingLayer(f"unresolved in_port {done.match['in_port']!r}")
    for act in done.actions:
        if isinstance(act, OutputRef):
            raise DanglingLayer(f"unresolved output {act.ref!r}")
    entry = dp.FlowEntry(table_id=0, priority=done.priority,
                         match=done.match, actions=done.actions)
    return cp.FlowModMsg(op="add", entry=entry)


# --- PPP payload helpers -------------------------------------------------------

CONF_REQ = 1
CONF_ACK = 2


def lcp_payload(code: int, ident: int) -> bytes:
    return struct.pack(">BB", code, ident)


def ipcp_payload(code: int, ident: int, ip: int) -> bytes:
    return struct.pack(">BBI", code, ident, ip)


# --- the BRAS module ------------------------------------------------------------

class BrasModule(Reactor):
    """One floating service instance: Ethernet + IP controller chain."""

    def __init__(self, engine, bras_id: str, host: str, pool_prefix: str):
        super().__init__(engine, f"bras:{bras_id}")
        self.bras_id = bras_id
        self.host = host
        self.enabled = False
        self.pool = AddressPool(pool_prefix)
        self.mac = self._derive_mac(bras_id, 0xB0)
        self.gw_mac = self._derive_mac(bras_id, 0x6E)
        self.sessions: dict[tuple, SessionRecord] = {}     # (mac, vport)
        self.by_sid: dict[int, SessionRecord] = {}
        self._next_sid = 1
        self.pw_vports: dict[str, int] = {}                # pw id -> vport
        self.vport_pw: dict[int, str] = {}
        self.vport_access: dict[int, tuple] = {}
        self.gw_vport: int | None = None
        self.routes: dict[tuple, tuple] = {(0, 0): ("gw",)}
        self.transport_chan: Channel | None = None
        self.steering_chan: Channel | None = None
        self._bootstrapped = False

    @staticmethod
    def _derive_mac(bras_id: str, salt: int) -> bytes:
        h = 0
        for ch in bras_id:
            h = (h * 131 + ord(ch)) & 0xFFFF
        return bytes([0x02, salt, 0, 0, h >> 8, h & 255])

    # -- layers of the completion chain --

    def chain(self) -> list:
        module = self

        class PppLayer(ChainLayer):
            def resolve_out(self, ref):
                if not ref.startswith("pppoe:"):
                    return None
                sid = int(ref.split(":")[1])
                sess = module.by_sid.get(sid)
                if sess is None:
                    raise UnknownLogicalPort(ref)
                return ([dp.PushPppoe(sid),
                         dp.SetField("eth_dst", sess.mac),
                         dp.SetField("eth_src", module.mac)],
                        f"eth:{sess.vport}")

            def resolve_in(self, ref):
                if not ref.startswith("pppoe:"):
                    return None
                sid = int(ref.split(":")[1])
                sess = module.by_sid.get(sid)
                if sess is None:
                    raise UnknownLogicalPort(ref)
                return ({"ethertype": pk.ETH_PPPOE_SESSION,
                         "pppoe_session": sid, "ppp_proto": pk.PPP_IPV4},
                        f"eth:{sess.vport}", [dp.PopPppoe()])

        class GatewayLayer(ChainLayer):
            def resolve_out(self, ref):
                if ref != "gw":
                    return None
                if module.gw_vport is None:
                    raise UnknownLogicalPort("gw")
                return ([dp.SetField("eth_dst", module.gw_mac),
                         dp.SetField("eth_src", module.mac)],
                        f"eth:{module.gw_vport}")

        class EthLayer(ChainLayer):
            def resolve_out(self, ref):
                if not ref.startswith("eth:"):
                    return None
                return ([], dp.Output(int(ref.split(":")[1])))

            def resolve_in(self, ref):
                if not ref.startswith("eth:"):
                    return None
                return ({}, int(ref.split(":")[1]), [])

        return [PppLayer(), GatewayLayer(), EthLayer()]

    # -- static IP routes for a customer --

    def install_customer_route(self, sess: SessionRecord) -> tuple:
        """Bypass rule pair for an open session, IP-layer fields only."""
        if sess.state != SessionState.IpOpen:
            raise SessionNotOpen(f"session {sess.session_id} is {sess.state}")
        down = IncompleteRule(origin="ip", priority=PRIO_SESSION_RULE,
                              match={"ipv4_dst": (sess.ip, 32)},
                              actions=[OutputRef(f"pppoe:{sess.session_id}")])
        up = IncompleteRule(origin="ip", priority=PRIO_SESSION_RULE,
                            match={"in_port": f"pppoe:{sess.session_id}"},
                            actions=[OutputRef("gw")])
        return down, up

    def _push_customer_rules(self, sess: SessionRecord) -> None:
        chain = self.chain()
        for rule in self.install_customer_route(sess):
            self.send(self.transport_chan, complete_rule(chain, rule))
        self.routes[(sess.ip, 32)] = ("session", sess.session_id)

    def _drop_customer_rules(self, sess: SessionRecord) -> None:
        if sess.ip is None:
            return
        self.routes.pop((sess.ip, 32), None)
        self.send(self.transport_chan, cp.FlowModMsg(
            op="delete", entry=dp.FlowEntry(0, 0, {"ipv4_dst": (sess.ip, 32)},
                                            [])))
        self.send(self.transport_chan, cp.FlowModMsg(
            op="delete", entry=dp.FlowEntry(
                0, 0, {"in_port": sess.vport, "ethertype": pk.ETH_PPPOE_SESSION,
                       "pppoe_session": sess.session_id,
                       "ppp_proto": pk.PPP_IPV4}, [])))

    # -- session FSM --

    def pppoe_fsm_step(self, sess: SessionRecord, event: str,
                       frame: Packet | None = None) -> list:
        """One legal transition; illegal events are ignored with a trace."""
        out: list[Packet] = []
        st = sess.state
        if event == "PADT":
            self._close_session(sess)
            return out
        if event == "Timeout":
            self._close_session(sess)
            return out
        if st == SessionState.Idle and event == "PADI":
            sess.state = SessionState.PadoSent
            out.append(pk.make_discovery(pk.PPPOE_PADO, 0, sess.mac, self.mac))
        elif st == SessionState.PadoSent and event == "PADR":
            sess.session_id = self._next_sid
            self._next_sid += 1
            self.by_sid[sess.session_id] = sess
            sess.state = SessionState.SessionUp
            out.append(pk.make_discovery(pk.PPPOE_PADS, sess.session_id,
                                         sess.mac, self.mac))
        elif st == SessionState.SessionUp and event == "LcpConfReq":
            sess.state = SessionState.LcpOpen
            ident = frame.payload[1] if frame and len(frame.payload) > 1 else 0
            out.append(pk.make_ppp_control(pk.PPP_LCP, sess.session_id,
                                           sess.mac, self.mac,
                                           lcp_payload(CONF_ACK, ident)))
        elif st == SessionState.LcpOpen and event == "IpcpConfReq":
            ip = ipcp_assign(self.pool, sess)
            sess.state = SessionState.IpOpen
            ident = frame.payload[1] if frame and len(frame.payload) > 1 else 0
            out.append(pk.make_ppp_control(pk.PPP_IPCP, sess.session_id,
                                           sess.mac, self.mac,
                                           ipcp_payload(CONF_ACK, ident, ip)))
        else:
            self.engine.record_event("fsm_ignored", self.name, state=st.name,
                                     event=event)
        return out

    def _close_session(self, sess: SessionRecord) -> None:
        if sess.state == SessionState.Closed:
            return
        if sess.state == SessionState.IpOpen:
            self._drop_customer_rules(sess)
        ipcp_release(self.pool, sess)
        sess.state = SessionState.Closed
        self.engine.record("session_closed", self.name,
                           mac=pk.mac_str(sess.mac), sid=sess.session_id)

    # -- messages --

    def handle_message(self, chan: Channel, msg, now: int) -> None:
        if isinstance(msg, cp.PacketInMsg):
            self._on_packet_in(msg, now)
        elif isinstance(msg, cp.PortStatus):
            self._on_port_status(msg)
        elif isinstance(msg, cp.ServiceRequest):
            self._on_service(chan, msg)
        elif isinstance(msg, (cp.FeaturesReply, cp.ServiceReply, cp.ErrorMsg,
                              cp.Hello)):
            pass
        else:
            log.debug("%s: unhandled %s", self.name, type(msg).__name__)

    def _on_port_status(self, msg: cp.PortStatus) -> None:
        if msg.name.startswith("pw:"):
            pw_id = msg.name[3:]
            if msg.up:
                self.pw_vports[pw_id] = msg.port
                self.vport_pw[msg.port] = pw_id
            else:
                self.pw_vports.pop(pw_id, None)
                self.vport_pw.pop(msg.port, None)
        elif msg.name.startswith("gw:"):
            self.gw_vport = msg.port if msg.up else None

    def _on_service(self, chan: Channel, msg: cp.ServiceRequest) -> None:
        if msg.op == "serve_customer":
            vport = self.pw_vports.get(msg.args["pw_id"])
            if vport is None:
                self.send(chan, cp.ServiceReply(msg.req_id, ok=False,
                                                error="UnknownLogicalPort"))
                return
            self.vport_access[vport] = tuple(msg.args["access"])
            frame = pk.decode_frame(msg.args["frame"])
            if not self.enabled:
                self.send(chan, cp.ServiceReply(msg.req_id, ok=False,
                                                error="BrasDisabled"))
                return
            self._discovery_event(frame, vport)
            self.send(chan, cp.ServiceReply(msg.req_id, ok=True))
        elif msg.op == "set_enabled":
            self.set_enabled(bool(msg.args["enabled"]))
            self.send(chan, cp.ServiceReply(msg.req_id, ok=True))

    def set_enabled(self, enabled: bool) -> None:
        if enabled and not self._bootstrapped:
            self._bootstrap_slow_path()
        self.enabled = enabled
        if not enabled:
            for key in sorted(self.sessions, key=lambda k: (k[0], k[1])):
                self._close_session(self.sessions[key])

    def _bootstrap_slow_path(self) -> None:
        """Punt PPP control and unknown session traffic to this module."""
        self._bootstrapped = True
        for prio, match in (
                (PRIO_PPP_CTRL, {"ethertype": pk.ETH_PPPOE_DISC}),
                (PRIO_PPP_CTRL, {"ethertype": pk.ETH_PPPOE_SESSION,
                                 "ppp_proto": pk.PPP_LCP}),
                (PRIO_PPP_CTRL, {"ethertype": pk.ETH_PPPOE_SESSION,
                                 "ppp_proto": pk.PPP_IPCP}),
                (PRIO_PPP_DATA_FALLBACK,
                 {"ethertype": pk.ETH_PPPOE_SESSION})):
            self.send(self.transport_chan, cp.FlowModMsg(
                op="add", entry=dp.FlowEntry(0, prio, match,
                                             [dp.ToController()])))

    def _on_packet_in(self, msg: cp.PacketInMsg, now: int) -> None:
        p = msg.packet
        vport = msg.in_port
        if p.pppoe is None:
            return
        if p.eth.ethertype == pk.ETH_PPPOE_DISC:
            self._discovery_event(p, vport)
            return
        sess = self.by_sid.get(p.pppoe.session_id)
        if p.ppp_proto == pk.PPP_LCP and p.payload[:1] == bytes([CONF_REQ]):
            if sess is not None:
                self._emit(self.pppoe_fsm_step(sess, "LcpConfReq", p), vport)
        elif p.ppp_proto == pk.PPP_IPCP and p.payload[:1] == bytes([CONF_REQ]):
            if sess is not None:
                try:
                    self._emit(self.pppoe_fsm_step(sess, "IpcpConfReq", p),
                               vport)
                except PoolExhausted:
                    self.engine.record("pool_exhausted", self.name,
                                       sid=sess.session_id)
                    return
                if sess.state == SessionState.IpOpen:
                    self._push_customer_rules(sess)
                    self.engine.record("session_open", self.name,
                                       mac=pk.mac_str(sess.mac),
                                       sid=sess.session_id,
                                       ip=pk.ipv4_str(sess.ip))
        elif p.ppp_proto == pk.PPP_IPV4:
            try:
                out_port, out_pkt = self.slow_path_forward(vport, p)
            except (NoRoute, dp.DecapMismatch):
                self.engine.record_event("slow_drop", self.name)
                return
            self.send(self.transport_chan,
                      cp.PacketOutMsg(packet=out_pkt, out_port=out_port))

    def _discovery_event(self, p: Packet, vport: int) -> None:
        code = p.pppoe.code
        if code == pk.PPPOE_PADI and not self.enabled:
            # relay stray discovery upward so service can be re-steered
            if self.steering_chan is not None:
                self.send(self.steering_chan, cp.ServiceRequest(
                    op="stray_padi",
                    args={"frame": pk.encode_frame(p),
                          "access": self.vport_access.get(vport, ("?", 0)),
                          "mac": pk.mac_str(p.eth.src_mac)},
                    req_id=0))
            return
        key = (p.eth.src_mac, vport)
        sess = self.sessions.get(key)
        if sess is None or sess.state == SessionState.Closed:
            sess = SessionRecord(mac=p.eth.src_mac,
                                 access=self.vport_access.get(vport, ("?", 0)),
                                 vport=vport)
            self.sessions[key] = sess
        event = {pk.PPPOE_PADI: "PADI", pk.PPPOE_PADR: "PADR",
                 pk.PPPOE_PADT: "PADT"}.get(code)
        if event is None:
            return
        self._emit(self.pppoe_fsm_step(sess, event, p), vport)

    def _emit(self, frames: list, vport: int) -> None:
        for f in frames:
            self.send(self.transport_chan,
                      cp.PacketOutMsg(packet=f, out_port=vport))

    # -- per-packet slow path (the oracle for completed fast-path rules) --

    def _route_lookup(self, dst: int) -> tuple:
        best = None
        for (net, plen), target in self.routes.items():
            shift = 32 - plen
            if plen == 0 or (dst >> shift) == (net >> shift):
                if best is None or plen > best[0]:
                    best = (plen, target)
        if best is None:
            raise NoRoute(pk.ipv4_str(dst))
        return best[1]

    def slow_path_forward(self, in_port: int, p: Packet) -> tuple:
        """Layer-by-layer forwarding of one packet through the module."""
        if in_port in self.vport_pw:
            # upstream: customer Ethernet endpoint -> decap -> route
            if p.pppoe is None or p.ppp_proto != pk.PPP_IPV4:
                raise dp.DecapMismatch("not session IPv4")
            sess = self.by_sid.get(p.pppoe.session_id)
            if sess is None or sess.vport != in_port \
                    or sess.state != SessionState.IpOpen:
                raise dp.DecapMismatch("unknown pppoe session")
            inner = dp.pop_pppoe_action(p)
            target = self._route_lookup(inner.ipv4.dst)
            if target == ("gw",):
                if self.gw_vport is None:
                    raise NoRoute("no gateway tunnel")
                out = dp.set_field(dp.set_field(inner, "eth_dst", self.gw_mac),
                                   "eth_src", self.mac)
                return self.gw_vport, out
            _, sid = target
            sess2 = self.by_sid[sid]
            return sess2.vport, self._wrap_for(sess2, inner)
        # downstream: bare IPv4 from the gateway side
        if p.ipv4 is None or p.pppoe is not None:
            raise dp.DecapMismatch("expected bare IPv4")
        target = self._route_lookup(p.ipv4.dst)
        if target == ("gw",):
            raise NoRoute(f"no customer route for {pk.ipv4_str(p.ipv4.dst)}")
        _, sid = target
        sess = self.by_sid[sid]
        return sess.vport, self._wrap_for(sess, p)

    def _wrap_for(self, sess: SessionRecord, inner: Packet) -> Packet:
        wrapped = dp.push_pppoe_action(inner, sess.session_id)
        return dp.set_field(dp.set_field(wrapped, "eth_dst", sess.mac),
                            "eth_src", self.mac)


# --- steering + NMS --------------------------------------------------------------

def select_bras(registry: dict, strategy=None) -> str:
    """Highest pre-assigned priority among enabled modules; ties go to the
    lowest id.  strategy(descriptors) may replace the policy."""
    enabled = [d for d in registry.values() if d.enabled]
    if not enabled:
        raise NoBrasAvailable("no enabled BRAS descriptor")
    if strategy is not None:
        return strategy(enabled)
    best = sorted(enabled, key=lambda d: (-d.priority, d.bras_id))[0]
    return best.bras_id


class SteeringModule(Reactor):
    """Central service-creation control: steers discovery, owns the registry."""

    def __init__(self, engine, gateway_peer: str,
                 allow_list: set | None = None, strategy=None):
        super().__init__(engine, "steering")
        self.registry: dict[str, BrasDescriptor] = {}
        self.gateway_peer = gateway_peer
        self.allow_list = allow_list
        self.strategy = strategy
        self.transport_chan: Channel | None = None
        self.bras_chans: dict[str, Channel] = {}
        self.vs_ports: dict[int, tuple] = {}      # steering vport -> access
        self.access_pw: dict[tuple, dict] = {}    # access -> pw state
        self._req_next = 1
        self._pending: dict[int, tuple] = {}

    def add_descriptor(self, desc: BrasDescriptor, chan: Channel) -> None:
        self.registry[desc.bras_id] = desc
        self.bras_chans[desc.bras_id] = chan

    def _request(self, chan: Channel, op: str, args: dict, cookie) -> None:
        req_id = self._req_next
        self._req_next += 1
        self._pending[req_id] = cookie
        self.send(chan, cp.ServiceRequest(op=op, args=args, req_id=req_id))

    # -- NMS operations --

    def enable_bras(self, bras_id: str) -> None:
        desc = self.registry.get(bras_id)
        if desc is None:
            raise UnknownBras(bras_id)
        if desc.enabled:
            return
        desc.enabled = True
        self.engine.record("bras_enabled", self.name, bras=bras_id)
        self._request(self.bras_chans[bras_id], "set_enabled",
                      {"enabled": True}, ("enabled", bras_id))
        if desc.tunnel_ref is None:
            desc.tunnel_ref = f"gw:{bras_id}"
            self._request(self.transport_chan, "setup_e2e",
                          {"e2e_id": desc.tunnel_ref, "head": desc.host,
                           "peer": self.gateway_peer, "client": bras_id},
                          ("tunnel", bras_id))

    def disable_bras(self, bras_id: str) -> None:
        desc = self.registry.get(bras_id)
        if desc is None:
            raise UnknownBras(bras_id)
        if not desc.enabled:
            return
        desc.enabled = False
        self.engine.record("bras_disabled", self.name, bras=bras_id)
        self._request(self.bras_chans[bras_id], "set_enabled",
                      {"enabled": False}, ("disabled", bras_id))
        if desc.tunnel_ref is not None:
            self._request(self.transport_chan, "teardown_e2e",
                          {"e2e_id": desc.tunnel_ref}, ("teardown", bras_id))
            desc.tunnel_ref = None

    # -- discovery steering --

    def handle_padi(self, frame: Packet, access: tuple) -> None:
        """Authenticate, pick a module, ensure the access pseudowire, relay."""
        if self.allow_list is not None \
                and frame.eth.src_mac not in self.allow_list:
            self.engine.record("auth_denied", self.name,
                               mac=pk.mac_str(frame.eth.src_mac))
            return
        try:
            bras_id = select_bras(self.registry, self.strategy)
        except NoBrasAvailable:
            self.engine.record("no_bras", self.name)
            return
        desc = self.registry[bras_id]
        state = self.access_pw.get(access)
        if state is not None and state["bras"] == bras_id:
            if state["ready"]:
                self._forward_padi(bras_id, state["pw_id"], access, frame)
            else:
                state["queued"].append(pk.encode_frame(frame))
            return
        pw_id = f"pw:{access[0]}:{desc.host}"
        op = "create_pw" if state is None else "retarget_pw"
        args = {"a": list(access), "b": [desc.host, "pipeline"],
                "pw_id": pw_id, "client_b": bras_id}
        if state is not None:
            args["old_pw_id"] = state["pw_id"]
        self.access_pw[access] = {"bras": bras_id, "pw_id": pw_id,
                                  "ready": False,
                                  "queued": [pk.encode_frame(frame)]}
        self._request(self.transport_chan, op, args, ("pw", access))

    def _forward_padi(self, bras_id: str, pw_id: str, access: tuple,
                      frame: Packet) -> None:
        self._request(self.bras_chans[bras_id], "serve_customer",
                      {"pw_id": pw_id, "access": list(access),
                       "frame": pk.encode_frame(frame)},
                      ("serve", access))

    # -- messages --

    def handle_message(self, chan: Channel, msg, now: int) -> None:
        if isinstance(msg, cp.PacketInMsg):
            p = msg.packet
            access = self.vs_ports.get(msg.in_port)
            if access is None or p.pppoe is None:
                return
            if p.pppoe.code == pk.PPPOE_PADI:
                self.handle_padi(p, access)
        elif isinstance(msg, cp.ServiceReply):
            self._on_reply(msg)
        elif isinstance(msg, cp.ServiceRequest) and msg.op == "stray_padi":
            frame = pk.decode_frame(msg.args["frame"])
            self.handle_padi(frame, tuple(msg.args["access"]))
        elif isinstance(msg, (cp.FeaturesReply, cp.PortStatus, cp.ErrorMsg,
                              cp.Hello)):
            pass

    def _on_reply(self, msg: cp.ServiceReply) -> None:
        cookie = self._pending.pop(msg.req_id, None)
        if cookie is None:
            return
        kind = cookie[0]
        if kind == "pw":
            access = cookie[1]
            state = self.access_pw.get(access)
            if state is None:
                return
            if not msg.ok:
                self.engine.record("pw_failed", self.name, error=msg.error)
                self.access_pw.pop(access, None)
                return
            state["ready"] = True
            queued, state["queued"] = state["queued"], []
            for raw in queued:
                self._forward_padi(state["bras"], state["pw_id"], access,
                                   pk.decode_frame(raw))
        elif kind == "tunnel" and not msg.ok:
            self.engine.record("tunnel_failed", self.name, bras=cookie[1],
                               error=msg.error)


class Nms:
    """Management hand: configures descriptors, flips their availability."""

    def __init__(self, steering: SteeringModule):
        self.steering = steering

    def enable_bras(self, bras_id: str) -> None:
        self.steering.enable_bras(bras_id)

    def disable_bras(self, bras_id: str) -> None:
        self.steering.disable_bras(bras_id)

    def list_bras(self) -> list:
        return [self.steering.registry[b]
                for b in sorted(self.steering.registry)]
