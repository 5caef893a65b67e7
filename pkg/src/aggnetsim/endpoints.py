"""Scenario endpoints: customer CPE, probe taps, scripted core peer.

These sit outside the controlled domain.  The customer runs the client
half of PPPoE discovery and PPP negotiation and can source an in-session
IPv4 echo stream; probe taps inject and log sequenced frames; the core
peer answers the stub signaling protocol and echoes data back into the
domain, standing in for the IP/MPLS core plus the service gateway.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import replace

from . import brasctl
from . import ctlproto as cp
from . import packet as pk
from . import transportctl as tc
from .packet import Packet
from .simnet import Channel, Endpoint, Engine, ProbeFlow, Reactor

log = logging.getLogger(__name__)


class Customer(Endpoint):
    """Home-gateway model: PPPoE client FSM plus an optional echo stream."""

    def __init__(self, engine: Engine, name: str, mac: bytes):
        super().__init__(engine, name)
        self.mac = mac
        self.state = "idle"
        self.session_id = 0
        self.peer_mac = pk.BROADCAST_MAC
        self.ip: int | None = None
        self.opens = 0
        self.echo_probe: ProbeFlow | None = None
        self.echo_dst = 0

    def send_padi(self, now: int) -> None:
        """(Re)start discovery; any previous session state is abandoned."""
        self.state = "padi_sent"
        self.session_id = 0
        self.ip = None
        self.peer_mac = pk.BROADCAST_MAC
        self.send(pk.make_padi(self.mac), now)
        self.engine.record("padi_sent", self.name)

    def on_packet(self, p: Packet, now: int) -> None:
        if p.eth.dst_mac not in (self.mac, pk.BROADCAST_MAC) or p.pppoe is None:
            return
        code = p.pppoe.code
        if code == pk.PPPOE_PADO and self.state == "padi_sent":
            self.state = "padr_sent"
            self.peer_mac = p.eth.src_mac
            self.send(pk.make_discovery(pk.PPPOE_PADR, 0, self.peer_mac,
                                        self.mac), now)
        elif code == pk.PPPOE_PADS and self.state == "padr_sent":
            self.state = "lcp_sent"
            self.session_id = p.pppoe.session_id
            self.send(pk.make_ppp_control(
                pk.PPP_LCP, self.session_id, self.peer_mac, self.mac,
                brasctl.lcp_payload(brasctl.CONF_REQ, 1)), now)
        elif code == pk.PPPOE_PADT:
            self.state = "idle"
            self.ip = None
        elif code == pk.PPPOE_SESSION and p.pppoe.session_id == self.session_id:
            self._on_session_frame(p, now)

    def _on_session_frame(self, p: Packet, now: int) -> None:
        if p.ppp_proto == pk.PPP_LCP and self.state == "lcp_sent" \
                and p.payload[:1] == bytes([brasctl.CONF_ACK]):
            self.state = "ipcp_sent"
            self.send(pk.make_ppp_control(
                pk.PPP_IPCP, self.session_id, self.peer_mac, self.mac,
                brasctl.ipcp_payload(brasctl.CONF_REQ, 2, 0)), now)
        elif p.ppp_proto == pk.PPP_IPCP and self.state == "ipcp_sent" \
                and p.payload[:1] == bytes([brasctl.CONF_ACK]):
            self.ip = struct.unpack(">I", p.payload[2:6])[0]
            self.state = "open"
            self.opens += 1
            self.engine.record("customer_open", self.name,
                               ip=pk.ipv4_str(self.ip), n=self.opens)
        elif p.ppp_proto == pk.PPP_IPV4 and p.ipv4 is not None:
            self._on_echo_reply(p, now)

    # -- echo stream --

    def start_echo(self, probe: ProbeFlow, echo_dst: int, now: int) -> None:
        self.echo_probe = probe
        self.echo_dst = echo_dst
        probe.running = True

        def fire(at: int) -> None:
            if not probe.running:
                return
            if self.state == "open":
                seq = probe.next_seq
                probe.next_seq += 1
                payload = probe.probe_id.encode() + b"|" + seq.to_bytes(8, "big")
                frame = pk.encap_pppoe(
                    pk.PPP_IPV4,
                    (pk.Ipv4Header(src=self.ip, dst=self.echo_dst, proto=1),
                     payload),
                    self.session_id, self.peer_mac, self.mac)
                self.send(frame, at)
            self.engine.schedule(at + probe.period_us, lambda t: fire(t))

        fire(now)

    def _on_echo_reply(self, p: Packet, now: int) -> None:
        probe = self.echo_probe
        if probe is None or p.ipv4.dst != self.ip:
            return
        prefix = probe.probe_id.encode() + b"|"
        if not p.payload.startswith(prefix):
            return
        seq = int.from_bytes(p.payload[len(prefix):len(prefix) + 8], "big")
        probe.rx_log.append((seq, now))


class ProbeSource(Endpoint):
    pass


class ProbeSink(Endpoint):
    """Terminates one-way probe traffic; demultiplexes by payload id."""

    def __init__(self, engine: Engine, name: str, probes: dict):
        super().__init__(engine, name)
        self.probes = probes

    def on_packet(self, p: Packet, now: int) -> None:
        head, _, tail = p.payload.partition(b"|")
        probe = self.probes.get(head.decode("ascii", "replace"))
        if probe is None or len(tail) < 8:
            return
        probe.rx_log.append((int.from_bytes(tail[:8], "big"), now))


class CorePeerData(Endpoint):
    def __init__(self, engine: Engine, name: str, peer: "CorePeer"):
        super().__init__(engine, name)
        self.peer = peer

    def on_packet(self, p: Packet, now: int) -> None:
        self.peer.on_data(p, now, self)


class CorePeer(Reactor):
    """Scripted IP/MPLS core neighbor doubling as the service gateway.

    Control side answers the stub signaling (request/accept/teardown) and
    collects domain adverts; data side loops IPv4 back with source and
    destination swapped when echo mode is on.
    """

    def __init__(self, engine: Engine, peer_id: str, echo: bool = True):
        super().__init__(engine, f"peer:{peer_id}")
        self.peer_id = peer_id
        self.echo = echo
        self.lsps: dict[str, dict] = {}
        self._rx_label: dict[int, str] = {}
        self._next_label = 1001
        self.adverts: list[tc.DomainAdvert] = []
        self.data = CorePeerData(engine, f"peerdata:{peer_id}", self)
        self.data_rx = 0

    def handle_message(self, chan: Channel, msg, now: int) -> None:
        if isinstance(msg, tc.LspRequest):
            ours = self._next_label
            self._next_label += 1
            self.lsps[msg.e2e_id] = {"their_label": msg.label,
                                     "our_label": ours}
            self._rx_label[ours] = msg.e2e_id
            self.send(chan, tc.LspAccept(e2e_id=msg.e2e_id, label=ours))
        elif isinstance(msg, tc.LspTeardown):
            rec = self.lsps.pop(msg.e2e_id, None)
            if rec is not None:
                self._rx_label.pop(rec["our_label"], None)
        elif isinstance(msg, tc.DomainAdvert):
            self.adverts.append(msg)
            self.engine.record("advert_rx", self.name,
                               interfaces=[list(i) for i in msg.interfaces])

    def on_data(self, p: Packet, now: int, ep: CorePeerData) -> None:
        if not p.mpls or not p.mpls[0].bos:
            return
        e2e_id = self._rx_label.get(p.mpls[0].label)
        if e2e_id is None:
            return
        self.data_rx += 1
        if not self.echo or p.ipv4 is None:
            return
        inner = pk.pop_mpls(p)
        swapped = replace(inner, ipv4=replace(inner.ipv4, src=inner.ipv4.dst,
                                              dst=inner.ipv4.src))
        back = pk.push_mpls(swapped, self.lsps[e2e_id]["their_label"])
        ep.send(back, now)
