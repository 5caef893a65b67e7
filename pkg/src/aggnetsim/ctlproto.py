"""Control protocol: one message set for every channel in the hierarchy.

The same messages run switch-to-controller and controller-to-controller;
the layering is expressed purely by wiring.  A control layer exposes its
domain upward as a virtual switch, filtered per client by a view policy,
so a client can never name a port outside its slice.  Messages are
in-memory values; there is no byte-level control codec.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import dataplane as dp
from .packet import Packet


class EmptyView(Exception):
    pass


class PermissionDenied(Exception):
    pass


class NoTransport(Exception):
    pass


class UnmappedPort(Exception):
    pass


# --- message set -------------------------------------------------------------

@dataclass(frozen=True)
class Hello:
    pass


@dataclass(frozen=True)
class FeaturesRequest:
    pass


@dataclass(frozen=True)
class PortDesc:
    port: int
    name: str


@dataclass(frozen=True)
class FeaturesReply:
    datapath_id: int
    ports: list


@dataclass(frozen=True)
class PacketInMsg:
    packet: Packet
    in_port: int
    reason: str


@dataclass(frozen=True)
class PacketOutMsg:
    packet: Packet
    out_port: int | None = None
    actions: list | None = None


@dataclass(frozen=True)
class FlowModMsg:
    op: str  # add | modify | delete
    entry: dp.FlowEntry
    tag: str | None = None


@dataclass(frozen=True)
class GroupModMsg:
    op: str
    group: dp.Group
    tag: str | None = None


@dataclass(frozen=True)
class PortStatus:
    port: int
    up: bool
    name: str = ""


@dataclass(frozen=True)
class ErrorMsg:
    code: str
    context: str


@dataclass(frozen=True)
class PortModMsg:
    """Attach/detach a logical port on a switch (controller-driven)."""
    op: str  # add | delete
    kind: object = None
    lp_id: int | None = None
    reply_to: object = None   # callable(node, token, lp_id, now), wiring-time only
    token: object = None


@dataclass(frozen=True)
class ServiceRequest:
    """Control-program request between layers (create_pw, e2e setup, ...)."""
    op: str
    args: dict
    req_id: int


@dataclass(frozen=True)
class ServiceReply:
    req_id: int
    ok: bool
    result: dict = field(default_factory=dict)
    error: str = ""


# --- abstraction machinery ----------------------------------------------------

@dataclass
class ViewPolicy:
    client_id: str
    allowed_ports: set          # of virtual port ids
    allowed_match_fields: set


@dataclass
class VirtualSwitch:
    """One client's filtered view of a control layer's domain."""

    datapath_id: int
    client_id: str
    policy: ViewPolicy
    port_map: dict = field(default_factory=dict)   # vport -> (node, concrete port)
    inverse: dict = field(default_factory=dict)    # (node, concrete port) -> vport
    port_names: dict = field(default_factory=dict)

    def add_port(self, vport: int, target: tuple, name: str = "") -> None:
        if target in self.inverse:
            raise ValueError(f"target {target} already mapped")
        self.port_map[vport] = target
        self.inverse[target] = vport
        self.port_names[vport] = name
        self.policy.allowed_ports.add(vport)

    def remove_port(self, vport: int) -> None:
        target = self.port_map.pop(vport, None)
        if target is not None:
            self.inverse.pop(target, None)
        self.port_names.pop(vport, None)
        self.policy.allowed_ports.discard(vport)

    def features_reply(self) -> FeaturesReply:
        ports = [PortDesc(vp, self.port_names.get(vp, ""))
                 for vp in sorted(self.port_map)
                 if vp in self.policy.allowed_ports]
        return FeaturesReply(datapath_id=self.datapath_id, ports=ports)

    def check_port(self, vport: int) -> tuple:
        if vport not in self.policy.allowed_ports or vport not in self.port_map:
            raise PermissionDenied(
                f"client {self.client_id}: port {vport} outside view")
        return self.port_map[vport]

    def check_match(self, match: dict) -> None:
        for f in match:
            if f != "in_port" and f not in self.policy.allowed_match_fields:
                raise PermissionDenied(
                    f"client {self.client_id}: match field {f} outside view")


_next_dpid = [0x1000]


def create_virtual_switch(client_id: str, policy: ViewPolicy,
                          ports: dict, names: dict | None = None) -> VirtualSwitch:
    """Build a client view over concrete endpoints.

    ports: vport -> (node, concrete port).  Raises EmptyView if the policy
    admits no port at all.
    """
    admitted = {vp: tgt for vp, tgt in ports.items()
                if vp in policy.allowed_ports}
    if not admitted:
        raise EmptyView(f"client {client_id} sees no ports")
    dpid = _next_dpid[0]
    _next_dpid[0] += 1
    vs = VirtualSwitch(datapath_id=dpid, client_id=client_id, policy=policy)
    for vp, tgt in sorted(admitted.items()):
        vs.add_port(vp, tgt, (names or {}).get(vp, ""))
    return vs


def surface_packet_in(vs: VirtualSwitch, node: str, port: int,
                      packet: Packet, reason: str) -> PacketInMsg:
    """Re-originate a concrete PacketIn at the client's virtual port."""
    vport = vs.inverse.get((node, port))
    if vport is None or vport not in vs.policy.allowed_ports:
        raise UnmappedPort(f"({node},{port}) not in view of {vs.client_id}")
    return PacketInMsg(packet=packet, in_port=vport, reason=reason)


def sink_packet_out(vs: VirtualSwitch, msg: PacketOutMsg) -> tuple:
    """Map a client PacketOut to its concrete (node, port) emission."""
    node, port = vs.check_port(msg.out_port)
    return node, port, msg.packet
