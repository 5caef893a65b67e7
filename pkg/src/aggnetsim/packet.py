"""Layered packet model and the canonical byte codec.

Wire layout, big-endian throughout:

    Ethernet   14 B   dst(6) src(6) ethertype(2)
    VLAN tag    4 B   TPID 0x8100, then pcp<<13 | vid      (0..2 tags)
    MPLS entry  4 B   label<<12 | tc<<9 | bos<<8 | ttl
    PPPoE       6 B   ver_type 0x11, code, session_id(2), length(2)
    PPP proto   2 B
    IPv4       12 B   src(4) dst(4) ttl proto total_length(2)   (reduced)
    OAM CC     12 B   meg_id(4) seq(4) src_node(4)

An MPLS stack is flagged on the wire by ethertype 0x8847; the payload's
own ethertype follows the bottom-of-stack entry as 2 bytes, so encode and
decode are exact inverses.  The structured Packet always carries the
logical (inner) ethertype.  This codec is the simulator's only wire truth;
it is not meant to interoperate with external stacks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

# Ethertypes
ETH_IPV4 = 0x0800
ETH_VLAN = 0x8100
ETH_MPLS = 0x8847
ETH_PPPOE_DISC = 0x8863
ETH_PPPOE_SESSION = 0x8864
ETH_OAM_CC = 0x8902
ETH_TOPO_PROBE = 0x88CC
ETH_RAW = 0xFFFF

# RFC 2516 codes
PPPOE_PADI = 0x09
PPPOE_PADO = 0x07
PPPOE_PADR = 0x19
PPPOE_PADS = 0x65
PPPOE_PADT = 0xA7
PPPOE_SESSION = 0x00
PPPOE_DISCOVERY_CODES = frozenset(
    {PPPOE_PADI, PPPOE_PADO, PPPOE_PADR, PPPOE_PADS, PPPOE_PADT})

# PPP protocol numbers
PPP_IPV4 = 0x0021
PPP_LCP = 0xC021
PPP_IPCP = 0x8021

# MPLS label space; 13 is the OAM channel, 0..15 never allocated to LSPs
OAM_LABEL = 13
MIN_UNRESERVED_LABEL = 16
MAX_LABEL = (1 << 20) - 1

BROADCAST_MAC = b"\xff" * 6


class MalformedPacket(Exception):
    """Packet violates a structural invariant and cannot be encoded."""


class TruncatedFrame(Exception):
    """A header claimed by the frame extends past the byte sequence."""


class ReservedLabel(Exception):
    """Label value is inside the reserved range and not the OAM channel."""


class EmptyStack(Exception):
    """pop on an empty MPLS stack."""


class NotPppoeData(Exception):
    """decap applied to a frame that is not PPPoE session data."""


def mac(text: str) -> bytes:
    """Parse 'aa:bb:cc:dd:ee:ff' into 6 raw bytes."""
    parts = text.split(":")
    if len(parts) != 6:
        raise ValueError(f"bad mac {text!r}")
    return bytes(int(x, 16) for x in parts)


def mac_str(b: bytes) -> str:
    return ":".join(f"{x:02x}" for x in b)


@dataclass(frozen=True)
class EthernetHeader:
    dst_mac: bytes
    src_mac: bytes
    ethertype: int


@dataclass(frozen=True)
class VlanTag:
    vid: int
    pcp: int = 0


@dataclass(frozen=True)
class MplsLabelEntry:
    label: int
    tc: int = 0
    bos: bool = False
    ttl: int = 64


@dataclass(frozen=True)
class PppoeHeader:
    code: int
    session_id: int
    ver_type: int = 0x11


@dataclass(frozen=True)
class Ipv4Header:
    src: int
    dst: int
    ttl: int = 64
    proto: int = 0


@dataclass(frozen=True)
class OamCcPayload:
    meg_id: int
    seq: int
    src_node: int


@dataclass(frozen=True)
class Packet:
    """Immutable layered frame; header transforms return new packets."""

    eth: EthernetHeader
    vlans: tuple[VlanTag, ...] = ()
    mpls: tuple[MplsLabelEntry, ...] = ()  # index 0 is the top of stack
    pppoe: PppoeHeader | None = None
    ppp_proto: int | None = None
    ipv4: Ipv4Header | None = None
    oam: OamCcPayload | None = None
    payload: bytes = b""

    def top_label(self) -> MplsLabelEntry | None:
        return self.mpls[0] if self.mpls else None


def ipv4_int(text: str) -> int:
    parts = [int(x) for x in text.split(".")]
    if len(parts) != 4 or any(not 0 <= x <= 255 for x in parts):
        raise ValueError(f"bad ipv4 {text!r}")
    return (parts[0] << 24) | (parts[1] << 16) | (parts[2] << 8) | parts[3]


def ipv4_str(v: int) -> str:
    return f"{v >> 24 & 255}.{v >> 16 & 255}.{v >> 8 & 255}.{v & 255}"


def _validate(p: Packet) -> None:
    if len(p.eth.dst_mac) != 6 or len(p.eth.src_mac) != 6:
        raise MalformedPacket("mac fields must be 6 bytes")
    if p.eth.ethertype in (ETH_MPLS, ETH_VLAN):
        raise MalformedPacket(
            "0x8847/0x8100 are wire markers; use the logical ethertype")
    if len(p.vlans) > 2:
        raise MalformedPacket("at most customer + service VLAN tags")
    for v in p.vlans:
        if not (0 <= v.vid < 4096 and 0 <= v.pcp < 8):
            raise MalformedPacket("vlan field out of range")
    for i, e in enumerate(p.mpls):
        if not 0 <= e.label <= MAX_LABEL:
            raise MalformedPacket(f"label {e.label} out of range")
        if e.bos != (i == len(p.mpls) - 1):
            raise MalformedPacket("bottom-of-stack must mark exactly the last entry")
        if not (0 <= e.tc < 8 and 0 <= e.ttl < 256):
            raise MalformedPacket("mpls tc/ttl out of range")
    if p.pppoe is not None:
        if p.eth.ethertype not in (ETH_PPPOE_DISC, ETH_PPPOE_SESSION):
            raise MalformedPacket("pppoe requires ethertype 0x8863/0x8864")
        if p.pppoe.code == PPPOE_SESSION and p.eth.ethertype != ETH_PPPOE_SESSION:
            raise MalformedPacket("session data carries 0x8864")
        if p.pppoe.code in PPPOE_DISCOVERY_CODES and p.eth.ethertype != ETH_PPPOE_DISC:
            raise MalformedPacket("discovery codes carry 0x8863")
    elif p.eth.ethertype in (ETH_PPPOE_DISC, ETH_PPPOE_SESSION):
        raise MalformedPacket("pppoe ethertype without pppoe header")
    if p.ppp_proto is not None:
        if p.pppoe is None or p.eth.ethertype != ETH_PPPOE_SESSION:
            raise MalformedPacket("ppp_proto requires a PPPoE session frame")
        if p.ppp_proto == PPP_IPV4 and p.ipv4 is None:
            raise MalformedPacket("PPP 0x0021 must carry a structured IPv4 header")
    if p.ipv4 is not None:
        if p.pppoe is not None and p.ppp_proto != PPP_IPV4:
            raise MalformedPacket("ipv4 inside PPPoE requires ppp_proto 0x0021")
        if p.pppoe is None and p.eth.ethertype != ETH_IPV4:
            raise MalformedPacket("bare ipv4 requires ethertype 0x0800")
    elif p.eth.ethertype == ETH_IPV4:
        raise MalformedPacket("ethertype 0x0800 without ipv4 header")
    if p.oam is not None:
        if p.eth.ethertype != ETH_OAM_CC or p.ipv4 or p.pppoe:
            raise MalformedPacket("OAM CC is a bare 0x8902 payload")


def encode_frame(p: Packet) -> bytes:
    """Serialize to the canonical byte layout (deterministic)."""
    _validate(p)
    out = bytearray()
    out += p.eth.dst_mac
    out += p.eth.src_mac
    for v in p.vlans:
        out += struct.pack(">HH", ETH_VLAN, (v.pcp << 13) | v.vid)
    if p.mpls:
        out += struct.pack(">H", ETH_MPLS)
        for e in p.mpls:
            word = (e.label << 12) | (e.tc << 9) | (int(e.bos) << 8) | e.ttl
            out += struct.pack(">I", word)
        out += struct.pack(">H", p.eth.ethertype)
    else:
        out += struct.pack(">H", p.eth.ethertype)
    if p.pppoe is not None:
        body_len = (2 if p.ppp_proto is not None else 0)
        if p.ipv4 is not None:
            body_len += 12
        body_len += len(p.payload)
        out += struct.pack(">BBHH", p.pppoe.ver_type, p.pppoe.code,
                           p.pppoe.session_id, body_len)
        if p.ppp_proto is not None:
            out += struct.pack(">H", p.ppp_proto)
    if p.ipv4 is not None:
        out += struct.pack(">IIBBH", p.ipv4.src, p.ipv4.dst, p.ipv4.ttl,
                           p.ipv4.proto, 12 + len(p.payload))
    if p.oam is not None:
        out += struct.pack(">III", p.oam.meg_id, p.oam.seq, p.oam.src_node)
    out += p.payload
    return bytes(out)


class _Reader:
    def __init__(self, b: bytes):
        self.b = b
        self.i = 0

    def take(self, n: int) -> bytes:
        if self.i + n > len(self.b):
            raise TruncatedFrame(f"need {n} bytes at offset {self.i}")
        chunk = self.b[self.i:self.i + n]
        self.i += n
        return chunk

    def rest(self) -> bytes:
        chunk = self.b[self.i:]
        self.i = len(self.b)
        return chunk


def decode_frame(b: bytes) -> Packet:
    """Inverse of encode_frame on its image.

    Unknown ethertypes leave the remainder as opaque payload.
    """
    if len(b) < 14:
        raise TruncatedFrame("frame shorter than an Ethernet header")
    r = _Reader(b)
    dst, src = r.take(6), r.take(6)
    ethertype = struct.unpack(">H", r.take(2))[0]
    vlans = []
    while ethertype == ETH_VLAN:
        tci = struct.unpack(">H", r.take(2))[0]
        vlans.append(VlanTag(vid=tci & 0xFFF, pcp=tci >> 13))
        if len(vlans) > 2:
            raise TruncatedFrame("more than two VLAN tags")
        ethertype = struct.unpack(">H", r.take(2))[0]
    mpls = []
    if ethertype == ETH_MPLS:
        while True:
            word = struct.unpack(">I", r.take(4))[0]
            entry = MplsLabelEntry(label=word >> 12, tc=(word >> 9) & 7,
                                   bos=bool((word >> 8) & 1), ttl=word & 0xFF)
            mpls.append(entry)
            if entry.bos:
                break
        ethertype = struct.unpack(">H", r.take(2))[0]
    pppoe = None
    ppp_proto = None
    ipv4 = None
    oam = None
    payload = b""
    if ethertype in (ETH_PPPOE_DISC, ETH_PPPOE_SESSION):
        ver_type, code, session_id, length = struct.unpack(">BBHH", r.take(6))
        pppoe = PppoeHeader(code=code, session_id=session_id, ver_type=ver_type)
        body = _Reader(r.take(length))
        if ethertype == ETH_PPPOE_SESSION and code == PPPOE_SESSION:
            ppp_proto = struct.unpack(">H", body.take(2))[0]
            if ppp_proto == PPP_IPV4:
                ipv4, payload = _decode_ipv4(body)
            else:
                payload = body.rest()
        else:
            payload = body.rest()
    elif ethertype == ETH_IPV4:
        ipv4, payload = _decode_ipv4(r)
    elif ethertype == ETH_OAM_CC:
        meg_id, seq, src_node = struct.unpack(">III", r.take(12))
        oam = OamCcPayload(meg_id=meg_id, seq=seq, src_node=src_node)
        payload = r.rest()
    else:
        payload = r.rest()
    return Packet(eth=EthernetHeader(dst_mac=dst, src_mac=src, ethertype=ethertype),
                  vlans=tuple(vlans), mpls=tuple(mpls), pppoe=pppoe,
                  ppp_proto=ppp_proto, ipv4=ipv4, oam=oam, payload=payload)


def _decode_ipv4(r: _Reader) -> tuple[Ipv4Header, bytes]:
    src, dst, ttl, proto, total = struct.unpack(">IIBBH", r.take(12))
    if total < 12:
        raise TruncatedFrame("ipv4 total length below header size")
    payload = r.take(total - 12)
    return Ipv4Header(src=src, dst=dst, ttl=ttl, proto=proto), payload


def push_mpls(p: Packet, label: int, tc: int = 0, ttl: int = 64) -> Packet:
    """Prepend a label entry; bottom-of-stack set iff the stack was empty."""
    if label != OAM_LABEL and not MIN_UNRESERVED_LABEL <= label <= MAX_LABEL:
        raise ReservedLabel(f"label {label} is reserved")
    entry = MplsLabelEntry(label=label, tc=tc, bos=not p.mpls, ttl=ttl)
    return replace(p, mpls=(entry,) + p.mpls)


def pop_mpls(p: Packet) -> Packet:
    """Remove the top label entry."""
    if not p.mpls:
        raise EmptyStack("pop on empty MPLS stack")
    return replace(p, mpls=p.mpls[1:])


def swap_mpls(p: Packet, label: int) -> Packet:
    """Replace the top label value, keeping tc/bos/ttl."""
    if not p.mpls:
        raise EmptyStack("swap on empty MPLS stack")
    top = replace(p.mpls[0], label=label)
    return replace(p, mpls=(top,) + p.mpls[1:])


def encap_pppoe(ppp_proto: int, payload, session_id: int,
                dst_mac: bytes, src_mac: bytes) -> Packet:
    """Build a PPPoE session data frame around a PPP payload.

    For ppp_proto 0x0021 the payload must be (Ipv4Header, bytes); every
    other protocol carries opaque bytes.
    """
    if session_id <= 0:
        raise MalformedPacket("data frames need session_id > 0")
    ipv4 = None
    if ppp_proto == PPP_IPV4:
        if not (isinstance(payload, tuple) and len(payload) == 2
                and isinstance(payload[0], Ipv4Header)):
            raise MalformedPacket("PPP 0x0021 payload must be (Ipv4Header, bytes)")
        ipv4, payload = payload
    elif not isinstance(payload, bytes):
        raise MalformedPacket("non-IP PPP payload must be bytes")
    return Packet(
        eth=EthernetHeader(dst_mac=dst_mac, src_mac=src_mac,
                           ethertype=ETH_PPPOE_SESSION),
        pppoe=PppoeHeader(code=PPPOE_SESSION, session_id=session_id),
        ppp_proto=ppp_proto, ipv4=ipv4, payload=payload)


def decap_pppoe(p: Packet):
    """Inverse of encap_pppoe: returns (session_id, ppp_proto, payload)."""
    if p.pppoe is None or p.pppoe.code != PPPOE_SESSION or p.ppp_proto is None:
        raise NotPppoeData("not a PPPoE session data frame")
    if p.ppp_proto == PPP_IPV4:
        return p.pppoe.session_id, p.ppp_proto, (p.ipv4, p.payload)
    return p.pppoe.session_id, p.ppp_proto, p.payload


def make_padi(src_mac: bytes) -> Packet:
    return Packet(eth=EthernetHeader(dst_mac=BROADCAST_MAC, src_mac=src_mac,
                                     ethertype=ETH_PPPOE_DISC),
                  pppoe=PppoeHeader(code=PPPOE_PADI, session_id=0))


def make_discovery(code: int, session_id: int, dst_mac: bytes,
                   src_mac: bytes, payload: bytes = b"") -> Packet:
    return Packet(eth=EthernetHeader(dst_mac=dst_mac, src_mac=src_mac,
                                     ethertype=ETH_PPPOE_DISC),
                  pppoe=PppoeHeader(code=code, session_id=session_id),
                  payload=payload)


def make_ppp_control(ppp_proto: int, session_id: int, dst_mac: bytes,
                     src_mac: bytes, payload: bytes) -> Packet:
    """LCP/IPCP frame: opaque control payload inside a session."""
    return Packet(eth=EthernetHeader(dst_mac=dst_mac, src_mac=src_mac,
                                     ethertype=ETH_PPPOE_SESSION),
                  pppoe=PppoeHeader(code=PPPOE_SESSION, session_id=session_id),
                  ppp_proto=ppp_proto, payload=payload)
