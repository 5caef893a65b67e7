"""Codec and header-transform tests for the packet model."""

import random

import pytest

from aggnetsim import packet as pkt
from aggnetsim.packet import (
    EthernetHeader, Ipv4Header, MplsLabelEntry, OamCcPayload, Packet,
    PppoeHeader, VlanTag, decap_pppoe, decode_frame, encap_pppoe,
    encode_frame, mac, pop_mpls, push_mpls, swap_mpls,
)

# Hand-encoded PADI per the RFC 2516 field layout:
#   ff:ff:ff:ff:ff:ff  02:00:00:00:00:01  88 63 | 11 09 00 00 00 00
PADI_BYTES = bytes.fromhex("ffffffffffff" "020000000001" "8863"
                           "1109" "0000" "0000")


def padi_packet():
    return Packet(
        eth=EthernetHeader(dst_mac=b"\xff" * 6,
                           src_mac=mac("02:00:00:00:00:01"),
                           ethertype=0x8863),
        pppoe=PppoeHeader(code=0x09, session_id=0))


def test_padi_encoding_matches_hand_layout():
    assert encode_frame(padi_packet()) == PADI_BYTES


def test_padi_decoding():
    p = decode_frame(PADI_BYTES)
    assert p.pppoe.code == 0x09
    assert p.pppoe.session_id == 0
    assert p.eth.ethertype == 0x8863
    assert p.payload == b""


def test_plain_ethernet_frame_is_14_bytes():
    p = Packet(eth=EthernetHeader(b"\x02" + b"\x00" * 5,
                                  b"\x02" + b"\x01" * 5, pkt.ETH_RAW))
    assert len(encode_frame(p)) == 14


def test_truncated_frame():
    with pytest.raises(pkt.TruncatedFrame):
        decode_frame(PADI_BYTES[:13])
    with pytest.raises(pkt.TruncatedFrame):
        decode_frame(PADI_BYTES[:16])  # pppoe header cut short


def test_ppp_without_pppoe_rejected():
    p = Packet(eth=EthernetHeader(b"\x02" * 6, b"\x04" * 6, pkt.ETH_RAW),
               ppp_proto=0x0021)
    with pytest.raises(pkt.MalformedPacket):
        encode_frame(p)


def _rand_mac(rng):
    return bytes([0x02] + [rng.randrange(256) for _ in range(5)])


def random_packet(rng: random.Random) -> Packet:
    """One well-formed packet; drives the round-trip property."""
    payload = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 40)))
    vlans = tuple(VlanTag(vid=rng.randrange(1, 4096), pcp=rng.randrange(8))
                  for _ in range(rng.randrange(3)))
    kind = rng.randrange(5)
    eth = lambda et: EthernetHeader(_rand_mac(rng), _rand_mac(rng), et)
    if kind == 0:  # raw / unknown ethertype
        return Packet(eth=eth(rng.choice([pkt.ETH_RAW, 0x1234, 0x86DD])),
                      vlans=vlans, payload=payload)
    if kind == 1:  # bare ipv4
        return Packet(eth=eth(pkt.ETH_IPV4), vlans=vlans,
                      ipv4=Ipv4Header(rng.randrange(2**32), rng.randrange(2**32),
                                      ttl=rng.randrange(1, 256),
                                      proto=rng.randrange(256)),
                      payload=payload)
    if kind == 2:  # pppoe discovery
        code = rng.choice(sorted(pkt.PPPOE_DISCOVERY_CODES))
        return Packet(eth=eth(pkt.ETH_PPPOE_DISC), vlans=vlans,
                      pppoe=PppoeHeader(code=code,
                                        session_id=rng.randrange(2**16)),
                      payload=payload)
    if kind == 3:  # pppoe session data, IPv4 or LCP-ish
        sid = rng.randrange(1, 2**16)
        if rng.random() < 0.5:
            return Packet(eth=eth(pkt.ETH_PPPOE_SESSION),
                          pppoe=PppoeHeader(code=0, session_id=sid),
                          ppp_proto=pkt.PPP_IPV4,
                          ipv4=Ipv4Header(rng.randrange(2**32),
                                          rng.randrange(2**32)),
                          payload=payload)
        return Packet(eth=eth(pkt.ETH_PPPOE_SESSION),
                      pppoe=PppoeHeader(code=0, session_id=sid),
                      ppp_proto=rng.choice([pkt.PPP_LCP, pkt.PPP_IPCP]),
                      payload=payload)
    # MPLS-wrapped: oam, ipv4 or opaque under a random stack
    inner = rng.randrange(3)
    if inner == 0:
        base = Packet(eth=eth(pkt.ETH_OAM_CC),
                      oam=OamCcPayload(meg_id=rng.randrange(2**32),
                                       seq=rng.randrange(2**32),
                                       src_node=rng.randrange(2**32)))
        labels = [13]
    elif inner == 1:
        base = Packet(eth=eth(pkt.ETH_IPV4),
                      ipv4=Ipv4Header(rng.randrange(2**32), rng.randrange(2**32)),
                      payload=payload)
        labels = [rng.randrange(16, 2**20)]
    else:
        base = Packet(eth=eth(pkt.ETH_RAW), payload=payload)
        labels = [rng.randrange(16, 2**20)]
    for _ in range(rng.randrange(3)):
        labels.insert(0, rng.randrange(16, 2**20))
    p = base
    for lab in reversed(labels):
        p = push_mpls(p, lab, tc=rng.randrange(8), ttl=rng.randrange(1, 256))
    return p


def test_roundtrip_property():
    rng = random.Random(20260810)
    for _ in range(1200):
        p = random_packet(rng)
        assert decode_frame(encode_frame(p)) == p


def test_push_sets_bos_only_on_empty_stack():
    base = Packet(eth=EthernetHeader(b"\x02" * 6, b"\x04" * 6, pkt.ETH_RAW))
    one = push_mpls(base, 17)
    assert one.mpls == (MplsLabelEntry(17, 0, True, 64),)
    two = push_mpls(one, 16)
    assert [e.label for e in two.mpls] == [16, 17]
    assert [e.bos for e in two.mpls] == [False, True]


def test_push_pop_inverse():
    base = Packet(eth=EthernetHeader(b"\x02" * 6, b"\x04" * 6, pkt.ETH_RAW),
                  payload=b"x")
    assert pop_mpls(push_mpls(base, 17, 0, 64)) == base


def test_pop_rules():
    base = Packet(eth=EthernetHeader(b"\x02" * 6, b"\x04" * 6, pkt.ETH_RAW))
    two = push_mpls(push_mpls(base, 17), 16)
    one = pop_mpls(two)
    assert [e.label for e in one.mpls] == [17]
    assert one.mpls[0].bos
    assert pop_mpls(one).mpls == ()
    with pytest.raises(pkt.EmptyStack):
        pop_mpls(base)


def test_reserved_labels_rejected():
    base = Packet(eth=EthernetHeader(b"\x02" * 6, b"\x04" * 6, pkt.ETH_RAW))
    for bad in (0, 1, 12, 14, 15):
        with pytest.raises(pkt.ReservedLabel):
            push_mpls(base, bad)
    push_mpls(base, 13)  # OAM channel injection is allowed
    push_mpls(base, 16)


def test_bos_invariant_after_random_push_pop():
    rng = random.Random(7)
    p = Packet(eth=EthernetHeader(b"\x02" * 6, b"\x04" * 6, pkt.ETH_RAW))
    depth = 0
    for _ in range(400):
        if depth and rng.random() < 0.4:
            p = pop_mpls(p)
            depth -= 1
        else:
            p = push_mpls(p, rng.randrange(16, 2**20))
            depth += 1
        assert len(p.mpls) == depth
        for i, e in enumerate(p.mpls):
            assert e.bos == (i == depth - 1)


def test_swap_keeps_bos():
    base = push_mpls(Packet(eth=EthernetHeader(b"\x02" * 6, b"\x04" * 6,
                                               pkt.ETH_RAW)), 17)
    swapped = swap_mpls(base, 99)
    assert swapped.mpls[0].label == 99 and swapped.mpls[0].bos


def test_encap_decap_pppoe():
    ip = Ipv4Header(src=pkt.ipv4_int("10.1.0.42"), dst=pkt.ipv4_int("192.0.2.1"))
    p = encap_pppoe(pkt.PPP_IPV4, (ip, b"hello"), 5,
                    dst_mac=b"\x02" * 6, src_mac=b"\x04" * 6)
    assert p.eth.ethertype == 0x8864
    assert p.pppoe.session_id == 5
    assert decap_pppoe(p) == (5, pkt.PPP_IPV4, (ip, b"hello"))


def test_decap_of_discovery_raises():
    with pytest.raises(pkt.NotPppoeData):
        decap_pppoe(padi_packet())


def test_encap_roundtrip_bytes():
    rng = random.Random(3)
    for _ in range(100):
        payload = bytes(rng.randrange(256) for _ in range(rng.randrange(30)))
        p = encap_pppoe(pkt.PPP_LCP, payload, rng.randrange(1, 65536),
                        _rand_mac(rng), _rand_mac(rng))
        assert decode_frame(encode_frame(p)) == p


def test_pppoe_code_ethertype_consistency():
    # session data on the discovery ethertype must not encode
    p = Packet(eth=EthernetHeader(b"\x02" * 6, b"\x04" * 6, pkt.ETH_PPPOE_DISC),
               pppoe=PppoeHeader(code=0, session_id=9))
    with pytest.raises(pkt.MalformedPacket):
        encode_frame(p)
