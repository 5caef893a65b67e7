"""Switch pipeline, fast-failover and OAM processing tests."""

import pytest

from aggnetsim import dataplane as dp
from aggnetsim import packet as pk
from aggnetsim.dataplane import (
    Bucket, Deliver, Drop, Emit, FlowEntry, Group, GroupAction, OamSink,
    OamSource, Output, PacketIn, PopMpls, PushMpls, PwEndpoint, SwitchState,
    ToController,
)
from aggnetsim.packet import EthernetHeader, Ipv4Header, OamCcPayload, Packet


def raw_frame(payload=b"x"):
    return Packet(eth=EthernetHeader(b"\x02" * 6, b"\x04" * 6, pk.ETH_RAW),
                  payload=payload)


def switch(ports=(1, 2, 3, 4), processing=True):
    s = SwitchState("sw0", 0, processing_capable=processing)
    for p in ports:
        s.add_port(p)
    return s


def test_empty_tables_miss_goes_to_controller():
    s = switch()
    fx = s.process_packet(1, raw_frame(), 0)
    assert fx == [PacketIn("table_miss", raw_frame(), 1)]


def test_priority_rule():
    s = switch()
    s.apply_flow_mod("add", FlowEntry(0, 10, {"in_port": 1}, [Output(2)]))
    s.apply_flow_mod("add", FlowEntry(0, 20, {"in_port": 1}, [Output(3)]))
    fx = s.process_packet(1, raw_frame(), 0)
    assert fx == [Emit(3, raw_frame())]


def test_ff_group_skips_dead_watch():
    s = switch()
    s.ports[3].up = False
    s.apply_group_mod("add", Group(7, [Bucket(watch=3, actions=[Output(3)]),
                                       Bucket(watch=4, actions=[Output(4)])]))
    s.apply_flow_mod("add", FlowEntry(0, 10, {"in_port": 1}, [GroupAction(7)]))
    fx = s.process_packet(1, raw_frame(), 0)
    assert fx == [Emit(4, raw_frame())]


def test_select_ff_bucket():
    s = switch()
    g = Group(9, [Bucket(watch=1), Bucket(watch=2)])
    s.apply_group_mod("add", g)
    assert s.select_ff_bucket(g) == 0
    s.ports[1].up = False
    assert s.select_ff_bucket(g) == 1
    s.ports[2].up = False
    with pytest.raises(dp.NoLiveBucket):
        s.select_ff_bucket(g)


def test_flow_mod_overwrite_and_delete():
    s = switch()
    s.apply_flow_mod("add", FlowEntry(0, 10, {"in_port": 1}, [Output(2)]))
    s.apply_flow_mod("add", FlowEntry(0, 10, {"in_port": 1}, [Output(3)]))
    assert len(s.tables[0]) == 1
    assert s.process_packet(1, raw_frame(), 0) == [Emit(3, raw_frame())]
    s.apply_flow_mod("delete", FlowEntry(0, 0, {"in_port": 1}, []))
    assert s.tables[0] == {}
    s.apply_flow_mod("delete", FlowEntry(0, 0, {"in_port": 1}, []))  # no-op


def test_unknown_group_rejected():
    s = switch()
    with pytest.raises(dp.UnknownGroup):
        s.apply_flow_mod("add", FlowEntry(0, 1, {}, [GroupAction(99)]))


def test_unknown_port_rejected():
    s = switch()
    with pytest.raises(dp.UnknownPort):
        s.apply_flow_mod("add", FlowEntry(0, 1, {}, [Output(77)]))


def test_output_to_down_port_drops():
    s = switch()
    s.apply_flow_mod("add", FlowEntry(0, 10, {"in_port": 1}, [Output(2)]))
    s.ports[2].up = False
    fx = s.process_packet(1, raw_frame(), 0)
    assert fx == [Drop("port_down", raw_frame())]


def test_goto_must_increase():
    s = switch()
    with pytest.raises(ValueError):
        s.apply_flow_mod("add", FlowEntry(1, 1, {}, [], goto_table=1))


def test_pipeline_deterministic():
    s = switch()
    s.apply_flow_mod("add", FlowEntry(0, 10, {"in_port": 1},
                                      [PushMpls(17)], goto_table=None))
    a = s.process_packet(1, raw_frame(), 5)
    b = s.process_packet(1, raw_frame(), 5)
    assert a == b


def test_mpls_swap_pop_chain():
    s = switch()
    s.apply_flow_mod("add", FlowEntry(0, 100, {"mpls_label": 17},
                                      [dp.SwapMpls(18), Output(2)]))
    p = pk.push_mpls(raw_frame(), 17)
    fx = s.process_packet(1, p, 0)
    assert isinstance(fx[0], Emit)
    assert fx[0].packet.mpls[0].label == 18
    assert fx[0].packet.mpls[0].bos


def test_pop_then_demux_in_next_table():
    s = switch()
    s.apply_flow_mod("add", FlowEntry(0, 100, {"mpls_label": 20},
                                      [PopMpls()], goto_table=1))
    s.apply_flow_mod("add", FlowEntry(1, 100, {"mpls_label": 30, "mpls_bos": True},
                                      [PopMpls(), Output(4)]))
    p = pk.push_mpls(pk.push_mpls(raw_frame(), 30), 20)
    fx = s.process_packet(1, p, 0)
    assert fx == [Emit(4, raw_frame())]


# --- OAM -------------------------------------------------------------------

def oam_template(meg):
    return Packet(eth=EthernetHeader(pk.BROADCAST_MAC, b"\x02" * 6,
                                     pk.ETH_OAM_CC),
                  oam=OamCcPayload(meg_id=meg, seq=0, src_node=0))


def test_oam_source_injection_completes_headers():
    s = switch()
    lp = s.attach_logical_port(OamSource(meg_id=1, interval_us=3333,
                                         template=oam_template(1)))
    s.apply_flow_mod("add", FlowEntry(0, 100, {"in_port": lp},
                                      [PushMpls(17), Output(2)]))
    fx = s.oam_emit_cc(lp, 0)
    assert len(fx) == 1 and isinstance(fx[0], Emit)
    cc = fx[0].packet
    # transport label above the OAM channel label at bottom of stack
    assert [(e.label, e.bos) for e in cc.mpls] == [(17, False), (13, True)]
    assert cc.oam.seq == 0
    fx2 = s.oam_emit_cc(lp, 3333)
    assert fx2[0].packet.oam.seq == 1


def test_oam_source_needs_processing_capability():
    s = switch(processing=False)
    with pytest.raises(dp.ProcessingUnsupported):
        s.attach_logical_port(OamSource(meg_id=1, interval_us=3333,
                                        template=oam_template(1)))


def test_oam_sink_loc_arithmetic():
    s = switch()
    lp = s.attach_logical_port(OamSink(meg_id=5, k_threshold=3,
                                       interval_us=3333))
    sink = s.logical_ports[lp].kind
    sink.last_rx_us = 0
    fx = s.oam_on_tick(lp, 9999)
    assert fx == [] and sink.live          # 9999 is not > 9999
    fx = s.oam_on_tick(lp, 10000)
    assert len(fx) == 1 and fx[0].reason == "oam_loc"
    assert not sink.live
    # edge-triggered: second tick past threshold stays quiet
    assert s.oam_on_tick(lp, 13333) == []


def test_oam_rx_keeps_live():
    s = switch()
    lp = s.attach_logical_port(OamSink(meg_id=5, k_threshold=3,
                                       interval_us=3333))
    cc = pk.push_mpls(oam_template(5), 13)
    s.oam_on_receive(lp, cc, 9998)
    assert s.oam_on_tick(lp, 10000) == []
    assert s.logical_ports[lp].kind.live


def test_oam_meg_mismatch():
    s = switch()
    lp = s.attach_logical_port(OamSink(meg_id=5, k_threshold=3,
                                       interval_us=3333))
    with pytest.raises(dp.MegMismatch):
        s.oam_on_receive(lp, pk.push_mpls(oam_template(6), 13), 0)


def test_sink_liveness_drives_group():
    s = switch()
    lp = s.attach_logical_port(OamSink(meg_id=5, k_threshold=3,
                                       interval_us=3333))
    s.apply_group_mod("add", Group(3, [Bucket(watch=lp, actions=[Output(2)]),
                                       Bucket(watch=3, actions=[Output(3)])]))
    s.apply_flow_mod("add", FlowEntry(0, 10, {"in_port": 1}, [GroupAction(3)]))
    assert s.process_packet(1, raw_frame(), 0) == [Emit(2, raw_frame())]
    s.oam_on_tick(lp, 20000)  # LOC
    assert s.process_packet(1, raw_frame(), 20001) == [Emit(3, raw_frame())]


def test_all_watches_down_notifies_controller():
    s = switch()
    s.ports[2].up = False
    s.ports[3].up = False
    s.apply_group_mod("add", Group(3, [Bucket(watch=2, actions=[Output(2)]),
                                       Bucket(watch=3, actions=[Output(3)])]))
    s.apply_flow_mod("add", FlowEntry(0, 10, {"in_port": 1}, [GroupAction(3)]))
    fx = s.process_packet(1, raw_frame(), 0)
    assert any(isinstance(e, Drop) and e.reason == "no_live_bucket" for e in fx)
    assert any(isinstance(e, PacketIn) and e.reason == "no_live_bucket"
               for e in fx)


# --- logical-port processing -------------------------------------------------

def test_pw_endpoint_wraps_under_tunnel():
    s = switch()
    s.apply_group_mod("add", Group(11, [Bucket(watch=2,
                                               actions=[PushMpls(17), Output(2)])]))
    lp = s.attach_logical_port(PwEndpoint(pw_id="pw1", pw_label_out=16,
                                          pw_label_in=21,
                                          tunnel=("group", 11),
                                          attachment=("port", 1)))
    frame = raw_frame(b"customer")
    wrapped, nxt = dp.lp_process(s, lp, "egress", frame)
    assert nxt == ("group", 11)
    assert [(e.label, e.bos) for e in wrapped.mpls] == [(16, True)]
    assert pk.decode_frame(wrapped.payload) == frame


def test_pw_endpoint_unwrap_roundtrip():
    s = switch()
    s.apply_group_mod("add", Group(11, [Bucket(watch=2, actions=[Output(2)])]))
    lp = s.attach_logical_port(PwEndpoint(pw_id="pw1", pw_label_out=16,
                                          pw_label_in=16,
                                          tunnel=("group", 11),
                                          attachment=("port", 1)))
    frame = raw_frame(b"customer")
    wrapped, _ = dp.lp_process(s, lp, "egress", frame)
    unwrapped, att = dp.lp_process(s, lp, "ingress", wrapped)
    assert unwrapped == frame and att == ("port", 1)


def test_pw_unwrap_wrong_label():
    s = switch()
    s.apply_group_mod("add", Group(11, [Bucket(watch=2, actions=[Output(2)])]))
    lp = s.attach_logical_port(PwEndpoint(pw_id="pw1", pw_label_out=16,
                                          pw_label_in=16,
                                          tunnel=("group", 11),
                                          attachment=("port", 1)))
    with pytest.raises(dp.DecapMismatch):
        dp.lp_process(s, lp, "ingress", pk.push_mpls(raw_frame(), 99))


def test_pppoe_termination_wrap():
    term = dp.PppoeTermination(sessions={5: (b"\x0c" * 6, b"\x0b" * 6, 999)})
    ip_pkt = Packet(eth=EthernetHeader(b"\x00" * 6, b"\x00" * 6, pk.ETH_IPV4),
                    ipv4=Ipv4Header(src=1, dst=2), payload=b"d")
    out = dp.pppoe_wrap(term, 5, ip_pkt)
    assert out.eth.ethertype == pk.ETH_PPPOE_SESSION
    assert out.pppoe.session_id == 5
    assert out.eth.dst_mac == b"\x0c" * 6


def test_push_pop_pppoe_actions_inverse():
    ip_pkt = Packet(eth=EthernetHeader(b"\x0c" * 6, b"\x0b" * 6, pk.ETH_IPV4),
                    ipv4=Ipv4Header(src=1, dst=2), payload=b"d")
    sess = dp.push_pppoe_action(ip_pkt, 7)
    assert sess.pppoe.session_id == 7 and sess.ppp_proto == pk.PPP_IPV4
    assert dp.pop_pppoe_action(sess) == ip_pkt


def test_attach_requires_processing():
    s = switch(processing=False)
    with pytest.raises(dp.ProcessingUnsupported):
        s.attach_logical_port(PwEndpoint(pw_id="p", pw_label_out=16,
                                         pw_label_in=16, tunnel=("port", 1),
                                         attachment=("port", 1)))
