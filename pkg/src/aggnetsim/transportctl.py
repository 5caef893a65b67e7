"""Aggregation-domain MPLS transport controller.

One control layer over a set of switches: the internal block discovers
the topology, computes merging trees (multipoint-to-point LSPs) and
edge-disjoint protected pairs, and repairs trees when links fail; the
external block represents the whole domain as a single router toward
scripted core peers and nests end-to-end LSPs into the internal ones; the
PW manager stitches Ethernet attachment circuits over either transport.

Table usage on every switch: table 0 classifies (label swaps, attachment
circuits, OAM injection), table 1 demultiplexes inner labels after a pop
(PW, per-flow, e2e, OAM channel), table 2 is the service layer owned by
controller clients.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

from . import ctlproto as cp
from . import dataplane as dp
from . import packet as pk
from . import pathcalc
from .packet import Packet
from .simnet import Channel, Reactor

log = logging.getLogger(__name__)

PRIO_LABEL = 100
PRIO_AC = 50
PRIO_FLOW = 60

DISCOVERY_QUIET_US = 5000


class Unreachable(Exception):
    pass


class SignalingRejected(Exception):
    pass


class Partition(Exception):
    pass


# --- stub core-peer signaling (replaces OSPF/LDP/MP-BGP) ---------------------

@dataclass(frozen=True)
class LspRequest:
    e2e_id: str
    label: int        # label the requester wants to receive on
    target: str       # border/peer identifier


@dataclass(frozen=True)
class LspAccept:
    e2e_id: str
    label: int        # label the peer wants to receive on


@dataclass(frozen=True)
class LspReject:
    e2e_id: str
    reason: str


@dataclass(frozen=True)
class LspTeardown:
    e2e_id: str


@dataclass(frozen=True)
class DomainAdvert:
    router_id: str
    interfaces: tuple  # of (node, port, up)


# --- controller-side records ---------------------------------------------------

class LabelAllocator:
    """Per-node label space; labels are never reused within a run."""

    def __init__(self):
        self._next = pk.MIN_UNRESERVED_LABEL
        self._used = {pk.OAM_LABEL}

    def reserve(self, label: int) -> None:
        self._used.add(label)

    def allocate(self) -> int:
        while self._next in self._used:
            self._next += 1
        label = self._next
        self._used.add(label)
        self._next += 1
        return label


@dataclass
class MergingTree:
    dst: str
    parent: dict            # node -> next hop toward dst
    dist: dict              # node -> distance in original weights
    labels: dict            # node -> incoming label at that node


@dataclass
class TreeFlow:
    flow_id: str
    ingress: tuple          # (node, port)
    egress: tuple           # (node, port)
    eth_dst: bytes
    flow_label: int
    transport: str          # "tree" | "protected"
    lsp_id: str | None = None
    active: bool = True


@dataclass
class ProtectedLsp:
    lsp_id: str
    a: str
    b: str
    primary: list
    backup: list
    groups: dict = field(default_factory=dict)   # node -> group id
    sinks: dict = field(default_factory=dict)    # (node, path) -> lp id
    sources: dict = field(default_factory=dict)  # (node, path) -> lp id
    megs: dict = field(default_factory=dict)     # (dir_src, path) -> meg id


@dataclass
class PwRecord:
    pw_id: str
    a: tuple                # (node, port) or (node, "pipeline")
    b: tuple
    label_ab: int
    label_ba: int
    lp_a: int = 0
    lp_b: int = 0
    transport: str = "protected"      # or "tree"
    lsp_id: str | None = None
    tunnel_groups: dict = field(default_factory=dict)  # node -> group id
    client_b: str | None = None
    b_vport: int | None = None


@dataclass
class E2eLsp:
    e2e_id: str
    role: str               # head | transit | tail
    head: str
    border: tuple           # (node, port) toward the core peer
    peer: str
    local_label: int = 0    # we receive on this (downstream)
    remote_label: int = 0   # peer receives on this (upstream)
    group_id: int = 0
    client: str | None = None
    gw_lp: int = 0
    state: str = "signaling"


class TransportController(Reactor):
    """Sequential reactor owning one domain of switches."""

    def __init__(self, engine, name: str, domain: list, node_index: dict,
                 weights: dict, border: dict | None = None,
                 quiesce_us: int = DISCOVERY_QUIET_US,
                 processing: dict | None = None):
        super().__init__(engine, name)
        self.domain = list(domain)
        self.node_index = dict(node_index)          # node id -> numeric index
        self.index_node = {v: k for k, v in node_index.items()}
        self.weights = dict(weights)                # edge key -> metric
        self.border = dict(border or {})            # peer id -> (node, port)
        self.processing = dict(processing or {})
        self.quiesce_us = quiesce_us

        self.switch_chans: dict[str, Channel] = {}
        self.core_chans: dict[str, Channel] = {}
        self.client_chans: dict[str, Channel] = {}

        # discovered topology
        self.edges: dict[tuple, dict] = {}          # (u,v) sorted -> {weight, up}
        self.port_peer: dict[tuple, tuple] = {}     # (node, port) -> (node, port)
        self.out_port: dict[tuple, int] = {}        # (node, nbr) -> port

        self.allocators = {n: LabelAllocator() for n in self.domain}
        self.lp_counter = {n: dp.LOGICAL_PORT_BASE for n in self.domain}
        self.trees: dict[str, MergingTree] = {}
        self.flows: dict[str, TreeFlow] = {}
        self.plsps: dict[str, ProtectedLsp] = {}
        self.pws: dict[str, PwRecord] = {}
        self.e2e: dict[str, E2eLsp] = {}
        self.virtual_switches: dict[str, cp.VirtualSwitch] = {}
        self._vport_next: dict[str, int] = {}

        self.discovery_complete = False
        self._quiesce_arm = 0
        self._meg_next = 1
        self._group_next: dict[str, int] = {}
        self._req_next = 1
        self._pending_replies: dict[int, tuple] = {}

    # ------------------------------------------------------------------ wiring

    def wire_switch(self, node_id: str, chan: Channel) -> None:
        self.switch_chans[node_id] = chan

    def wire_core_peer(self, peer_id: str, chan: Channel) -> None:
        self.core_chans[peer_id] = chan

    def register_client(self, client_id: str, chan: Channel | None,
                        ports: dict, names: dict | None = None,
                        match_fields: set | None = None) -> cp.VirtualSwitch:
        """Create the client's virtual switch over concrete endpoints.

        ports: vport -> (node, concrete port).
        """
        policy = cp.ViewPolicy(client_id=client_id,
                               allowed_ports=set(ports),
                               allowed_match_fields=match_fields or set())
        vs = cp.create_virtual_switch(client_id, policy, ports, names)
        self.virtual_switches[client_id] = vs
        self._vport_next[client_id] = max(ports, default=0) + 1
        if chan is not None:
            self.client_chans[client_id] = chan
        return vs

    def vs_add_port(self, client_id: str, target: tuple, name: str) -> int:
        vs = self.virtual_switches[client_id]
        vp = self._vport_next[client_id]
        self._vport_next[client_id] += 1
        vs.add_port(vp, target, name)
        chan = self.client_chans.get(client_id)
        if chan is not None:
            self.send(chan, cp.PortStatus(port=vp, up=True, name=name))
        return vp

    def vs_remove_port(self, client_id: str, vp: int) -> None:
        vs = self.virtual_switches[client_id]
        name = vs.port_names.get(vp, "")
        vs.remove_port(vp)
        chan = self.client_chans.get(client_id)
        if chan is not None:
            self.send(chan, cp.PortStatus(port=vp, up=False, name=name))

    # ------------------------------------------------------------- discovery

    def start(self) -> None:
        """Kick topology discovery: hello + features per switch, then flood."""
        for node in sorted(self.switch_chans):
            self.send(self.switch_chans[node], cp.Hello())
            self.send(self.switch_chans[node], cp.FeaturesRequest())
        self._arm_quiesce()

    def _arm_quiesce(self) -> None:
        self._quiesce_arm += 1
        token = ("quiesce", self._quiesce_arm)
        self.schedule_after(self.quiesce_us, token)

    def on_timer(self, token, now: int) -> None:
        if token[0] == "quiesce":
            if token[1] == self._quiesce_arm and not self.discovery_complete:
                self.discovery_complete = True
                self.engine.record("discovery_done", self.name,
                                   edges=len(self.edges))
                self.advertise_domain()
        elif token[0] == "confirm":
            _, chan, msg = token
            self.send(chan, msg)

    def _probe_frame(self, node: str, port: int) -> Packet:
        payload = struct.pack(">II", self.node_index[node], port)
        return Packet(eth=pk.EthernetHeader(pk.BROADCAST_MAC,
                                            self.node_mac(node),
                                            pk.ETH_TOPO_PROBE),
                      payload=payload)

    def node_mac(self, node: str) -> bytes:
        idx = self.node_index[node]
        return bytes([0x02, 0, 0, 0, (idx >> 8) & 255, idx & 255])

    def _flood_probes(self, node: str, ports: list) -> None:
        chan = self.switch_chans[node]
        for port in ports:
            self.send(chan, cp.PacketOutMsg(packet=self._probe_frame(node, port),
                                            out_port=port))

    def _edge_key(self, u: str, v: str) -> tuple:
        return (u, v) if u <= v else (v, u)

    def _learn_edge(self, n1: str, p1: int, n2: str, p2: int) -> None:
        key = self._edge_key(n1, n2)
        weight = self.weights.get(key, 1)
        fresh = key not in self.edges
        was_down = not fresh and not self.edges[key]["up"]
        self.edges[key] = {"weight": weight, "up": True}
        self.port_peer[(n1, p1)] = (n2, p2)
        self.port_peer[(n2, p2)] = (n1, p1)
        self.out_port[(n1, n2)] = p1
        self.out_port[(n2, n1)] = p2
        if fresh and not self.discovery_complete:
            self._arm_quiesce()
        if was_down and self.discovery_complete:
            self._recompute_after_change(key, reason="edge_up")

    def live_adj(self) -> dict:
        adj: dict = {n: {} for n in self.domain}
        for (u, v), e in self.edges.items():
            if e["up"]:
                adj[u][v] = e["weight"]
                adj[v][u] = e["weight"]
        return adj

    # -------------------------------------------------------------- messages

    def handle_message(self, chan: Channel, msg, now: int) -> None:
        if isinstance(msg, cp.PacketInMsg):
            self._on_packet_in(chan, msg, now)
        elif isinstance(msg, cp.PortStatus):
            self._on_port_status(chan, msg, now)
        elif isinstance(msg, cp.FeaturesReply):
            node = self.index_node.get(msg.datapath_id)
            if node in self.switch_chans:
                self._flood_probes(node, [d.port for d in msg.ports])
        elif isinstance(msg, cp.ServiceRequest):
            client = self._chan_client(chan)
            self.svc_dispatch(msg.op, msg.args,
                              reply_to=(chan, msg.req_id), client=client)
        elif isinstance(msg, (LspAccept, LspReject)):
            self._on_signaling(chan, msg)
        elif isinstance(msg, cp.FlowModMsg):
            self._on_client_flow_mod(chan, msg)
        elif isinstance(msg, cp.PacketOutMsg):
            self._on_client_packet_out(chan, msg)
        elif isinstance(msg, (cp.ErrorMsg, cp.Hello, LspTeardown, DomainAdvert,
                              cp.ServiceReply)):
            self.engine.record_event("ctl_note", self.name,
                                     msg=type(msg).__name__)
        else:
            log.debug("%s: unhandled %s", self.name, type(msg).__name__)

    def _chan_client(self, chan: Channel) -> str | None:
        for cid, c in self.client_chans.items():
            if c is chan:
                return cid
        return None

    def _chan_switch(self, chan: Channel) -> str | None:
        for nid, c in self.switch_chans.items():
            if c is chan:
                return nid
        return None

    def _on_packet_in(self, chan: Channel, msg: cp.PacketInMsg, now: int) -> None:
        node = self._chan_switch(chan)
        if node is None:
            return
        p = msg.packet
        if p.eth.ethertype == pk.ETH_TOPO_PROBE and not p.mpls:
            idx, origin_port = struct.unpack(">II", p.payload[:8])
            origin = self.index_node.get(idx)
            if origin is not None:
                self._learn_edge(origin, origin_port, node, msg.in_port)
            return
        if msg.reason == "oam_loc":
            self.engine.record("loc_notified", self.name, at_node=node,
                               meg=p.oam.meg_id if p.oam else -1)
            return
        for cid in sorted(self.virtual_switches):
            vs = self.virtual_switches[cid]
            try:
                surfaced = cp.surface_packet_in(vs, node, msg.in_port,
                                                p, msg.reason)
            except cp.UnmappedPort:
                continue
            up = self.client_chans.get(cid)
            if up is not None:
                self.send(up, surfaced)
            return
        self.engine.record_event("pktin_unmapped", self.name, at_node=node,
                                 port=msg.in_port)

    def _on_port_status(self, chan: Channel, msg: cp.PortStatus, now: int) -> None:
        node = self._chan_switch(chan)
        if node is None:
            return
        for peer, (bn, bp) in sorted(self.border.items()):
            if (bn, bp) == (node, msg.port):
                self.engine.record("border_change", self.name, peer=peer,
                                   up=msg.up)
                self.advertise_domain()
                return
        peer_end = self.port_peer.get((node, msg.port))
        if peer_end is None:
            return
        key = self._edge_key(node, peer_end[0])
        edge = self.edges.get(key)
        if edge is None:
            return
        if not msg.up and edge["up"]:
            edge["up"] = False
            self.engine.record("edge_down", self.name, edge=f"{key[0]}-{key[1]}")
            self._recompute_after_change(key, reason="edge_down")
        elif msg.up and not edge["up"]:
            # re-probe; the returning PacketIn re-adds the edge
            self.send(self.switch_chans[node],
                      cp.PacketOutMsg(packet=self._probe_frame(node, msg.port),
                                      out_port=msg.port))

    def _on_signaling(self, chan: Channel, msg) -> None:
        rec = self.e2e.get(msg.e2e_id)
        if rec is None or rec.state != "signaling":
            return
        if isinstance(msg, LspReject):
            rec.state = "rejected"
            self.engine.record("e2e_rejected", self.name, e2e=msg.e2e_id)
            self._reply_pending(("e2e", msg.e2e_id), ok=False,
                                error="SignalingRejected")
            return
        rec.remote_label = msg.label
        self._install_e2e(rec)

    # ------------------------------------------------------- service dispatch

    def svc_dispatch(self, op: str, args: dict, reply_to=None,
                     client: str | None = None) -> dict | None:
        """Entry point shared by channel requests and management calls."""
        try:
            if op == "create_pw":
                result = self.create_pw(args)
            elif op == "retarget_pw":
                result = self.retarget_pw(args)
            elif op == "setup_e2e":
                result = self.setup_e2e_lsp(args, client=client,
                                            reply_to=reply_to)
                if result is None:
                    return None      # replied asynchronously after signaling
            elif op == "teardown_e2e":
                result = self.teardown_e2e(args["e2e_id"])
            elif op == "flow_create":
                result = self.flow_create(args)
            elif op == "flow_remove":
                result = self.flow_remove(args["flow_id"])
            else:
                raise ValueError(f"unknown service op {op!r}")
        except Exception as exc:  # surfaced to the requester, not fatal
            log.info("%s: %s failed: %s", self.name, op, exc)
            self._send_reply(reply_to, ok=False, error=type(exc).__name__)
            if reply_to is None:
                raise
            return None
        self._confirm_reply(reply_to, result)
        return result

    def _send_reply(self, reply_to, ok: bool, result: dict | None = None,
                    error: str = "") -> None:
        if reply_to is None:
            return
        chan, req_id = reply_to
        if callable(chan):
            chan(ok, result or {}, error)
            return
        self.send(chan, cp.ServiceReply(req_id=req_id, ok=ok,
                                        result=result or {}, error=error))

    def _confirm_reply(self, reply_to, result: dict) -> None:
        """Reply once the sent FlowMods have committed at the switches."""
        if reply_to is None:
            return
        chan, req_id = reply_to
        latency = max((c.latency_us for c in self.switch_chans.values()),
                      default=0)
        at = max(self.engine.now_us, self.busy_until + latency) + 1
        if callable(chan):
            self.engine.schedule(at, lambda now: chan(True, result, ""))
            return
        msg = cp.ServiceReply(req_id=req_id, ok=True, result=result)
        self.engine.schedule(at, lambda now: self.send(chan, msg))

    def _reply_pending(self, key, ok: bool, result: dict | None = None,
                       error: str = "") -> None:
        pend = self._pending_replies.pop(key, None)
        if pend is None:
            return
        if ok:
            self._confirm_reply(pend, result or {})
        else:
            self._send_reply(pend, ok=False, error=error)

    # ----------------------------------------------------------- flow sending

    def _mod(self, node: str, op: str, table: int, priority: int, match: dict,
             actions: list, goto: int | None = None, tag: str | None = None) -> None:
        entry = dp.FlowEntry(table_id=table, priority=priority, match=match,
                             actions=actions, goto_table=goto)
        self.send(self.switch_chans[node], cp.FlowModMsg(op=op, entry=entry,
                                                         tag=tag))

    def _group(self, node: str, op: str, group: dp.Group,
               tag: str | None = None) -> None:
        self.send(self.switch_chans[node], cp.GroupModMsg(op=op, group=group,
                                                          tag=tag))

    def _next_group_id(self, node: str) -> int:
        gid = self._group_next.get(node, 1)
        self._group_next[node] = gid + 1
        return gid

    def _attach_lp(self, node: str, kind) -> int:
        """Attach a logical port; ids mirror the switch's deterministic counter."""
        if isinstance(kind, dp.PROCESSING_KINDS) and not self.processing.get(node):
            raise dp.ProcessingUnsupported(f"{node} has no processing plane")
        lp_id = self.lp_counter[node]
        self.lp_counter[node] += 1
        self.send(self.switch_chans[node], cp.PortModMsg(op="add", kind=kind))
        return lp_id

    # ------------------------------------------------------------- trees

    def compute_merging_tree(self, dst: str) -> MergingTree:
        """Shortest-path tree toward dst with fresh per-(node,dst) labels."""
        parent, dist = pathcalc.shortest_path_tree(self.live_adj(), dst)
        labels = {dst: self.allocators[dst].allocate()}
        for node in sorted(parent):
            labels[node] = self.allocators[node].allocate()
        return MergingTree(dst=dst, parent=parent, dist=dist, labels=labels)

    def install_merging_tree(self, tree: MergingTree,
                             tag: str | None = None) -> int:
        """Swap-and-forward entries at every member, pop at the root."""
        count = 0
        for node in sorted(tree.parent):
            nxt = tree.parent[node]
            self._mod(node, "add", dp.TABLE_TRANSPORT, PRIO_LABEL,
                      {"mpls_label": tree.labels[node]},
                      [dp.SwapMpls(tree.labels[nxt]),
                       dp.Output(self.out_port[(node, nxt)])], tag=tag)
            count += 1
        self._mod(tree.dst, "add", dp.TABLE_TRANSPORT, PRIO_LABEL,
                  {"mpls_label": tree.labels[tree.dst]},
                  [dp.PopMpls()], goto=dp.TABLE_DEMUX, tag=tag)
        return count + 1

    def ensure_tree(self, dst: str) -> MergingTree:
        tree = self.trees.get(dst)
        if tree is None:
            tree = self.compute_merging_tree(dst)
            self.install_merging_tree(tree)
            self.trees[dst] = tree
        return tree

    def _ingress_actions(self, tree: MergingTree, node: str) -> list:
        nxt = tree.parent.get(node)
        if nxt is None:
            raise Unreachable(f"{node} cannot reach {tree.dst}")
        return [dp.PushMpls(tree.labels[nxt]),
                dp.Output(self.out_port[(node, nxt)])]

    # ------------------------------------------------------------- tree flows

    def flow_create(self, args: dict) -> dict:
        flow_id = args["flow_id"]
        if flow_id in self.flows:
            return {"flow_id": flow_id, "existing": True}
        ingress = tuple(args["ingress"])
        egress = tuple(args["egress"])
        eth_dst = args["eth_dst"]
        transport = args.get("transport", "tree")
        src_node, src_port = ingress
        dst_node, dst_port = egress
        if src_node not in self.domain or dst_node not in self.domain:
            raise Unreachable("flow endpoint outside domain")
        flow_label = self.allocators[dst_node].allocate()
        lsp_id = None
        match = {"in_port": src_port, "eth_dst": eth_dst}
        if src_node == dst_node:
            self._mod(src_node, "add", dp.TABLE_TRANSPORT, PRIO_FLOW, match,
                      [dp.Output(dst_port)])
        elif transport == "protected":
            plsp = self.ensure_protected_lsp(src_node, dst_node)
            lsp_id = plsp.lsp_id
            self._mod(src_node, "add", dp.TABLE_TRANSPORT, PRIO_FLOW, match,
                      [dp.PushMpls(flow_label),
                       dp.GroupAction(plsp.groups[src_node])])
        else:
            tree = self.ensure_tree(dst_node)
            self._mod(src_node, "add", dp.TABLE_TRANSPORT, PRIO_FLOW, match,
                      self._flow_push(tree, src_node, flow_label))
        if src_node != dst_node:
            self._mod(dst_node, "add", dp.TABLE_DEMUX, PRIO_LABEL,
                      {"mpls_label": flow_label, "mpls_bos": True},
                      [dp.PopMpls(), dp.Output(dst_port)])
        self.flows[flow_id] = TreeFlow(flow_id=flow_id, ingress=ingress,
                                       egress=egress, eth_dst=eth_dst,
                                       flow_label=flow_label,
                                       transport=transport, lsp_id=lsp_id)
        return {"flow_id": flow_id, "label": flow_label}

    def _flow_push(self, tree: MergingTree, node: str, flow_label: int) -> list:
        head = self._ingress_actions(tree, node)
        return [dp.PushMpls(flow_label)] + head

    def flow_remove(self, flow_id: str) -> dict:
        flow = self.flows.pop(flow_id, None)
        if flow is None:
            return {"removed": False}
        self._mod(flow.ingress[0], "delete", dp.TABLE_TRANSPORT, 0,
                  {"in_port": flow.ingress[1], "eth_dst": flow.eth_dst}, [])
        self._mod(flow.egress[0], "delete", dp.TABLE_DEMUX, 0,
                  {"mpls_label": flow.flow_label, "mpls_bos": True}, [])
        return {"removed": True}

    # --------------------------------------------------------- protected LSPs

    def compute_disjoint_pair(self, a: str, b: str) -> tuple[list, list]:
        return pathcalc.compute_disjoint_pair(self.live_adj(), a, b)

    def ensure_protected_lsp(self, a: str, b: str) -> ProtectedLsp:
        lsp_id = f"plsp:{min(a, b)}:{max(a, b)}"
        if lsp_id in self.plsps:
            return self.plsps[lsp_id]
        return self.install_protected_lsp(a, b)

    def install_protected_lsp(self, a: str, b: str) -> ProtectedLsp:
        """Disjoint label chains both ways plus head-end FF groups whose
        watches are OAM sinks fed from the far end over each path."""
        if not (self.processing.get(a) and self.processing.get(b)):
            raise dp.ProcessingUnsupported("LSP endpoints must process OAM")
        primary, backup = self.compute_disjoint_pair(a, b)
        lsp_id = f"plsp:{min(a, b)}:{max(a, b)}"
        rec = ProtectedLsp(lsp_id=lsp_id, a=a, b=b, primary=primary,
                           backup=backup)
        head_actions: dict = {}
        for src, dst in ((a, b), (b, a)):
            for path_name, nodes in (("primary", primary), ("backup", backup)):
                path = nodes if nodes[0] == src else list(reversed(nodes))
                labels = {n: self.allocators[n].allocate() for n in path[1:]}
                for i in range(1, len(path) - 1):
                    n, nxt = path[i], path[i + 1]
                    self._mod(n, "add", dp.TABLE_TRANSPORT, PRIO_LABEL,
                              {"mpls_label": labels[n]},
                              [dp.SwapMpls(labels[nxt]),
                               dp.Output(self.out_port[(n, nxt)])])
                tail = path[-1]
                self._mod(tail, "add", dp.TABLE_TRANSPORT, PRIO_LABEL,
                          {"mpls_label": labels[tail]},
                          [dp.PopMpls()], goto=dp.TABLE_DEMUX)
                head_actions[(src, path_name)] = [
                    dp.PushMpls(labels[path[1]]),
                    dp.Output(self.out_port[(src, path[1])])]
                meg = self._meg_next
                self._meg_next += 1
                rec.megs[(src, path_name)] = meg
                # CC source at src rides this chain; sink at the far end
                src_lp = self._attach_lp(src, dp.OamSource(
                    meg_id=meg, interval_us=self.oam_interval_us,
                    template=self._oam_template(meg, src)))
                rec.sources[(src, path_name)] = src_lp
                self._mod(src, "add", dp.TABLE_TRANSPORT, PRIO_LABEL,
                          {"in_port": src_lp},
                          [dp.PushMpls(labels[path[1]]),
                           dp.Output(self.out_port[(src, path[1])])])
                sink_lp = self._attach_lp(tail, dp.OamSink(
                    meg_id=meg, k_threshold=self.oam_k,
                    interval_us=self.oam_interval_us))
                rec.sinks[(tail, path_name)] = sink_lp
                self._mod(tail, "add", dp.TABLE_DEMUX, PRIO_LABEL,
                          {"mpls_label": pk.OAM_LABEL, "mpls_bos": True,
                           "in_port": self.out_port[(tail, path[-2])]},
                          [dp.Output(sink_lp)])
        for end in (a, b):
            gid = self._next_group_id(end)
            rec.groups[end] = gid
            buckets = [dp.Bucket(watch=rec.sinks[(end, "primary")],
                                 actions=head_actions[(end, "primary")]),
                       dp.Bucket(watch=rec.sinks[(end, "backup")],
                                 actions=head_actions[(end, "backup")])]
            self._group(end, "add", dp.Group(group_id=gid, buckets=buckets))
        self.plsps[lsp_id] = rec
        self.engine.record("plsp_installed", self.name, lsp=lsp_id,
                           primary=primary, backup=backup)
        return rec

    def _oam_template(self, meg: int, node: str) -> Packet:
        return Packet(eth=pk.EthernetHeader(pk.BROADCAST_MAC,
                                            self.node_mac(node),
                                            pk.ETH_OAM_CC),
                      oam=pk.OamCcPayload(meg_id=meg, seq=0,
                                          src_node=self.node_index[node]))

    oam_interval_us = 3333
    oam_k = 3

    # -------------------------------------------------------------- PWE

    def create_pw(self, args: dict) -> dict:
        """Ethernet pseudowire between two attachment circuits.

        Idempotent per (a node, b node): repeated requests return the
        existing wire; a request for the same access node but a different
        far end re-targets the attachment circuit.
        """
        a = tuple(args["a"])
        b = tuple(args["b"])
        pw_id = args.get("pw_id") or f"pw:{a[0]}:{b[0]}"
        existing = self.pws.get(pw_id)
        if existing is not None:
            return {"pw_id": pw_id, "existing": True,
                    "lp_a": existing.lp_a, "lp_b": existing.lp_b}
        if a[0] not in self.domain or b[0] not in self.domain:
            raise Unreachable("pw endpoint outside domain")
        if not (self.processing.get(a[0]) and self.processing.get(b[0])):
            raise dp.ProcessingUnsupported("pw endpoints must be PW-capable")
        try:
            plsp = self.ensure_protected_lsp(a[0], b[0])
            transport, lsp_id = "protected", plsp.lsp_id
        except pathcalc.NoDisjointPair:
            plsp = None
            transport, lsp_id = "tree", None
        label_ab = self.allocators[b[0]].allocate()
        label_ba = self.allocators[a[0]].allocate()
        rec = PwRecord(pw_id=pw_id, a=a, b=b, label_ab=label_ab,
                       label_ba=label_ba, transport=transport, lsp_id=lsp_id)
        tunnels = {}
        if plsp is not None:
            tunnels[a[0]] = ("group", plsp.groups[a[0]])
            tunnels[b[0]] = ("group", plsp.groups[b[0]])
        else:
            for src, dst in ((a[0], b[0]), (b[0], a[0])):
                tree = self.ensure_tree(dst)
                gid = self._next_group_id(src)
                head = self._ingress_actions(tree, src)
                watch_port = head[-1].port
                self._group(src, "add", dp.Group(group_id=gid, buckets=[
                    dp.Bucket(watch=watch_port, actions=head)]))
                rec.tunnel_groups[src] = gid
                tunnels[src] = ("group", gid)
        rec.lp_a = self._pw_side(pw_id, a, label_ab, label_ba,
                                 tunnels[a[0]])
        rec.lp_b = self._pw_side(pw_id, b, label_ba, label_ab,
                                 tunnels[b[0]])
        client_b = args.get("client_b")
        if client_b is not None and client_b in self.virtual_switches:
            rec.client_b = client_b
            rec.b_vport = self.vs_add_port(client_b, (b[0], rec.lp_b),
                                           name=f"pw:{pw_id}")
        self.pws[pw_id] = rec
        self.engine.record("pw_installed", self.name, pw=pw_id,
                           transport=transport)
        return {"pw_id": pw_id, "lp_a": rec.lp_a, "lp_b": rec.lp_b,
                "transport": transport}

    def _pw_side(self, pw_id: str, end: tuple, label_out: int, label_in: int,
                 tunnel: tuple) -> int:
        node, port = end
        attachment = ("pipeline",) if port == "pipeline" else ("port", port)
        lp = self._attach_lp(node, dp.PwEndpoint(
            pw_id=pw_id, pw_label_out=label_out, pw_label_in=label_in,
            tunnel=tunnel, attachment=attachment,
            local_mac=self.node_mac(node)))
        if attachment[0] == "port":
            self._mod(node, "add", dp.TABLE_TRANSPORT, PRIO_AC,
                      {"in_port": port}, [dp.Output(lp)])
        else:
            self._mod(node, "add", dp.TABLE_TRANSPORT, PRIO_AC,
                      {"in_port": lp}, [], goto=dp.TABLE_SERVICE)
        self._mod(node, "add", dp.TABLE_DEMUX, PRIO_LABEL,
                  {"mpls_label": label_in, "mpls_bos": True},
                  [dp.Output(lp)])
        return lp

    def retarget_pw(self, args: dict) -> dict:
        """Move the far end of an access wire to another host node.

        The access node keeps its single attachment-circuit rule; only the
        wire behind it changes.
        """
        old = self.pws.pop(args["old_pw_id"], None)
        if old is not None:
            self._mod(old.a[0], "delete", dp.TABLE_DEMUX, 0,
                      {"mpls_label": old.label_ba, "mpls_bos": True}, [])
            self._mod(old.b[0], "delete", dp.TABLE_DEMUX, 0,
                      {"mpls_label": old.label_ab, "mpls_bos": True}, [])
            if old.b[1] == "pipeline":
                self._mod(old.b[0], "delete", dp.TABLE_TRANSPORT, 0,
                          {"in_port": old.lp_b}, [])
            self.send(self.switch_chans[old.a[0]],
                      cp.PortModMsg(op="delete", lp_id=old.lp_a))
            self.send(self.switch_chans[old.b[0]],
                      cp.PortModMsg(op="delete", lp_id=old.lp_b))
            if old.client_b is not None and old.b_vport is not None:
                self.vs_remove_port(old.client_b, old.b_vport)
        return self.create_pw(args)

    # -------------------------------------------------------------- e2e LSPs

    def setup_e2e_lsp(self, args: dict, client: str | None = None,
                      reply_to=None) -> dict | None:
        """Three steps: pick ingress/egress, build the internal bidirectional
        connectivity from two merging trees, then nest at the borders once
        the peer answers."""
        e2e_id = args["e2e_id"]
        head = args["head"]
        peer = args["peer"]
        if e2e_id in self.e2e and self.e2e[e2e_id].state == "installed":
            return {"e2e_id": e2e_id, "existing": True,
                    "gw_lp": self.e2e[e2e_id].gw_lp}
        if head not in self.domain:
            raise Unreachable(f"{head} outside domain")
        if peer not in self.border:
            raise Unreachable(f"no border toward {peer}")
        border = self.border[peer]
        if border[0] != head:
            self.ensure_tree(border[0])
            self.ensure_tree(head)
        local = self.allocators[head].allocate()
        self.allocators[border[0]].reserve(local)
        rec = E2eLsp(e2e_id=e2e_id, role="head", head=head, border=border,
                     peer=peer, local_label=local, client=client)
        self.e2e[e2e_id] = rec
        if reply_to is not None:
            self._pending_replies[("e2e", e2e_id)] = reply_to
        self.send(self.core_chans[peer],
                  LspRequest(e2e_id=e2e_id, label=local, target=peer))
        return None

    def _install_e2e(self, rec: E2eLsp) -> None:
        head, (bn, bp) = rec.head, rec.border
        self.allocators[bn].reserve(rec.remote_label)
        gid = self._next_group_id(head)
        rec.group_id = gid
        if head == bn:
            bucket = dp.Bucket(watch=bp, actions=[dp.PushMpls(rec.remote_label),
                                                  dp.Output(bp)])
            self._group(head, "add", dp.Group(group_id=gid, buckets=[bucket]))
            self._mod(bn, "add", dp.TABLE_TRANSPORT, PRIO_LABEL,
                      {"mpls_label": rec.local_label, "mpls_bos": True},
                      [dp.PopMpls()], goto=dp.TABLE_SERVICE)
        else:
            tree_to_border = self.ensure_tree(bn)
            tree_to_head = self.ensure_tree(head)
            head_out = self._ingress_actions(tree_to_border, head)
            bucket = dp.Bucket(watch=head_out[-1].port,
                               actions=[dp.PushMpls(rec.remote_label)] + head_out)
            self._group(head, "add", dp.Group(group_id=gid, buckets=[bucket]))
            self._mod(bn, "add", dp.TABLE_DEMUX, PRIO_LABEL,
                      {"mpls_label": rec.remote_label, "mpls_bos": True},
                      [dp.Output(bp)])
            self._mod(bn, "add", dp.TABLE_TRANSPORT, PRIO_LABEL,
                      {"mpls_label": rec.local_label},
                      self._ingress_actions(tree_to_head, bn))
            self._mod(head, "add", dp.TABLE_DEMUX, PRIO_LABEL,
                      {"mpls_label": rec.local_label, "mpls_bos": True},
                      [dp.PopMpls()], goto=dp.TABLE_SERVICE)
        gw_lp = self._attach_lp(head, dp.IpOverEthernet(
            next_hop_mac=self._peer_mac(rec.peer),
            src_mac=self.node_mac(head), underlay=("group", gid)))
        rec.gw_lp = gw_lp
        rec.state = "installed"
        self.engine.record("e2e_installed", self.name, e2e=rec.e2e_id,
                           head=head, up_label=rec.remote_label,
                           down_label=rec.local_label)
        result = {"e2e_id": rec.e2e_id, "gw_lp": gw_lp}
        if rec.client is not None:
            vp = self.vs_add_port(rec.client, (head, gw_lp),
                                  name=f"gw:{rec.e2e_id}")
            result["gw_vport"] = vp
        self._reply_pending(("e2e", rec.e2e_id), ok=True, result=result)

    def _peer_mac(self, peer: str) -> bytes:
        h = abs(hash(peer)) & 0xFFFF
        return bytes([0x02, 0xEE, 0, 0, h >> 8, h & 255])

    def teardown_e2e(self, e2e_id: str) -> dict:
        rec = self.e2e.get(e2e_id)
        if rec is None or rec.state != "installed":
            return {"removed": False}
        head, (bn, bp) = rec.head, rec.border
        self.send(self.core_chans[rec.peer], LspTeardown(e2e_id=e2e_id))
        self._group(head, "delete", dp.Group(group_id=rec.group_id, buckets=[]))
        if head == bn:
            self._mod(bn, "delete", dp.TABLE_TRANSPORT, 0,
                      {"mpls_label": rec.local_label, "mpls_bos": True}, [])
        else:
            self._mod(bn, "delete", dp.TABLE_DEMUX, 0,
                      {"mpls_label": rec.remote_label, "mpls_bos": True}, [])
            self._mod(bn, "delete", dp.TABLE_TRANSPORT, 0,
                      {"mpls_label": rec.local_label}, [])
            self._mod(head, "delete", dp.TABLE_DEMUX, 0,
                      {"mpls_label": rec.local_label, "mpls_bos": True}, [])
        self.send(self.switch_chans[head],
                  cp.PortModMsg(op="delete", lp_id=rec.gw_lp))
        if rec.client is not None:
            vs = self.virtual_switches[rec.client]
            vp = vs.inverse.get((head, rec.gw_lp))
            if vp is not None:
                self.vs_remove_port(rec.client, vp)
        rec.state = "torn_down"
        return {"removed": True}

    # ------------------------------------------------------------ advertising

    def advertise_domain(self) -> None:
        """One router, border interfaces only; internals stay hidden."""
        interfaces = []
        for peer, (node, port) in sorted(self.border.items()):
            sw = self.engine._network.switches.get(node)
            up = bool(sw and sw.state.ports.get(port)
                      and sw.state.ports[port].up)
            interfaces.append((node, port, up))
        advert = DomainAdvert(router_id=self.name, interfaces=tuple(interfaces))
        for peer in sorted(self.core_chans):
            self.send(self.core_chans[peer], advert)

    # ------------------------------------------------------------ restoration

    def _recompute_after_change(self, edge_key: tuple, reason: str) -> None:
        """Repair every merging tree touching the changed edge; re-point the
        per-flow ingress bindings and tunnel heads that rode them."""
        tag = f"restore:{edge_key[0]}-{edge_key[1]}"
        adj = self.live_adj()
        mods = 0
        for dst in sorted(self.trees):
            tree = self.trees[dst]
            new_parent, new_dist = pathcalc.shortest_path_tree(adj, dst)
            changed = sorted(n for n in set(tree.parent) | set(new_parent)
                             if tree.parent.get(n) != new_parent.get(n))
            if not changed:
                continue
            for node in changed:
                old_p = tree.parent.get(node)
                new_p = new_parent.get(node)
                if new_p is None:
                    self._mod(node, "delete", dp.TABLE_TRANSPORT, 0,
                              {"mpls_label": tree.labels[node]}, [], tag=tag)
                    self.engine.record("partition", self.name, dst=dst,
                                       node=node)
                    mods += 1
                    continue
                if node not in tree.labels:
                    tree.labels[node] = self.allocators[node].allocate()
                if new_p not in tree.labels:
                    tree.labels[new_p] = self.allocators[new_p].allocate()
                self._mod(node, "add", dp.TABLE_TRANSPORT, PRIO_LABEL,
                          {"mpls_label": tree.labels[node]},
                          [dp.SwapMpls(tree.labels[new_p]),
                           dp.Output(self.out_port[(node, new_p)])], tag=tag)
                mods += 1
            tree.parent = new_parent
            tree.dist = new_dist
            mods += self._repoint_tree_users(tree, changed, tag)
        if mods:
            self.engine.record("restore_batch", self.name,
                               edge=f"{edge_key[0]}-{edge_key[1]}",
                               reason=reason, mods=mods)

    def _repoint_tree_users(self, tree: MergingTree, changed: list,
                            tag: str) -> int:
        mods = 0
        changed_set = set(changed)
        for flow_id in sorted(self.flows):
            flow = self.flows[flow_id]
            if flow.transport != "tree" or flow.egress[0] != tree.dst:
                continue
            node = flow.ingress[0]
            if node == tree.dst or node not in changed_set:
                continue
            match = {"in_port": flow.ingress[1], "eth_dst": flow.eth_dst}
            if tree.parent.get(node) is None:
                self._mod(node, "delete", dp.TABLE_TRANSPORT, 0, match, [],
                          tag=tag)
                flow.active = False
            else:
                self._mod(node, "modify", dp.TABLE_TRANSPORT, PRIO_FLOW, match,
                          self._flow_push(tree, node, flow.flow_label), tag=tag)
            mods += 1
        for pw_id in sorted(self.pws):
            pw = self.pws[pw_id]
            if pw.transport != "tree":
                continue
            for src, dst in ((pw.a[0], pw.b[0]), (pw.b[0], pw.a[0])):
                if dst != tree.dst or src not in changed_set:
                    continue
                if tree.parent.get(src) is None:
                    continue
                head = self._ingress_actions(tree, src)
                self._group(src, "modify", dp.Group(
                    group_id=pw.tunnel_groups[src],
                    buckets=[dp.Bucket(watch=head[-1].port, actions=head)]),
                    tag=tag)
                mods += 1
        for e2e_id in sorted(self.e2e):
            rec = self.e2e[e2e_id]
            if rec.state != "installed" or rec.head == rec.border[0]:
                continue
            if tree.dst == rec.border[0] and rec.head in changed_set \
                    and tree.parent.get(rec.head) is not None:
                head_out = self._ingress_actions(tree, rec.head)
                self._group(rec.head, "modify", dp.Group(
                    group_id=rec.group_id,
                    buckets=[dp.Bucket(watch=head_out[-1].port,
                                       actions=[dp.PushMpls(rec.remote_label)]
                                       + head_out)]), tag=tag)
                mods += 1
            if tree.dst == rec.head and rec.border[0] in changed_set \
                    and tree.parent.get(rec.border[0]) is not None:
                self._mod(rec.border[0], "modify", dp.TABLE_TRANSPORT,
                          PRIO_LABEL, {"mpls_label": rec.local_label},
                          self._ingress_actions(tree, rec.border[0]), tag=tag)
                mods += 1
        return mods

    # ----------------------------------------------------- client FlowMods

    def translate_virtual_flow_mod(self, vs: cp.VirtualSwitch,
                                   fm: cp.FlowModMsg) -> list:
        """Map one client FlowMod onto concrete switches.

        Same-node rules install into the host's service table verbatim
        (ports substituted).  Cross-node rules become an ingress entry that
        pushes a per-rule label nested under the serving merging tree plus
        an egress pop-and-output entry.
        """
        entry = fm.entry
        client_match = dict(entry.match)
        vs.check_match({k: v for k, v in client_match.items()})
        in_node = in_port = None
        if "in_port" in client_match:
            in_node, in_port = vs.check_port(client_match["in_port"])
        out_targets = []
        actions = []
        for act in entry.actions:
            if isinstance(act, dp.Output):
                tgt = vs.check_port(act.port)
                out_targets.append(tgt)
                actions.append(dp.Output(tgt[1]))
            else:
                actions.append(act)
        if in_node is None and out_targets:
            in_node = out_targets[0][0]
        nodes = {t[0] for t in out_targets} | ({in_node} if in_node else set())
        if len(nodes) <= 1:
            node = in_node or (out_targets[0][0] if out_targets else None)
            if node is None:
                raise cp.NoTransport("rule names no endpoint")
            match = dict(client_match)
            if in_port is not None:
                match["in_port"] = in_port
            concrete = dp.FlowEntry(table_id=dp.TABLE_SERVICE,
                                    priority=entry.priority, match=match,
                                    actions=actions,
                                    goto_table=entry.goto_table)
            return [(node, cp.FlowModMsg(op=fm.op, entry=concrete))]
        if len(out_targets) != 1 or in_node is None:
            raise cp.NoTransport("cross-node rules need one in and one out port")
        out_node, out_port = out_targets[0]
        tree = self.trees.get(out_node)
        if tree is None or tree.parent.get(in_node) is None:
            raise cp.NoTransport(f"no serving LSP {in_node}..{out_node}")
        rule_label = self.allocators[out_node].allocate()
        ingress_match = dict(client_match)
        ingress_match["in_port"] = in_port
        ingress = dp.FlowEntry(
            table_id=dp.TABLE_TRANSPORT, priority=PRIO_FLOW,
            match=ingress_match,
            actions=[a for a in actions if not isinstance(a, dp.Output)]
            + self._flow_push(tree, in_node, rule_label))
        egress = dp.FlowEntry(
            table_id=dp.TABLE_DEMUX, priority=PRIO_LABEL,
            match={"mpls_label": rule_label, "mpls_bos": True},
            actions=[dp.PopMpls(), dp.Output(out_port)])
        return [(in_node, cp.FlowModMsg(op=fm.op, entry=ingress)),
                (out_node, cp.FlowModMsg(op=fm.op, entry=egress))]

    def _on_client_flow_mod(self, chan: Channel, fm: cp.FlowModMsg) -> None:
        client = self._chan_client(chan)
        vs = self.virtual_switches.get(client)
        if vs is None:
            return
        try:
            mods = self.translate_virtual_flow_mod(vs, fm)
        except (cp.PermissionDenied, cp.NoTransport) as exc:
            self.send(chan, cp.ErrorMsg(code=type(exc).__name__,
                                        context=str(exc)))
            return
        for node, mod in mods:
            self.send(self.switch_chans[node], mod)

    def _on_client_packet_out(self, chan: Channel, msg: cp.PacketOutMsg) -> None:
        client = self._chan_client(chan)
        vs = self.virtual_switches.get(client)
        if vs is None:
            return
        try:
            node, port, packet = cp.sink_packet_out(vs, msg)
        except cp.PermissionDenied as exc:
            self.send(chan, cp.ErrorMsg(code="PermissionDenied",
                                        context=str(exc)))
            return
        self.send(self.switch_chans[node],
                  cp.PacketOutMsg(packet=packet, out_port=port))
