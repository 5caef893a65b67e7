"""Discrete-event simulator for SDN-controlled access/aggregation networks.

Layers, bottom up: `packet` (header model and canonical codec),
`dataplane` (switch pipeline, fast-failover groups, logical ports, OAM),
`simnet` (deterministic event engine, links, control channels),
`ctlproto`/`pathcalc`/`transportctl` (control hierarchy and MPLS
transport), `brasctl` (session control and steering), `harness`/`cli`
(scenario runner).
"""

from .packet import (Packet, decode_frame, encap_pppoe, encode_frame,
                     pop_mpls, push_mpls)
from .scenario import ConfigError, parse_scenario, scenario_from_dict
from .harness import MetricsReport, emit_csv, run_scenario
from .simnet import Engine, Network, measure_gap

__version__ = "0.1.0"

__all__ = [
    "Packet", "encode_frame", "decode_frame", "push_mpls", "pop_mpls",
    "encap_pppoe", "ConfigError", "parse_scenario", "scenario_from_dict",
    "MetricsReport", "run_scenario", "emit_csv", "Engine", "Network",
    "measure_gap", "__version__",
]
