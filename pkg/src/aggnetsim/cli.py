"""Command line: run, validate, sweep and render scenarios.

Exit codes: 0 success, 1 embedded assertion failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys

from . import harness
from .scenario import ConfigError, parse_scenario, scenario_from_dict


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="aggnetsim",
        description="Discrete-event simulator for SDN-controlled "
                    "aggregation networks")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="run one scenario")
    p_run.add_argument("scenario")
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--out", help="metrics CSV path")
    p_run.add_argument("--trace", help="JSONL event trace path")
    p_run.add_argument("--log-level", default="WARNING")

    p_val = sub.add_parser("validate", help="check a scenario file")
    p_val.add_argument("scenario")

    p_sweep = sub.add_parser("sweep", help="run a scenario over parameter values")
    p_sweep.add_argument("scenario")
    p_sweep.add_argument("--param", required=True,
                         help="dotted.key=v1,v2,... applied to the JSON")
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("--out", required=True, help="output directory")
    p_sweep.add_argument("--log-level", default="WARNING")

    p_topo = sub.add_parser("topo", help="emit the topology as Graphviz dot")
    p_topo.add_argument("scenario")
    p_topo.add_argument("--dot", required=True)

    args = parser.parse_args(argv)
    if hasattr(args, "log_level"):
        logging.basicConfig(level=getattr(logging, args.log_level.upper(),
                                          logging.WARNING))

    try:
        if args.cmd == "validate":
            parse_scenario(args.scenario)
            print(f"{args.scenario}: ok")
            return 0
        if args.cmd == "run":
            return _run(args)
        if args.cmd == "sweep":
            return _sweep(args)
        if args.cmd == "topo":
            return _topo(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    return 0


def _run(args) -> int:
    scn = parse_scenario(args.scenario)
    report, ctx = harness.execute_scenario(scn, seed=args.seed,
                                           full_trace=bool(args.trace))
    if args.out:
        harness.emit_csv(report, args.out)
    if args.trace:
        harness.emit_trace(ctx.engine, args.trace)
    failed = 0
    for ok, desc in report.assertion_results:
        print(f"{'PASS' if ok else 'FAIL'}  {desc}")
        failed += 0 if ok else 1
    if not report.assertion_results:
        for metric, subject, value in report.rows:
            print(f"{metric},{subject},{value}")
    return 1 if failed else 0


def _set_dotted(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    cur = cfg
    for k in keys[:-1]:
        cur = cur[int(k)] if isinstance(cur, list) else cur.setdefault(k, {})
    last = keys[-1]
    if isinstance(cur, list):
        cur[int(last)] = value
    else:
        cur[last] = value


def _sweep(args) -> int:
    key, _, values = args.param.partition("=")
    if not values:
        print("sweep needs --param key=v1,v2,...", file=sys.stderr)
        return 2
    with open(args.scenario) as fh:
        base = json.load(fh)
    os.makedirs(args.out, exist_ok=True)
    rc = 0
    summary = ["param,value,assertions_ok"]
    for raw in values.split(","):
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        cfg = copy.deepcopy(base)
        _set_dotted(cfg, key, value)
        scn = scenario_from_dict(cfg)
        report = harness.run_scenario(scn, seed=args.seed)
        out = os.path.join(args.out, f"{key.replace('.', '_')}__{raw}.csv")
        harness.emit_csv(report, out)
        summary.append(f"{key},{raw},{int(report.ok)}")
        if not report.ok:
            rc = 1
    with open(os.path.join(args.out, "summary.csv"), "w") as fh:
        fh.write("\n".join(summary) + "\n")
    return rc


def _topo(args) -> int:
    scn = parse_scenario(args.scenario)
    lines = ["graph topology {"]
    for n in scn.nodes:
        shape = "doublecircle" if n["processing"] else "circle"
        lines.append(f'  "{n["id"]}" [shape={shape}];')
    for p in scn.core_peers:
        lines.append(f'  "{p["id"]}" [shape=box];')
    for l in scn.links:
        lines.append(f'  "{l["a"][0]}" -- "{l["b"][0]}" '
                     f'[label="w{l["weight"]}/{l["delay_us"]}us"];')
    for p in scn.core_peers:
        lines.append(f'  "{p["attach"][0]}" -- "{p["id"]}" [style=dashed];')
    lines.append("}")
    with open(args.dot, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {args.dot}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
