"""Command line: ``tracelink validate | simulate | relay``.

Exit codes: 0 success, 1 invalid input (trace or scenario), 2 usage
error, 3 socket bind failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

from .errors import BindError, ParseError, ScenarioError, TracelinkError
from .harness import default_seed, export_metrics, load_scenario, run_scenario, segment_summary
from .instance import InstanceConfig
from .relay import RelayConfig, run_relay
from .trace import load_trace


def _endpoint(text: str):
    host, sep, port = text.rpartition(":")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    try:
        return (host or "127.0.0.1", int(port))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad port in {text!r}") from None


def cmd_validate(args) -> int:
    try:
        timeline = load_trace(args.trace, args.format)
    except ParseError as exc:
        if args.json:
            print(json.dumps({"valid": False, "line": exc.line, "error": type(exc).__name__,
                              "message": exc.message}))
        else:
            print(f"{args.trace}: {exc} [{type(exc).__name__}]", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"{args.trace}: {exc}", file=sys.stderr)
        return 1
    total = timeline.total_duration_us
    if args.json:
        print(json.dumps({"valid": True, "entries": len(timeline), "total_duration_us": total}))
    else:
        print(f"{len(timeline)} entries, {total / 1e6:.3f} s total")
    return 0


def _fmt(value, scale, digits):
    return "-" if value is None or math.isnan(value) else f"{value / scale:.{digits}f}"


def cmd_simulate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        if args.seed is not None:
            scenario = scenario.with_seed(args.seed)
        metrics = run_scenario(scenario)
    except (ScenarioError, TracelinkError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    tp, rt = export_metrics(metrics, args.output)
    fwd = scenario.forward
    rows = []
    if fwd.timeline is not None:
        rows = segment_summary(metrics, fwd.timeline, fwd.config.continue_mode)
    if args.json:
        print(json.dumps({
            "throughput_csv": str(tp),
            "rtt_csv": str(rt),
            "segments": rows,
            "forward": metrics.forward.to_dict(),
            "reverse": metrics.reverse.to_dict() if metrics.reverse else None,
            "lost_probes": metrics.lost_probes,
        }, default=str))
        return 0
    print(f"{'entry':>5} {'start_s':>9} {'stop_s':>9} {'rate_Mbps':>10} {'meas_Mbps':>10} "
          f"{'delay_ms':>9} {'rtt_ms':>9}")
    for r in rows[: args.max_rows]:
        print(f"{'-' if r['entry'] is None else r['entry']:>5} {r['start_us'] / 1e6:>9.3f} "
              f"{r['stop_us'] / 1e6:>9.3f} {r['rate_bps'] / 1e6:>10.3f} "
              f"{_fmt(r['mean_bps'], 1e6, 3):>10} {r['delay_us'] / 1e3:>9.3f} "
              f"{_fmt(r['mean_rtt_us'], 1e3, 3):>9}")
    if len(rows) > args.max_rows:
        print(f"... {len(rows) - args.max_rows} more segments")
    c = metrics.forward.counters
    print(f"forward: sent {metrics.sent}, delivered {c['delivered']}, lost {c['dropped_loss']}, "
          f"queue drops {c['dropped_queue']}, duplicates {c['duplicated']}; "
          f"lost probes {metrics.lost_probes}")
    print(f"wrote {tp} and {rt}")
    return 0


def _instance_config(args, prefix: str, seed: int) -> InstanceConfig:
    return InstanceConfig(
        ingest_format=args.format,
        continue_mode=getattr(args, f"{prefix}continue"),
        queue_limit_unit=args.queue_limit_unit,
        overhead_bytes=args.overhead,
        segment_size_bytes=args.segment_size,
        rng_seed=seed,
        syncgroup_id=args.syncgroup,
    )


def cmd_relay(args) -> int:
    seed = args.seed if args.seed is not None else default_seed()
    try:
        cfg = RelayConfig(
            listen_a=args.listen_a,
            peer_a=args.peer_a,
            listen_b=args.listen_b,
            peer_b=args.peer_b,
            forward=_instance_config(args, "", seed),
            reverse=_instance_config(args, "reverse_", (seed + 1) % 2**64)
            if args.reverse_trace or args.with_reverse else None,
            forward_trace=args.trace,
            reverse_trace=args.reverse_trace,
            control=args.control,
        )
        stats = run_relay(cfg, start=args.start)
    except BindError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ParseError, ValueError, TracelinkError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(stats, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tracelink", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a Trace File")
    p.add_argument("trace")
    p.add_argument("--format", default="SIMPLE", type=str.upper, choices=["SIMPLE", "EXTENDED"])
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="run a scenario in virtual time")
    p.add_argument("scenario")
    p.add_argument("-o", "--output", default=".", help="directory for throughput.csv and rtt.csv")
    p.add_argument("--seed", type=int, default=None, help="override all instance seeds")
    p.add_argument("--json", action="store_true")
    p.add_argument("--max-rows", type=int, default=50)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("relay", help="emulate a path between two UDP endpoints")
    p.add_argument("--listen-a", type=_endpoint, required=True)
    p.add_argument("--peer-a", type=_endpoint, required=True)
    p.add_argument("--listen-b", type=_endpoint, required=True)
    p.add_argument("--peer-b", type=_endpoint, required=True)
    p.add_argument("--control", type=_endpoint, default=("127.0.0.1", 7878))
    p.add_argument("--trace", help="forward (A->B) Trace File")
    p.add_argument("--reverse-trace", help="reverse (B->A) Trace File")
    p.add_argument("--with-reverse", action="store_true",
                   help="create a reverse instance even without a trace")
    p.add_argument("--format", default="SIMPLE", type=str.upper, choices=["SIMPLE", "EXTENDED"])
    p.add_argument("--continue", dest="continue", default="HOLD", type=str.upper,
                   choices=["HOLD", "CLEAN", "LOOP"])
    p.add_argument("--reverse-continue", dest="reverse_continue", default="HOLD",
                   type=str.upper, choices=["HOLD", "CLEAN", "LOOP"])
    p.add_argument("--queue-limit-unit", default="PACKETS", type=str.upper,
                   choices=["PACKETS", "BYTES"])
    p.add_argument("--overhead", type=int, default=0)
    p.add_argument("--segment-size", type=int, default=0)
    p.add_argument("--syncgroup", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="default: $TRACELINK_SEED or 0")
    p.add_argument("--start", type=str.upper, choices=["ARM", "RUN"], default=None,
                   help="stage to enter once traces are loaded")
    p.set_defaults(func=cmd_relay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
