"""Command-line front end: ``jmacsim run|sweep|table-t|airtime|frame-dump``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .des import MS, S
from .frames import FrameError, decode, describe
from .metrics import CSV_COLUMNS, emit_report, report_rows, run_batch
from .phy import RadioError, RadioParams, time_on_air
from .protocol import ProtocolConfig, ProtocolError
from .scenario import BUILTINS, ScenarioError, builtin_testbed, load_scenario

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2

log = logging.getLogger("jmacsim")


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _add_scenario_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--scenario", metavar="PATH", help="scenario INI file")
    src.add_argument("--builtin", metavar="NAME", default=None,
                     help=f"built-in testbed, one of {', '.join(sorted(BUILTINS))} (default: testbed1)")
    p.add_argument("--days", type=float, default=None, help="simulated days per run (default: from scenario, 7)")
    p.add_argument("--runs", type=int, default=None, help="independent runs (default: from scenario, 20)")
    p.add_argument("--seed", type=int, default=None, help="master seed (default: from scenario, 1)")
    p.add_argument("--out", metavar="PATH", default=None, help="report file (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="report format (default: csv)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default: 1)")
    p.add_argument("--verbose", action="store_true", help="log every state transition to stderr")


def _add_radio_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sf", type=int, default=7, help="spreading factor 7..12 (default: 7)")
    p.add_argument("--bw", type=int, default=125_000, help="bandwidth in Hz (default: 125000)")
    p.add_argument("--cr", type=int, default=1, help="coding rate 1..4 for 4/5..4/8 (default: 1)")
    p.add_argument("--preamble", type=int, default=8, help="preamble symbols (default: 8)")
    p.add_argument("--implicit-header", action="store_true", help="implicit header mode (default: explicit)")
    p.add_argument("--no-crc", action="store_true", help="disable payload CRC (default: CRC on)")
    p.add_argument("--ldro", action="store_true", help="low data rate optimisation (default: off)")


def _radio(args) -> RadioParams:
    return RadioParams(spreading_factor=args.sf, bandwidth=args.bw, coding_rate=args.cr,
                       preamble_symbols=args.preamble, explicit_header=not args.implicit_header,
                       crc_on=not args.no_crc, low_data_rate_optimize=args.ldro)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jmacsim", description="JMAC multi-hop LoRa simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and write a per-sensor report")
    _add_scenario_args(p)
    p.add_argument("--m", type=int, default=None, help="application payload bytes (default: from scenario)")
    p.add_argument("--c", type=int, default=None, help="transmission gate parameter C (default: from scenario)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run every (M, C) combination")
    _add_scenario_args(p)
    p.add_argument("--m", type=_int_list, default=[30], help="comma-separated payload sizes (default: 30)")
    p.add_argument("--c", type=_int_list, default=[1, 2, 3, 4], help="comma-separated C values (default: 1,2,3,4)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("table-t", help="print the time period T for M x C x p")
    _add_radio_args(p)
    p.add_argument("--m", type=_int_list, default=[30, 100], help="payload sizes (default: 30,100)")
    p.add_argument("--c", type=_int_list, default=[1, 2, 3, 4], help="C values (default: 1,2,3,4)")
    p.add_argument("--p", type=_int_list, default=[1, 2, 3], help="parent counts (default: 1,2,3)")
    p.add_argument("--duty-cycle", type=float, default=0.01, help="duty cycle fraction (default: 0.01)")
    p.add_argument("--toa-up", type=float, default=None, metavar="MS",
                   help="override the worst-case UP_DATA airtime in ms (default: computed)")
    p.add_argument("--toa-ack", type=float, default=None, metavar="MS",
                   help="override the worst-case ACK airtime in ms (default: computed)")
    p.set_defaults(func=cmd_table_t)

    p = sub.add_parser("airtime", help="print the time on air of one frame")
    _add_radio_args(p)
    p.add_argument("--payload", type=int, required=True, help="PHY payload bytes (1..255)")
    p.set_defaults(func=cmd_airtime)

    p = sub.add_parser("frame-dump", help="decode a hex-encoded frame")
    p.add_argument("hex", help="frame bytes as hex")
    p.add_argument("--m", type=int, default=30, help="application payload bytes (default: 30)")
    p.set_defaults(func=cmd_frame_dump)
    return parser


def _scenario(args):
    cfg = load_scenario(args.scenario) if args.scenario else builtin_testbed(args.builtin or "testbed1")
    return cfg.with_overrides(days=args.days, runs=args.runs, seed=args.seed)


def _trace(args):
    return log.debug if args.verbose else None


def cmd_run(args) -> int:
    cfg = _scenario(args).with_overrides(m=args.m, c=args.c)
    log.info("running %s: M=%d C=%d, %d run(s) x %g day(s), seed %d",
             cfg.name, cfg.m, cfg.c, cfg.runs, cfg.days, cfg.seed)
    report = run_batch(cfg, jobs=args.jobs, log=_trace(args),
                       progress=lambda r: log.info("run %d done (%d events)", r.run, r.events))
    if args.out:
        emit_report(report, args.format, args.out)
        log.info("report written to %s", args.out)
    elif args.format == "csv":
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerows(report_rows(report))
    else:
        import json
        print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = _scenario(args)
    configs = [base.with_overrides(m=m, c=c) for m in args.m for c in args.c]
    rows = []
    reports = []
    for cfg in configs:
        log.info("sweep point M=%d C=%d", cfg.m, cfg.c)
        report = run_batch(cfg, jobs=args.jobs, log=_trace(args))
        reports.append(report)
        rows.extend([str(cfg.m), str(cfg.c), *row] for row in report_rows(report))
    if args.format == "json":
        import json
        text = json.dumps([r.to_dict() for r in reports], indent=2) + "\n"
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    header = ["m", "c", *CSV_COLUMNS]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    else:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return EXIT_OK


def period_table(radio: RadioParams, m_values, c_values, p_values, duty_cycle=0.01,
                 toa_up: int | None = None, toa_ack: int | None = None) -> dict:
    """``{M: {C: {p: T_ns}}}`` for the given grid."""
    table = {}
    for m in m_values:
        table[m] = {}
        for c in c_values:
            cfg = ProtocolConfig(m=m, c=c, duty_cycle=duty_cycle, radio=radio,
                                 toa_updata_override=toa_up, toa_ack_override=toa_ack)
            table[m][c] = {p: cfg.period(p) for p in p_values}
    return table


def format_period_table(table: dict) -> str:
    lines = []
    for m, rows in table.items():
        ps = list(next(iter(rows.values())))
        header = [f"M={m} B"] + [f"p={p}" for p in ps]
        lines.append(" | ".join(f"{h:>12}" for h in header))
        for c, cells in rows.items():
            values = [f"{cells[p] / S:.4f} s" for p in ps]
            lines.append(" | ".join(f"{v:>12}" for v in [f"C={c}", *values]))
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def cmd_table_t(args) -> int:
    radio = _radio(args)
    to_ns = (lambda v: None if v is None else int(round(v * MS)))
    table = period_table(radio, args.m, args.c, args.p, args.duty_cycle, to_ns(args.toa_up), to_ns(args.toa_ack))
    sys.stdout.write(format_period_table(table))
    return EXIT_OK


def cmd_airtime(args) -> int:
    radio = _radio(args)
    ns = time_on_air(radio, args.payload)
    print(f"SF{radio.spreading_factor} {radio.bandwidth / 1000:g} kHz CR4/{radio.coding_rate + 4} "
          f"{args.payload} B: {ns / MS:.3f} ms ({ns} ns)")
    return EXIT_OK


def cmd_frame_dump(args) -> int:
    text = args.hex.strip().removeprefix("0x").replace(" ", "").replace(":", "")
    try:
        data = bytes.fromhex(text)
    except ValueError:
        raise FrameError(f"not a hex string: {args.hex!r}") from None
    print(describe(decode(data, m=args.m)))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING
    logging.basicConfig(level=level, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ScenarioError, ProtocolError, RadioError, FrameError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
