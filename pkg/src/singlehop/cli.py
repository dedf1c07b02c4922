"""Batch front door: run model sweeps and simulations from the command
line, emit CSV, and summarize result files.

Subcommands:

    model       closed-form bandwidth curves over a parameter grid
    sim         discrete-event simulation runs over a grid x seed list
    wire        datagram inspection (hex decode)
    summarize   per-configuration means and 95% confidence intervals

Grids: ``--n`` accepts a comma list (``1024,4096``) or a log sweep
(``1e4..1e7``, four points per decade); ``--savg-min`` is a comma list of
average session lengths in minutes.  ``--config FILE`` reads key=value
lines that override the flags.  The ``D1HT_SEED`` environment variable
supplies the default seed.  Exit codes: 0 success, 2 configuration error,
3 simulation abort.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys

from . import models, sim, wire
from .quarantine import QuarantineConfig


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _parse_n_grid(text: str) -> list[float]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        return models.log_grid(float(lo), float(hi), per_decade=4)
    return [float(tok) for tok in text.split(",") if tok]


def _parse_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok]


def _parse_seeds(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok]


def _write_csv(path: str | None, fieldnames, rows) -> None:
    out = open(path, "w", newline="") if path and path != "-" else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(fieldnames)
        for row in rows:
            w.writerow([_fmt(row[name]) for name in fieldnames])
    finally:
        if out is not sys.stdout:
            out.close()


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="singlehop",
        description="Single-hop DHT models, simulations and wire tools.")
    sub = parser.add_subparsers(dest="mode", required=True)

    default_seed = int(os.environ.get("D1HT_SEED", "0"))

    p_model = sub.add_parser(
        "model", help="closed-form bandwidth curves (CSV: n, s_avg, model, "
                      "variant, bandwidth_bps)")
    p_model.add_argument("--n", default="1e4..1e7",
                         help="system sizes: comma list or LO..HI log sweep")
    p_model.add_argument("--savg-min", default="60,169,174,780",
                         help="average session lengths, minutes, comma list")
    p_model.add_argument("--f", type=float, default=0.01,
                         help="target routing-failure fraction")
    p_model.add_argument("--quarantine-phi", default="",
                         help="session mass below the quarantine period; "
                              "comma list adds quarantine-adjusted rows")
    p_model.add_argument("--smooth-rho", action="store_true",
                         help="real-valued log2 instead of the integer stair")
    p_model.add_argument("--out", default="-", help="output CSV path")
    p_model.add_argument("--config", help="key=value file overriding flags")

    p_sim = sub.add_parser(
        "sim", help="simulation runs (CSV: one row per grid point and seed)")
    p_sim.add_argument("--n", default="1024")
    p_sim.add_argument("--savg-min", default="174")
    p_sim.add_argument("--f", type=float, default=0.01)
    p_sim.add_argument("--delta-ms", type=float, default=0.0,
                       help="mean one-way message delay, milliseconds")
    p_sim.add_argument("--duration", type=float, default=1800.0,
                       help="measurement phase length, seconds")
    p_sim.add_argument("--seed", default=str(default_seed),
                       help="comma list of seeds")
    p_sim.add_argument("--protocol", choices=(sim.D1HT, sim.CALOT),
                       default=sim.D1HT)
    p_sim.add_argument("--quarantine-tq", type=float, default=0.0,
                       help="quarantine period in seconds; 0 disables")
    p_sim.add_argument("--session-phi", type=float, default=None,
                       help="fraction of sessions shorter than the "
                            "quarantine period")
    p_sim.add_argument("--lookup-rate", type=float, default=1.0)
    p_sim.add_argument("--kill-fraction", type=float, default=0.5)
    p_sim.add_argument("--rejoin-delay", type=float, default=180.0)
    p_sim.add_argument("--no-reuse-ids", action="store_true",
                       help="rejoining peers take fresh addresses")
    p_sim.add_argument("--warmup", default="",
                       help="growth phase START:RATE[:SETTLE]; empty starts "
                            "at full size")
    p_sim.add_argument("--trace", action="store_true",
                       help="append per-event trace lines to stderr")
    p_sim.add_argument("--out", default="-")
    p_sim.add_argument("--config", help="key=value file overriding flags")

    p_wire = sub.add_parser("wire", help="datagram inspection")
    p_wire.add_argument("--decode", required=True, metavar="HEXFILE",
                        help="file of hex bytes to decode and pretty-print")
    p_wire.add_argument("--default-port", type=int, default=4170)

    p_sum = sub.add_parser(
        "summarize", help="per-configuration means and 95%% intervals")
    p_sum.add_argument("csv", help="CSV produced by the model or sim modes")

    return parser


def _apply_config_file(args: argparse.Namespace, parser) -> None:
    if getattr(args, "config", None) is None:
        return
    try:
        with open(args.config) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        parser.error(f"cannot read config file: {exc}")
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            parser.error(f"bad config line (want key=value): {line!r}")
        key, value = line.split("=", 1)
        dest = key.strip().replace("-", "_")
        if not hasattr(args, dest):
            parser.error(f"unknown config key: {key.strip()!r}")
        current = getattr(args, dest)
        if isinstance(current, bool):
            setattr(args, dest, value.strip().lower() in ("1", "true", "yes"))
        elif isinstance(current, int) and not isinstance(current, bool):
            setattr(args, dest, int(value))
        elif isinstance(current, float):
            setattr(args, dest, float(value))
        else:
            setattr(args, dest, value.strip())


def _cmd_model(args) -> int:
    ns = _parse_n_grid(args.n)
    s_avgs = [m * 60.0 for m in _parse_list(args.savg_min)]
    phis = _parse_list(args.quarantine_phi) if args.quarantine_phi else []
    rows = models.bandwidth_sweep_rows(ns, s_avgs, f=args.f,
                                       include_quarantine_phi=phis,
                                       smooth=args.smooth_rho)
    _write_csv(args.out, ("n", "s_avg", "model", "variant", "bandwidth_bps"),
               rows)
    return 0


def _cmd_sim(args) -> int:
    ns = [round(x) for x in _parse_n_grid(args.n)]
    s_avgs = [m * 60.0 for m in _parse_list(args.savg_min)]
    seeds = _parse_seeds(args.seed)
    warmup_start, warmup_rate, warmup_settle = None, 1.0, 0.0
    if args.warmup:
        parts = args.warmup.split(":")
        warmup_start = int(parts[0])
        if len(parts) > 1:
            warmup_rate = float(parts[1])
        if len(parts) > 2:
            warmup_settle = float(parts[2])
    quarantine = None
    if args.quarantine_tq > 0:
        quarantine = QuarantineConfig(t_q=args.quarantine_tq)
    rows = []
    for n in ns:
        for s_avg in s_avgs:
            for seed in seeds:
                config = sim.SimConfig(
                    n_target=n, s_avg=s_avg, f=args.f,
                    delta_avg=args.delta_ms / 1000.0,
                    duration=args.duration,
                    warmup_start=warmup_start,
                    warmup_join_rate=warmup_rate,
                    warmup_settle=warmup_settle,
                    lookup_rate=args.lookup_rate,
                    kill_fraction=args.kill_fraction,
                    rejoin_delay=args.rejoin_delay,
                    reuse_ids=not args.no_reuse_ids,
                    protocol=args.protocol,
                    quarantine=quarantine,
                    session_phi=args.session_phi,
                    seed=seed,
                    trace=args.trace,
                )
                metrics = sim.run(config)
                if args.trace:
                    for line in metrics.trace_lines:
                        print(line, file=sys.stderr)
                rows.append(metrics.to_row())
    _write_csv(args.out, sim.Metrics.CSV_FIELDS, rows)
    return 0


def _cmd_wire(args) -> int:
    try:
        with open(args.decode) as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        data = bytes.fromhex("".join(text.split()))
        decoded = wire.decode(data, args.default_port)
    except (ValueError, wire.WireError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{type(decoded).__name__}")
    for name in decoded.__dataclass_fields__:
        value = getattr(decoded, name)
        if name == "events":
            print(f"  events ({len(value)}):")
            for ev in value:
                print(f"    {ev.kind} {ev.subject}")
        else:
            print(f"  {name} = {value}")
    print(f"  accounted bytes = {len(data) + wire.NET_OVERHEAD_BYTES}")
    return 0


_GROUP_COLS = ("protocol", "model", "variant", "n", "n_target", "s_avg",
               "f", "delta_avg", "duration")


def summarize(path: str) -> str:
    """Per-configuration means with 95% seed-confidence intervals, plus a
    quarantine-gain table when quarantine-adjusted model rows are present."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        fields = reader.fieldnames or []
    if not rows:
        return "(empty)"
    group_cols = [c for c in _GROUP_COLS if c in fields]
    value_cols = [c for c in fields
                  if c not in group_cols and c not in ("seed",)]
    groups: dict = {}
    for row in rows:
        key = tuple(row[c] for c in group_cols)
        groups.setdefault(key, []).append(row)
    lines = []
    header = group_cols + [f"{c} (mean ± 95%)" for c in value_cols]
    lines.append("  ".join(header))
    for key, grp in groups.items():
        cells = list(key)
        for col in value_cols:
            try:
                vals = [float(r[col]) for r in grp]
            except ValueError:
                cells.append(grp[0][col])
                continue
            mean = sum(vals) / len(vals)
            if len(vals) > 1:
                var = sum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
                ci = 1.96 * math.sqrt(var / len(vals))
                cells.append(f"{mean:.6g} ± {ci:.3g}")
            else:
                cells.append(f"{mean:.6g}")
        lines.append("  ".join(cells))

    if "variant" in fields and "bandwidth_bps" in fields:
        plain: dict = {}
        adjusted: dict = {}
        for row in rows:
            key = (row.get("n"), row.get("s_avg"))
            if row.get("model") == "d1ht" and not row.get("variant"):
                plain[key] = float(row["bandwidth_bps"])
            elif row.get("variant", "").startswith("quarantine_phi="):
                phi = row["variant"].split("=", 1)[1]
                adjusted[key + (phi,)] = float(row["bandwidth_bps"])
        if adjusted:
            lines.append("")
            lines.append("quarantine gains")
            lines.append("n  s_avg  phi  gain")
            for (n, s_avg, phi), bw in adjusted.items():
                base = plain.get((n, s_avg))
                if base:
                    lines.append(f"{n}  {s_avg}  {phi}  {1 - bw / base:.4f}")
    return "\n".join(lines)


def run_cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config_file(args, parser)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        if args.mode == "model":
            return _cmd_model(args)
        if args.mode == "sim":
            return _cmd_sim(args)
        if args.mode == "wire":
            return _cmd_wire(args)
        if args.mode == "summarize":
            print(summarize(args.csv))
            return 0
    except sim.SimulationAbort as exc:
        print(f"simulation aborted: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


def main() -> None:
    sys.exit(run_cli())
