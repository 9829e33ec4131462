"""Command-line entry point.

    tgsim run --config scenario.yaml --out results/
    tgsim sweep --config scenario.yaml --users 1..10 --schemes legacy,scs,sscs
    tgsim validate-tables

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
The LOG_LEVEL environment variable (error|warn|info|debug|trace) controls
verbosity on standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from . import kpi, validation
from .config import ConfigError, ScenarioConfig, load_config, with_overrides
from .engine import TraceOptions, run_campaign

log = logging.getLogger("tgsim")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

# Named scheme presets used by `sweep --schemes`.
SCHEME_PRESETS = {
    "legacy": dict(user_mode="LegacyXR", coop_scheme="none"),
    "scs": dict(user_mode="TGr", coop_scheme="SCS"),
    "sscs": dict(user_mode="TGr", coop_scheme="SSCS"),
    "sscs-uex": dict(user_mode="TGr", coop_scheme="SSCS", csi_mode="UEX"),
    "sscs-cbg": dict(user_mode="TGr", coop_scheme="SSCS", cb_mode="CBG",
                     target_bler=None),
    "sscs-cbg50-uex": dict(user_mode="TGr", coop_scheme="SSCS", cb_mode="CBG",
                           target_bler=None,
                           limited_cb={"variant": "CBsUEX", "fraction": 0.5}),
    "sscs-cbg50-uet": dict(user_mode="TGr", coop_scheme="SSCS", cb_mode="CBG",
                           target_bler=None,
                           limited_cb={"variant": "CBsUET", "fraction": 0.5}),
    "legacy-cbg": dict(user_mode="LegacyXR", coop_scheme="none", cb_mode="CBG",
                       target_bler=None),
}


def apply_scheme(cfg: ScenarioConfig, scheme: str) -> ScenarioConfig:
    try:
        preset = SCHEME_PRESETS[scheme]
    except KeyError:
        raise ConfigError(f"unknown scheme {scheme!r}; "
                          f"choose from {sorted(SCHEME_PRESETS)}")
    kwargs = dict(preset)
    if "limited_cb" in kwargs:
        from .config import LimitedCbParams
        kwargs["limited_cb"] = LimitedCbParams(**kwargs["limited_cb"])
    return with_overrides(cfg, **kwargs)


def _setup_logging() -> None:
    level_name = os.environ.get("LOG_LEVEL", "warn").lower()
    level = {"error": logging.ERROR, "warn": logging.WARNING,
             "warning": logging.WARNING, "info": logging.INFO,
             "debug": logging.DEBUG, "trace": logging.DEBUG}.get(
                 level_name, logging.WARNING)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="scenario file (YAML)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--drops", type=int, default=None)
    p.add_argument("--users-per-cell", type=int, default=None)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--parallel", type=int, default=1,
                   help="concurrent drop executions")
    p.add_argument("--json", action="store_true",
                   help="print a machine-readable summary to stdout")
    p.add_argument("--trace-channel", action="store_true")
    p.add_argument("--trace-olla", action="store_true")
    p.add_argument("--trace-events", action="store_true")
    p.add_argument("--trace-arrivals", action="store_true")
    p.add_argument("--trace-allocations", action="store_true")


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.drops is not None:
        overrides["drops"] = args.drops
    if args.users_per_cell is not None:
        overrides["users_per_cell"] = args.users_per_cell
    return with_overrides(cfg, **overrides) if overrides else cfg


def _traces(args) -> Optional[TraceOptions]:
    t = TraceOptions(channel=args.trace_channel, olla=args.trace_olla,
                     events=args.trace_events, arrivals=args.trace_arrivals,
                     allocations=args.trace_allocations)
    if any((t.channel, t.olla, t.events, t.arrivals, t.allocations)):
        return t
    return None


def _write_traces(outdir: str, results, suffix: str = "") -> None:
    headers = {
        "channel": "slot,rx,sinr_db",
        "olla": "slot,flow,offset_db,hf_j",
        "events": "slot,flow,scenario,hf_x1,hf_t1,hf_x2,retx,tx_count",
        "arrivals": "flow,frame,arrival_ms,size_bits",
        "allocations": "slot,cell,flow,prb_lo,prb_hi,mcs,kind",
    }
    names = {name for r in results for name in r.traces}
    for name in sorted(names):
        path = os.path.join(outdir, f"trace_{name}{suffix}.csv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("drop," + headers[name] + "\n")
            for r in results:
                for row in r.traces.get(name, ()):
                    fh.write(f"{r.drop_index}," +
                             ",".join(str(x) for x in row) + "\n")


def _scheme_name(cfg: ScenarioConfig) -> str:
    if not cfg.is_tgr():
        return "legacy" if cfg.cb_mode == "TB" else "legacy-cbg"
    name = cfg.coop_scheme.lower()
    if cfg.cb_mode == "CBG":
        name += "-cbg"
        if cfg.limited_cb.variant != "none":
            name += f"{int(round(cfg.limited_cb.fraction * 100))}"
    if cfg.csi_mode == "UEX":
        name += "-uex"
    return name


def cmd_run(args) -> int:
    cfg = _load(args)
    os.makedirs(args.out, exist_ok=True)
    results = run_campaign(cfg, parallel=args.parallel, traces=_traces(args))
    scheme = _scheme_name(cfg)
    summary = kpi.summarize(results, cfg, scheme)
    curve = kpi.xr_capacity({cfg.users_per_cell: summary.satisfied_fraction},
                            cfg.pdb_ms)

    kpi.write_capacity_csv(os.path.join(args.out, "capacity.csv"), [{
        "scheme": scheme, "csi_mode": cfg.csi_mode, "pdb_ms": cfg.pdb_ms,
        "users_per_cell": cfg.users_per_cell,
        "satisfied_fraction": summary.satisfied_fraction,
        "capacity_flag": curve.capacity == cfg.users_per_cell}])
    kpi.write_delay_csv(os.path.join(args.out, "delay.csv"), [{
        "scheme": scheme, "users_per_cell": cfg.users_per_cell,
        "p50_ms": summary.p50_ms, "p99_ms": summary.p99_ms}])
    kpi.write_prb_csv(os.path.join(args.out, "prb.csv"), [
        {"scheme": scheme, "cell": i, "mean_load": float(v)}
        for i, v in enumerate(summary.prb_load_cells)])
    kpi.write_embb_csv(os.path.join(args.out, "embb.csv"), [
        {"scheme": scheme, "user": f"{d}-{f}", "mbps": v}
        for (d, f), v in sorted(summary.embb_mbps.items())])
    kpi.write_summary_json(os.path.join(args.out, "summary.json"), cfg,
                           [summary])
    _write_traces(args.out, results)
    if args.json:
        print(json.dumps({"scheme": scheme,
                          "satisfied_fraction": summary.satisfied_fraction,
                          "out": args.out}))
    else:
        print(f"{scheme}: {summary.n_users} users, "
              f"satisfied {summary.satisfied_fraction:.3f}, "
              f"p99 delay {summary.p99_ms:.2f} ms")
    return EXIT_OK


def _parse_users(spec: str) -> List[int]:
    if ".." in spec:
        a, b = spec.split("..", 1)
        lo, hi = int(a), int(b)
        if lo > hi:
            raise ConfigError(f"empty user range {spec!r}")
        return list(range(lo, hi + 1))
    return [int(x) for x in spec.split(",")]


def sweep_capacity(cfg: ScenarioConfig, users: List[int], schemes: List[str],
                   parallel: int = 1, extra_pdbs: tuple = ()) -> dict:
    """Campaign per (scheme, load) with matched drop seeds across schemes.

    Returns {scheme: {"summaries": {users: RunSummary},
                      "capacity": {pdb: CapacityCurve}}}.
    """
    out = {}
    for scheme in schemes:
        scheme_cfg = apply_scheme(cfg, scheme)
        summaries = {}
        for u in users:
            run_cfg = with_overrides(scheme_cfg, users_per_cell=u)
            results = run_campaign(run_cfg, parallel=parallel)
            summaries[u] = kpi.summarize(results, run_cfg, scheme,
                                         extra_pdbs=extra_pdbs)
        curves = {}
        for pdb in (cfg.pdb_ms, *extra_pdbs):
            points = {u: s.satisfied_fraction_by_pdb[pdb]
                      for u, s in summaries.items()}
            curves[pdb] = kpi.xr_capacity(points, pdb)
        out[scheme] = {"summaries": summaries, "capacity": curves}
    return out


def write_sweep_outputs(outdir: str, sweep: dict, pdbs: List[float]) -> None:
    cap_rows, delay_rows, prb_rows, embb_rows = [], [], [], []
    for scheme in sorted(sweep):
        data = sweep[scheme]
        for pdb in pdbs:
            curve = data["capacity"][pdb]
            for u, frac in curve.points:
                s = data["summaries"][u]
                cap_rows.append({
                    "scheme": scheme, "csi_mode": s.csi_mode, "pdb_ms": pdb,
                    "users_per_cell": u, "satisfied_fraction": frac,
                    "capacity_flag": u == curve.capacity})
        for u in sorted(data["summaries"]):
            s = data["summaries"][u]
            delay_rows.append({"scheme": scheme, "users_per_cell": u,
                               "p50_ms": s.p50_ms, "p99_ms": s.p99_ms})
            for cell, v in enumerate(s.prb_load_cells):
                prb_rows.append({"scheme": f"{scheme}@{u}", "cell": cell,
                                 "mean_load": float(v)})
            for (d, f), v in sorted(s.embb_mbps.items()):
                embb_rows.append({"scheme": f"{scheme}@{u}",
                                  "user": f"{d}-{f}", "mbps": v})
    kpi.write_capacity_csv(os.path.join(outdir, "capacity.csv"), cap_rows)
    kpi.write_delay_csv(os.path.join(outdir, "delay.csv"), delay_rows)
    kpi.write_prb_csv(os.path.join(outdir, "prb.csv"), prb_rows)
    kpi.write_embb_csv(os.path.join(outdir, "embb.csv"), embb_rows)


def cmd_sweep(args) -> int:
    cfg = _load(args)
    users = _parse_users(args.users)
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    os.makedirs(args.out, exist_ok=True)
    extra = tuple(float(x) for x in args.extra_pdbs.split(",") if x) \
        if args.extra_pdbs else ()
    sweep = sweep_capacity(cfg, users, schemes, parallel=args.parallel,
                           extra_pdbs=extra)
    write_sweep_outputs(args.out, sweep, [cfg.pdb_ms, *extra])
    report = {scheme: {str(pdb): c.capacity
                       for pdb, c in data["capacity"].items()}
              for scheme, data in sweep.items()}
    if args.json:
        interp = {scheme: {str(pdb): c.interpolated
                           for pdb, c in data["capacity"].items()}
                  for scheme, data in sweep.items()}
        print(json.dumps({"capacity": report,
                          "capacity_interpolated": interp,
                          "out": args.out}, sort_keys=True))
    else:
        for scheme, caps in sorted(report.items()):
            caps_s = ", ".join(f"pdb {p} ms -> {c}" for p, c in sorted(caps.items()))
            print(f"capacity[{scheme}]: {caps_s}")
    return EXIT_OK


def cmd_validate_tables(args) -> int:
    rows = validation.validate_tables()
    bad = [r for r in rows if not r.ok]
    if args.json:
        print(json.dumps({
            "rows": len(rows), "mismatches": len(bad),
            "detail": [{"scheme": r.scheme, "scenario": r.scenario,
                        "branch": r.branch, "ok": r.ok} for r in rows]}))
    else:
        print(validation.format_report(rows))
    return EXIT_OK if not bad else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tgsim",
        description="System-level simulator for downlink multicast to "
                    "XR tethering groups")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario campaign")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="sweep user load for capacity")
    _add_common(p_sweep)
    p_sweep.add_argument("--users", required=True,
                         help="range a..b or comma list")
    p_sweep.add_argument("--schemes", default="legacy,scs,sscs",
                         help=f"comma list from {sorted(SCHEME_PRESETS)}")
    p_sweep.add_argument("--extra-pdbs", default="",
                         help="additional PDB values (ms) to evaluate")
    p_sweep.set_defaults(func=cmd_sweep)

    p_val = sub.add_parser("validate-tables",
                           help="check the cooperation/feedback decision tables")
    p_val.add_argument("--json", action="store_true")
    p_val.set_defaults(func=cmd_validate_tables)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failures map to a distinct code
        log.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
