"""Command-line front end: ``monitored-fermions <command> ...``.

Commands
--------
simulate   run every point of a config (the sweep block may be empty)
sweep      same, but insists on a non-empty sweep block
fit        fit a results table (size or rate scaling)
page-ref   random-phase reference entropy for given sizes
report     summarise a run directory
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import manybody, orchestrator
from .config import load_config, with_seed
from .errors import ConfigError, MonitoredFermionsError


def _run(args, require_sweep):
    if args.resume and not args.config:
        return orchestrator.checkpoint_resume(args.resume, workers=args.workers), Path(args.resume)
    if not args.config:
        raise ConfigError("--config is required unless resuming")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    if require_sweep and not cfg.sweep:
        raise ConfigError("sweep needs a non-empty sweep block")
    if args.resume:
        return orchestrator.checkpoint_resume(args.resume, cfg, workers=args.workers), Path(args.resume)
    run_dir = args.output or cfg.output.get("directory")
    if run_dir is None:
        run_dir = orchestrator.output_root() / orchestrator.config_hash(cfg)[:12]
    return orchestrator.simulate(cfg, run_dir, workers=args.workers), Path(run_dir)


def cmd_simulate(args, require_sweep=False):
    rows, run_dir = _run(args, require_sweep)
    print(f"{len(rows)} result rows written to {run_dir / 'results.csv'}")
    summary = orchestrator.report(run_dir)
    if summary["failed"]:
        print(f"{len(summary['failed'])} points failed; see manifest.json", file=sys.stderr)
        return 3
    return 0


def cmd_fit(args):
    rows = orchestrator.read_results(args.table)
    spec = {}
    if args.spec:
        spec = yaml.safe_load(Path(args.spec).read_text()) or {}
    for key in ("observable", "axis", "fix_b", "gamma_max"):
        val = getattr(args, key)
        if val is not None:
            spec[key] = val
    out = args.output or Path(args.table).parent / "fits"
    rep = orchestrator.fit(rows, spec, out)
    print(json.dumps(rep, indent=2, default=str))
    return 0


def cmd_page_ref(args):
    for L in args.L:
        mean, err = manybody.page_reference(L, args.samples, args.seed, return_stderr=True)
        print(f"L={L} page_reference={mean:.10f} stderr={err:.2e}")
    return 0


def cmd_report(args):
    print(json.dumps(orchestrator.report(args.run), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="monitored-fermions", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "sweep"):
        s = sub.add_parser(name, help=f"{name} a run config")
        s.add_argument("--config", type=Path)
        s.add_argument("--resume", type=Path, metavar="DIR", help="continue an interrupted run")
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--seed", type=int, help="override ensemble.master_seed")
        s.add_argument("--output", type=Path, help="run directory (default: from config or env)")
    f = sub.add_parser("fit", help="fit a results table")
    f.add_argument("--table", required=True, type=Path)
    f.add_argument("--spec", type=Path, help="YAML/JSON fit spec")
    f.add_argument("--observable")
    f.add_argument("--axis", choices=("L", "gamma"))
    f.add_argument("--fix-b", dest="fix_b", type=float)
    f.add_argument("--gamma-max", dest="gamma_max", type=float)
    f.add_argument("--output", type=Path)
    g = sub.add_parser("page-ref", help="random-phase reference entropy")
    g.add_argument("--L", type=int, nargs="+", required=True)
    g.add_argument("--samples", type=int, default=200)
    g.add_argument("--seed", type=int, default=0)
    r = sub.add_parser("report", help="summarise a run directory")
    r.add_argument("run", type=Path)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "sweep":
            return cmd_simulate(args, require_sweep=True)
        if args.command == "fit":
            return cmd_fit(args)
        if args.command == "page-ref":
            return cmd_page_ref(args)
        return cmd_report(args)
    except MonitoredFermionsError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
