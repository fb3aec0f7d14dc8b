"""Command-line entry point: ``sfim <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import sim
from .gnn.checkpoint import read_header
from .training import TrainingConfig, train

log = logging.getLogger("sfim")


def _load_spec(args) -> sim.SchemeSpec:
    spec = sim.SchemeSpec.load(args.scheme)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.min_errors is not None:
        changes["min_errors"] = args.min_errors
    if args.max_trials is not None:
        changes["max_trials"] = args.max_trials
    if getattr(args, "detectors", None):
        changes["detectors"] = args.detectors.split(",")
    if getattr(args, "checkpoint", None):
        ck = dict(spec.checkpoints)
        for path in args.checkpoint:
            ck[read_header(path)["variant"]] = str(Path(path).resolve())
        changes["checkpoints"] = ck
    return spec.replace(**changes) if changes else spec


def _common(p, checkpoint=True):
    p.add_argument("--scheme", required=True,
                   help="scheme YAML file, or the name of a packaged scheme (e.g. scheme1)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="results")
    p.add_argument("--min-errors", type=int, default=None)
    p.add_argument("--max-trials", type=int, default=None)
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: $SFIM_WORKERS or 1)")
    if checkpoint:
        p.add_argument("--checkpoint", action="append", default=[],
                       help="GNN checkpoint; the variant is read from its header (repeatable)")
    p.add_argument("--detectors", default=None, help="comma-separated subset of detectors")


def cmd_sweep(args) -> int:
    spec = _load_spec(args)
    cells = sim.run_sweep(spec, args.out, args.workers)
    for c in cells:
        log.info("%s %5.1f dB  ber=%.3e  (%d errors / %d bits, %s) %s", c.detector, c.snr_db,
                 c.ber, c.errors, c.bits, c.stop, c.note)
    return 0


def cmd_vary(args) -> int:
    spec = _load_spec(args)
    ka = [int(k) for k in args.ka.split(",")] if args.ka else None
    cells = sim.run_varying_users(spec, args.out, ka, args.snr, args.workers)
    for c in cells:
        log.info("%s Ka=%d ber=%.3e (%s) %s", c.detector, c.active_users, c.ber, c.stop, c.note)
    return 0


def cmd_train(args) -> int:
    spec = _load_spec(args)
    mix = ()
    if args.user_mix:
        counts = [int(u) for u in args.user_mix.split(",")]
        mix = tuple((u, 1.0 / len(counts)) for u in counts)
    tcfg = TrainingConfig(args.variant, spec.system, args.samples, args.epochs, args.batch,
                          args.lr, (args.snr_low, args.snr_high), mix,
                          0 if args.seed is None else args.seed,
                          args.checkpoint or str(Path(args.out, f"{spec.name}_{args.variant}.ckpt")),
                          spec.iterations, spec.rounds, measurement_seed=spec.measurement_seed)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    log_path = Path(args.out, f"{spec.name}_{args.variant}_train.csv")
    train(tcfg, log_path, progress=lambda r: log.info("epoch %(epoch)d loss %(loss).3f "
                                                      "val_ser %(val_ser).4f lr %(lr).2e", r))
    log.info("checkpoint written to %s", tcfg.checkpoint)
    return 0


def cmd_complexity(args) -> int:
    spec = _load_spec(args)
    report = sim.count_complexity(spec, seed=0 if args.seed is None else args.seed)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    path = Path(args.out, f"{spec.name}_complexity.json")
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    for d, n in report.counts.items():
        log.info("%-9s %s real mults  %s", d, "infeasible" if n is None else f"{n:.3e}",
                 report.orders[d])
    return 0


def cmd_plot(args) -> int:
    files = sim.emit_plot_data(args.results, args.out)
    for f in files:
        log.info("wrote %s", f)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sfim", description=__doc__)
    ap.add_argument("-q", "--quiet", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="BER versus SNR for each detector")
    _common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("vary-users", help="BER versus number of active users at one SNR")
    _common(p)
    p.add_argument("--ka", default=None, help="comma-separated active-user counts")
    p.add_argument("--snr", type=float, default=None)
    p.set_defaults(func=cmd_vary)

    p = sub.add_parser("train", help="train a GNN detector")
    _common(p, checkpoint=False)
    p.add_argument("--variant", required=True, choices=sim.GNN)
    p.add_argument("--checkpoint", default=None, help="output checkpoint path")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--samples", type=int, default=2000, help="instances per epoch")
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--snr-low", type=float, default=0.0)
    p.add_argument("--snr-high", type=float, default=10.0)
    p.add_argument("--user-mix", default=None,
                   help="comma-separated user counts sampled uniformly per batch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("complexity", help="measured multiplication counts")
    _common(p)
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("plot-data", help="per-detector series files from result CSVs")
    p.add_argument("results", nargs="+")
    p.add_argument("--out", default="plots")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (sim.SchemeError, FileNotFoundError, ValueError) as exc:
        log.error("error: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
