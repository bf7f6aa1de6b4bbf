"""Command-line entry point: ``iqfm <subcommand> [flags]``."""
import argparse
import logging
import sys
from pathlib import Path

from .. import __version__
from .._accel import backend_name
from ..errors import IqfmError
from . import config as cfgmod
from . import experiments
from .report import compute_metrics, export_embeddings, read_report, write_summary

SUBCOMMANDS = {
    "gen-data": "generate the Task A, Task A (open chain) and Task B datasets",
    "train": "train and evaluate every configured method once per trial",
    "sweep-noise": "accuracy and retention across the noise_p list",
    "sweep-shots": "accuracy across the shots list",
    "sweep-depth": "accuracy across the L_values list",
    "run-fashion": "Fashion-MNIST runs across the M_values list",
    "export-embeddings": "write test-set representations of a trained IQFM as CSV",
    "report": "recompute summary.json from an existing report.csv",
}

KIND_OF = {"train": "train", "sweep-noise": "sweep-noise", "sweep-shots": "sweep-shots",
           "sweep-depth": "sweep-depth", "run-fashion": "fashion"}


def _parser():
    p = argparse.ArgumentParser(prog="iqfm", description="Iterative quantum feature map experiments")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in SUBCOMMANDS.items():
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", type=Path, help="flat key = value config file")
        s.add_argument("--preset", choices=sorted(cfgmod.PRESETS), help="base preset")
        s.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        s.add_argument("--workers", type=int, help="parallel trial processes")
        s.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        s.add_argument("--no-timing", action="store_true",
                       help="write wall_time = 0 so reports are byte-reproducible")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "report":
            s.add_argument("report_csv", type=Path, nargs="?", help="defaults to OUT/report.csv")
    return p


def _config(args):
    overrides = cfgmod.parse_text("\n".join(args.set), "--set") if args.set else {}
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise IqfmError("--seed must be an unsigned 64-bit integer")
        overrides["master_seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.no_timing:
        overrides["timing"] = False
    return cfgmod.build_config(args.preset, args.config, overrides)


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (IqfmError, OSError) as exc:
        print(f"iqfm: error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args):
    out = args.out
    if args.command == "report":
        path = args.report_csv or out / "report.csv"
        summary = compute_metrics(read_report(path))
        target = Path(path).with_name("summary.json")
        write_summary(summary, target)
        for g in summary:
            print(f"{g['task']:12s} {g['method']:20s} L={g['L']} M={g['M']} shots={g['shots']} "
                  f"p={g['noise_p']}: {g['mean']:.4f} +- {g['std']:.4f} (n={g['n']})")
        return 0
    cfg = _config(args)
    if args.command == "gen-data":
        for p in experiments.save_task_data(cfg, out):
            print(p)
        return 0
    if args.command == "export-embeddings":
        reps, labels, trace = experiments.trained_representations(cfg)
        out.mkdir(parents=True, exist_ok=True)
        export_embeddings(reps, labels, out / "embeddings.csv")
        trace.write_csv(out / "loss_trace.csv")
        print(out / "embeddings.csv")
        return 0
    logging.getLogger(__name__).info("kernel backend: %s", backend_name())
    res = experiments.run_experiment(cfg, KIND_OF[args.command], out)
    for g in res.summary:
        print(f"{g['method']:20s} L={g['L']} M={g['M']} shots={g['shots']} p={g['noise_p']}: "
              f"{g['mean']:.4f} +- {g['std']:.4f} (n={g['n']}, failed={g['failed']})")
    print(res.paths["report"])
    return 1 if res.errors else 0


if __name__ == "__main__":
    sys.exit(main())
