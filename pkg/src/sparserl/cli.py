"""Command-line entry point.

Subcommands: allocate, baseline, train, eval, metrics, sweep,
export-masks. Exit codes: 0 success, 2 config errors, 3 file-format
errors (checkpoints, embeddings, CSV logs), 1 anything else. The
SPARSERL_LOG environment variable sets log verbosity (DEBUG/INFO/...).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import harness
from .allocation import AllocationError
from .checkpoint import CheckpointError
from .embedding import EmbeddingError
from .envs import EnvConfigError
from .harness import ConfigError
from .metrics import MetricsError, compute_metrics, read_eval_csv, write_metrics_csv

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_FORMAT = 3

log = logging.getLogger("sparserl")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparserl",
        description="Continual RL with sparse-prompted sub-network masks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="path to a flat JSON run config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's run seed")
        p.add_argument("--out", required=True, help="output directory")

    common(sub.add_parser("allocate", help="allocate masks only (no RL)"))
    common(sub.add_parser("baseline",
                          help="train cached single-task baselines"))
    p_train = sub.add_parser("train", help="run the full task sequence")
    common(p_train)
    p_train.add_argument("--resume", action="store_true",
                         help="resume from the run's last checkpoint")
    common(sub.add_parser("eval",
                          help="re-evaluate completed tasks from a checkpoint"))
    common(sub.add_parser("metrics", help="compute P/F/FT from a run's logs"))
    common(sub.add_parser("sweep", help="grid sweep over beta or tau"))
    p_export = sub.add_parser("export-masks",
                              help="export masks + similarity matrices")
    p_export.add_argument("checkpoint", help="path to a checkpoint file")
    p_export.add_argument("--out", required=True, help="output directory")
    return parser


def _cmd_allocate(cfg, out_dir) -> int:
    report = harness.allocate_only(cfg)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "allocation.csv"), "w") as fh:
        fh.write("task_id,seconds,param_coords,cumulative_utilization,"
                 "neurons_per_layer\n")
        for r in report["rows"]:
            widths = " ".join(str(n) for n in r["neurons_per_layer"])
            fh.write(f"{r['task_id']},{r['seconds']:.6f},{r['param_coords']},"
                     f"{r['cumulative_utilization']:.6f},{widths}\n")
    for r in report["rows"]:
        print(f"task {r['task_id']}: {r['seconds'] * 1e3:.2f} ms, "
              f"{r['param_coords']} coords, "
              f"utilization {r['cumulative_utilization']:.3f}")
    print(f"total allocation time: {report['total_seconds']:.3f} s")
    return EXIT_OK


def _cmd_train(cfg, out_dir, resume: bool) -> int:
    art = harness.run_sequence(cfg, out_dir, resume=resume)
    m = art.metrics
    print(f"P={m.P:.4f} F={m.F:.4f} FT={m.FT_mean:.4f}")
    return EXIT_OK


def _cmd_eval(cfg, out_dir) -> int:
    for task_id, rate in harness.reevaluate(cfg, out_dir):
        print(f"{task_id},{rate:.6f}")
    return EXIT_OK


def _cmd_metrics(cfg, out_dir) -> int:
    curves = read_eval_csv(os.path.join(out_dir, "eval.csv"))
    baselines = harness.load_baselines(cfg, harness.build_suite(cfg))
    result = compute_metrics(curves, float(cfg.steps_per_task), baselines)
    write_metrics_csv(os.path.join(out_dir, "metrics.csv"), result)
    print(f"P={result.P:.4f} F={result.F:.4f} FT={result.FT_mean:.4f}")
    return EXIT_OK


def _cmd_sweep(cfg, out_dir) -> int:
    rows = harness.sweep(cfg, out_dir)
    for r in rows:
        status = r["error"] or "ok"
        print(f"{r['parameter']}={r['value']:g}: P={r['P']:.4f} "
              f"F={r['F']:.4f} FT={r['FT']:.4f} [{status}]")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("SPARSERL_LOG", "INFO").upper(),
        format="%(asctime)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export-masks":
            harness.export_masks(args.checkpoint, args.out)
            print(f"masks exported to {args.out}")
            return EXIT_OK
        cfg = harness.load_config(args.config, seed=args.seed)
        if args.command == "allocate":
            return _cmd_allocate(cfg, args.out)
        if args.command == "baseline":
            harness.run_baselines(cfg, args.out)
            return EXIT_OK
        if args.command == "train":
            return _cmd_train(cfg, args.out, args.resume)
        if args.command == "eval":
            return _cmd_eval(cfg, args.out)
        if args.command == "metrics":
            return _cmd_metrics(cfg, args.out)
        if args.command == "sweep":
            return _cmd_sweep(cfg, args.out)
        raise RuntimeError(f"unhandled command {args.command}")
    except (ConfigError, AllocationError, EnvConfigError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (CheckpointError, EmbeddingError, MetricsError) as exc:
        log.error("format error: %s", exc)
        return EXIT_FORMAT
    except Exception as exc:
        log.exception("run failed: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
