"""Command-line entry point: ``python -m mbve {train,sweep,plot,thresholds}``.

Settings are resolved as defaults < ``--config`` JSON file < explicit flags.
Relative output directories are placed under ``$MBVE_OUTPUT_ROOT`` when set.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import dynamics, metrics, outputs
from .config import ALGORITHMS, TrainConfig, load_config, parse_seeds
from .envs import ENV_IDS
from .training import train

DESK_HORIZONS = (0, 1, 3, 5, 10)
LONG_HORIZONS = (20, 30)


def _add_run_flags(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--env", choices=ENV_IDS)
    p.add_argument("--algo", choices=ALGORITHMS)
    p.add_argument("--seeds", help="e.g. 0..4 or 0,2,7")
    p.add_argument("--steps", type=int, dest="total_steps")
    p.add_argument("--warmup", type=int, dest="warmup_steps")
    p.add_argument("--eval-interval", type=int)
    p.add_argument("--eval-episodes", type=int)
    p.add_argument("--bootstrap", choices=("twin_min_target", "single"))
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--member-resample", choices=dynamics.MEMBER_RESAMPLE)
    p.add_argument("--levels", type=int, default=5, help="threshold levels per environment")
    p.add_argument("--out", dest="out_dir")


def _resolve(args, horizon=None) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    changes = {}
    for key in ("env", "algo", "total_steps", "warmup_steps", "eval_interval", "eval_episodes",
                "bootstrap", "dtype", "out_dir"):
        value = getattr(args, key, None)
        if value is not None:
            changes[key] = value
    if args.seeds is not None:
        changes["seeds"] = parse_seeds(args.seeds)
    if args.member_resample is not None:
        changes["model"] = {"member_resample": args.member_resample}
    h = horizon if horizon is not None else getattr(args, "horizon", None)
    if h is not None:
        changes["horizon"] = h
    algo = changes.get("algo", cfg.algo)
    if algo == "sac" and changes.get("horizon", cfg.horizon) > 0:
        raise SystemExit("sac runs use horizon 0; pass --algo mve or --algo ove for expansion")
    return cfg.replace(**changes)


def _run_and_emit(cfg: TrainConfig, out: Path, levels: int):
    runs = train(cfg)
    thresholds = metrics.env_thresholds(cfg.env, levels)
    summary = metrics.aggregate_seeds(runs, thresholds)
    outputs.emit_outputs(summary, cfg, out)
    if any(r.model_nll for r in runs):
        for r in runs:
            dynamics.write_nll_csv(out / f"model_nll_seed{r.seed}.csv", r.model_nll)
    for r in runs:
        _write_diagnostics(out / f"diagnostics_seed{r.seed}.csv", r)
    return summary


def _write_diagnostics(path, run):
    keys = sorted({k for d in run.diagnostics for k in d})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + keys)
        for step, d in zip(run.steps, run.diagnostics):
            w.writerow([step] + [repr(float(d[k])) if k in d else "" for k in keys])


def _out_dir(cfg: TrainConfig) -> Path:
    out = cfg.resolved_out_dir()
    if out is None:
        raise SystemExit("no output directory: pass --out or set MBVE_OUTPUT_ROOT")
    return out


def cmd_train(args):
    cfg = _resolve(args)
    out = _out_dir(cfg)
    summary = _run_and_emit(cfg, out, args.levels)
    print(f"{cfg.label}: final mean reward {summary.mean[-1]:.2f} +- {summary.std[-1]:.2f} -> {out}")


def cmd_sweep(args):
    horizons = [int(h) for h in args.horizons.split(",")] if args.horizons else list(DESK_HORIZONS)
    if args.long:
        horizons += [h for h in LONG_HORIZONS if h not in horizons]
    base = _resolve(args, horizon=0)
    if base.algo == "sac":
        base = base.replace(algo="ove")
    root = _out_dir(base)
    rows = []
    for h in horizons:
        cfg = base.replace(horizon=h, out_dir=str(root / f"{base.algo}_H{h}"))
        summary = _run_and_emit(cfg, Path(cfg.out_dir), args.levels)
        rows += outputs.threshold_rows(h, summary.thresholds)
        print(f"{cfg.label}: final mean reward {summary.mean[-1]:.2f}")
    outputs.write_thresholds(root / outputs.THRESHOLDS, rows)


def cmd_plot(args):
    levels = lambda cfg: metrics.env_thresholds(cfg.env, args.levels)
    print(outputs.plot_curves(args.input))
    print(outputs.plot_thresholds(args.input, levels))


def cmd_thresholds(args):
    rows = outputs.recompute_thresholds(args.input, lambda cfg: metrics.env_thresholds(cfg.env, args.levels))
    path = outputs.write_thresholds(Path(args.input) / outputs.THRESHOLDS, rows)
    print(",".join(outputs.THRESHOLD_HEADER))
    for r in rows:
        print(",".join(str(x) for x in r))
    print(f"-> {path}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mbve", description="SAC / MVE / OVE experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one (algo, horizon) cell over seeds")
    _add_run_flags(p)
    p.add_argument("--horizon", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train a horizon sweep")
    _add_run_flags(p)
    p.add_argument("--horizons", help="comma list, default 0,1,3,5,10")
    p.add_argument("--long", action="store_true", help="also run H=20 and H=30")
    p.set_defaults(func=cmd_sweep)

    for name, func, text in (("plot", cmd_plot, "render curves and thresholds"),
                             ("thresholds", cmd_thresholds, "recompute steps-to-threshold")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--in", dest="input", required=True)
        p.add_argument("--levels", type=int, default=5)
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    args.func(args)


if __name__ == "__main__":
    main()
