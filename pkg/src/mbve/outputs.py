"""CSV/JSON result files and figures.

``curves.csv``
    header ``step,seed_<k>...,mean,std`` (one ``seed_<k>`` column per seed, in
    run order); one row per eval. ``step`` is a decimal integer, every other
    field is the shortest decimal that round-trips the 64-bit float
    (Python ``repr``). ``std`` is the population standard deviation.

``thresholds.csv``
    header ``horizon,threshold,steps,reached,num_seeds``; one row per
    (horizon, threshold). ``steps`` is the mean first-reach env step over the
    seeds that reached the threshold, empty when none did.

``config.json``
    the :class:`~mbve.config.TrainConfig` that produced the run, sorted keys,
    two-space indent.

Files are written with ``\\n`` line endings and UTF-8 encoding.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .errors import ConfigurationError
from .metrics import Summary, summarize_thresholds

CURVES = "curves.csv"
THRESHOLDS = "thresholds.csv"
CONFIG = "config.json"
THRESHOLD_HEADER = ["horizon", "threshold", "steps", "reached", "num_seeds"]


def _fmt(x) -> str:
    return repr(float(x))


def _ensure_dir(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    return out


def write_curves(path, summary: Summary) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + [f"seed_{s}" for s in summary.seeds] + ["mean", "std"])
        for j, step in enumerate(summary.steps):
            w.writerow([int(step)] + [_fmt(x) for x in summary.rewards[:, j]]
                       + [_fmt(summary.mean[j]), _fmt(summary.std[j])])
    return path


def read_curves(path) -> Summary:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] != "step" or header[-2:] != ["mean", "std"]:
        raise ConfigurationError(f"{path} is not a curves file")
    seeds = [int(h[len("seed_"):]) for h in header[1:-2]]
    data = np.array([[float(x) for x in r[1:]] for r in body]).reshape(len(body), len(seeds) + 2)
    steps = np.array([int(r[0]) for r in body], dtype=np.int64)
    return Summary(seeds, steps, data[:, :-2].T.copy(), data[:, -2].copy(), data[:, -1].copy())


def threshold_rows(horizon: int, thresholds) -> list:
    rows = []
    for t in thresholds:
        rows.append([int(horizon), _fmt(t.threshold), "" if t.mean_steps is None else _fmt(t.mean_steps),
                     int(t.reached), int(t.num_seeds)])
    return rows


def write_thresholds(path, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(THRESHOLD_HEADER)
        w.writerows(rows)
    return path


def read_thresholds(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [{"horizon": int(r["horizon"]), "threshold": float(r["threshold"]),
                 "steps": float(r["steps"]) if r["steps"] else None,
                 "reached": int(r["reached"]), "num_seeds": int(r["num_seeds"])} for r in reader]


def write_config(path, cfg: TrainConfig) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def emit_outputs(summary: Summary, cfg: TrainConfig, out_dir) -> dict:
    """Write ``curves.csv``, ``thresholds.csv`` and ``config.json`` into ``out_dir``."""
    if summary.steps.size == 0:
        raise ConfigurationError("nothing to write: the summary has no evals")
    out = _ensure_dir(out_dir)
    return {
        "curves": write_curves(out / CURVES, summary),
        "thresholds": write_thresholds(out / THRESHOLDS, threshold_rows(cfg.horizon, summary.thresholds)),
        "config": write_config(out / CONFIG, cfg),
    }


def find_runs(root) -> list:
    """``(config, curves Summary, dir)`` for every run directory under ``root``."""
    root = Path(root)
    found = []
    for cfg_path in sorted(root.rglob(CONFIG)):
        curves = cfg_path.parent / CURVES
        if curves.exists():
            with open(cfg_path, encoding="utf-8") as fh:
                cfg = TrainConfig.from_dict(json.load(fh))
            found.append((cfg, read_curves(curves), cfg_path.parent))
    if not found:
        raise ConfigurationError(f"no runs (config.json + curves.csv) found under {root}")
    return found


def recompute_thresholds(root, thresholds_for) -> list:
    """Threshold rows for every run under ``root``; ``thresholds_for(cfg)`` gives the levels."""
    rows = []
    for cfg, curves, _ in find_runs(root):
        runs = [_CurveRun(s, curves.steps, curves.rewards[i]) for i, s in enumerate(curves.seeds)]
        rows += threshold_rows(cfg.horizon, summarize_thresholds(runs, thresholds_for(cfg)))
    rows.sort(key=lambda r: (r[0], float(r[1])))
    return rows


class _CurveRun:
    def __init__(self, seed, steps, means):
        self.seed, self.steps, self.means = seed, list(steps), list(means)


def plot_curves(root, path=None):
    """Training curves: one panel per environment, one line (mean +- std) per
    algorithm/horizon. Returns the image path."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    runs = find_runs(root)
    envs = sorted({c.env for c, _, _ in runs})
    fig, axes = plt.subplots(1, len(envs), figsize=(5 * len(envs), 3.8), squeeze=False)
    for ax, env in zip(axes[0], envs):
        for cfg, cur, _ in sorted((r for r in runs if r[0].env == env), key=lambda r: (r[0].algo, r[0].horizon)):
            label = "SAC (H=0)" if cfg.horizon == 0 else f"{cfg.algo.upper()} H={cfg.horizon}"
            line, = ax.plot(cur.steps, cur.mean, label=label)
            ax.fill_between(cur.steps, cur.mean - cur.std, cur.mean + cur.std, color=line.get_color(), alpha=0.2)
        ax.set_title(env)
        ax.set_xlabel("environment steps")
        ax.set_ylabel("episode reward")
        ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path) if path else Path(root) / "curves.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_thresholds(root, thresholds_for, path=None):
    """Steps-to-threshold against horizon, one line per threshold level."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    runs = find_runs(root)
    envs = sorted({c.env for c, _, _ in runs})
    fig, axes = plt.subplots(1, len(envs), figsize=(5 * len(envs), 3.8), squeeze=False)
    for ax, env in zip(axes[0], envs):
        cells = sorted((r for r in runs if r[0].env == env), key=lambda r: r[0].horizon)
        levels = thresholds_for(cells[0][0])
        table = {}
        for cfg, cur, _ in cells:
            runs_ = [_CurveRun(s, cur.steps, cur.rewards[i]) for i, s in enumerate(cur.seeds)]
            for t in summarize_thresholds(runs_, levels):
                table.setdefault(t.threshold, []).append((cfg.horizon, t.mean_steps))
        cmap = plt.get_cmap("Greens")
        for k, (thr, pts) in enumerate(sorted(table.items())):
            pts = [(h, s) for h, s in pts if s is not None]
            if pts:
                ax.plot(*zip(*pts), marker="o", color=cmap(0.35 + 0.6 * k / max(1, len(table) - 1)), label=f"{thr:g}")
        ax.set_title(env)
        ax.set_xlabel("rollout horizon H")
        ax.set_ylabel("env steps to threshold")
        if ax.get_legend_handles_labels()[0]:
            ax.legend(title="threshold", fontsize=8)
    fig.tight_layout()
    path = Path(path) if path else Path(root) / "thresholds.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
