"""Steps-to-threshold and across-seed aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

# Episode-reward ranges whose linear interpolation gives the threshold levels.
THRESHOLD_RANGES = {"pendulum": (50.0, 200.0), "cartpole_swingup": (100.0, 400.0)}


def threshold_levels(low: float, high: float, levels: int = 5) -> list:
    if levels < 1:
        raise ConfigurationError("levels must be >= 1")
    if levels == 1:
        return [float(high)]
    return [float(x) for x in np.linspace(low, high, levels)]


def env_thresholds(env_id: str, levels: int = 5) -> list:
    if env_id not in THRESHOLD_RANGES:
        raise ConfigurationError(f"no threshold range for {env_id!r}")
    return threshold_levels(*THRESHOLD_RANGES[env_id], levels)


def _curve(metrics):
    if hasattr(metrics, "steps"):
        return list(metrics.steps), list(metrics.means)
    pairs = list(metrics)
    return [p[0] for p in pairs], [p[1] for p in pairs]


def steps_to_threshold(metrics, thresholds) -> list:
    """``[(threshold, step or None), ...]``: the env step of the first eval whose
    mean reward reaches each threshold.

    ``metrics`` is a :class:`~mbve.training.RunMetrics` or ``(step, reward)`` pairs.
    """
    steps, rewards = _curve(metrics)
    if not steps:
        raise ConfigurationError("empty metrics")
    thresholds = [float(t) for t in thresholds]
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ConfigurationError("thresholds must be sorted ascending")
    rewards = np.asarray(rewards)
    out = []
    for thr in thresholds:
        hit = np.nonzero(rewards >= thr)[0]
        out.append((thr, int(steps[hit[0]]) if hit.size else None))
    return out


@dataclass
class ThresholdSummary:
    threshold: float
    per_seed: list  # step or None per seed
    mean_steps: float | None  # over seeds that reached it
    median_steps: float | None  # unreached seeds count as infinitely late
    reached: int

    @property
    def num_seeds(self) -> int:
        return len(self.per_seed)


@dataclass
class Summary:
    """Across-seed view of a set of runs. ``std`` is the population (ddof=0) value."""

    seeds: list
    steps: np.ndarray  # [T]
    rewards: np.ndarray  # [S, T]
    mean: np.ndarray
    std: np.ndarray
    thresholds: list = field(default_factory=list)  # ThresholdSummary


def median_steps(values, unreached=np.inf) -> float:
    """Median of per-seed steps, counting unreached seeds as ``unreached``."""
    vals = [unreached if v is None else v for v in values]
    return float(np.median(vals))


def summarize_thresholds(runs, thresholds) -> list:
    hits = [steps_to_threshold(r, thresholds) for r in runs]
    out = []
    for j, thr in enumerate(thresholds):
        per_seed = [h[j][1] for h in hits]
        got = [v for v in per_seed if v is not None]
        med = median_steps(per_seed)
        out.append(ThresholdSummary(
            float(thr), per_seed, float(np.mean(got)) if got else None,
            med if np.isfinite(med) else None, len(got),
        ))
    return out


def aggregate_seeds(runs, thresholds=None) -> Summary:
    """Mean and population std of eval reward per step across seeds.

    All runs must share the same eval grid.
    """
    runs = list(runs)
    if not runs:
        raise ConfigurationError("aggregate_seeds needs at least one run")
    grid = [int(s) for s in runs[0].steps]
    for r in runs[1:]:
        if [int(s) for s in r.steps] != grid:
            raise ConfigurationError(f"seed {r.seed} has a different eval grid from seed {runs[0].seed}")
    rewards = np.array([r.means for r in runs], dtype=np.float64).reshape(len(runs), len(grid))
    summary = Summary(
        [r.seed for r in runs], np.array(grid, dtype=np.int64), rewards,
        rewards.mean(axis=0), rewards.std(axis=0),
    )
    if thresholds is not None:
        summary.thresholds = summarize_thresholds(runs, thresholds)
    return summary
