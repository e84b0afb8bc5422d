"""Batches of independent runs, terminal labels and ensemble statistics."""

from __future__ import annotations

import enum
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .market import MarketConfig, Trajectory, run_simulation
from .rng import check_seed, derive_seed

DEFAULT_TAIL = 100
DEFAULT_EPS0 = 0.5
DEFAULT_EPS1 = 2.0


class Label(enum.Enum):
    REACHED_ZERO = "reached_zero"
    POSITIVE = "positive"
    UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class TerminalLabel:
    value: Label
    tail_mean: float


@dataclass
class Ensemble:
    config: MarketConfig
    base_seed: int
    trajectories: List[Trajectory]
    labels: List[TerminalLabel]
    seeds: List[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.trajectories) != len(self.labels):
            raise ValueError("trajectories and labels differ in length")
        if len({len(t) for t in self.trajectories}) > 1:
            raise ValueError("trajectories differ in length")

    def __len__(self):
        return len(self.trajectories)

    def indices(self, group):
        """Run indices carrying label ``group`` (a Label, or None for all)."""
        return [i for i, lab in enumerate(self.labels) if group is None or lab.value == group]

    def closes(self, group=None):
        idx = self.indices(group)
        if not idx:
            return np.empty((0, len(self.trajectories[0]) if self.trajectories else 0))
        return np.vstack([self.trajectories[i].close for i in idx])

    def save(self, directory, extra_manifest=None):
        """Write ``manifest.json`` plus ``run_XXXX.csv`` per trajectory.

        Returns the list of written paths.
        """
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        runs = []
        written = []
        eps = self.config.zero_threshold
        for i, (traj, lab) in enumerate(zip(self.trajectories, self.labels)):
            name = f"run_{i:04d}.csv"
            traj.to_csv(d / name)
            written.append(d / name)
            runs.append({
                "run_index": i,
                "seed": self.seeds[i] if self.seeds else None,
                "label": lab.value.value,
                "tail_mean": lab.tail_mean,
                "terminal_price": float(traj.close[-1]),
                "time_to_zero": time_to_zero(traj, eps),
                "file": name,
            })
        manifest = {"config": self.config.to_dict(), "base_seed": self.base_seed, "runs": runs}
        if extra_manifest:
            manifest.update(extra_manifest)
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        written.append(d / "manifest.json")
        return written

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        config = MarketConfig.from_dict(manifest["config"])
        trajs, labels, seeds = [], [], []
        for run in manifest["runs"]:
            trajs.append(Trajectory.from_csv(d / run["file"], config))
            labels.append(TerminalLabel(Label(run["label"]), run["tail_mean"]))
            seeds.append(run["seed"])
        return cls(config, manifest["base_seed"], trajs, labels, seeds)


def _run_one(config):
    return run_simulation(config)


def run_ensemble(config, runs, base_seed, eps0=DEFAULT_EPS0, eps1=DEFAULT_EPS1,
                 tail=DEFAULT_TAIL, workers=None):
    """Simulate ``runs`` independent markets; run ``i`` uses ``derive_seed(base_seed, i)``.

    ``workers`` > 1 fans the runs out over processes; results are ordered by
    run index either way.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    base_seed = check_seed(base_seed)
    seeds = [derive_seed(base_seed, i) for i in range(runs)]
    configs = [config.replace(seed=s) for s in seeds]
    if workers is None:
        workers = min(runs, os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(_run_one, configs))
    else:
        trajs = [run_simulation(c) for c in configs]
    labels = [classify_terminal(t, eps0, eps1, tail) for t in trajs]
    return Ensemble(config, base_seed, trajs, labels, seeds)


def _closes(traj):
    return np.asarray(traj.close if isinstance(traj, Trajectory) else traj, dtype=float)


def classify_terminal(traj, eps0=DEFAULT_EPS0, eps1=DEFAULT_EPS1, tail=DEFAULT_TAIL):
    """Three-way label from the mean of the last ``tail`` closes."""
    x = _closes(traj)
    if tail > len(x) or tail < 1:
        raise ValueError(f"tail length {tail} not in [1, {len(x)}]")
    if not eps0 < eps1:
        raise ValueError("eps0 must be smaller than eps1")
    m = float(x[-tail:].mean())
    if abs(m) < eps0:
        return TerminalLabel(Label.REACHED_ZERO, m)
    if m > eps1:
        return TerminalLabel(Label.POSITIVE, m)
    return TerminalLabel(Label.UNDETERMINED, m)


def time_to_zero(traj, eps=0.0):
    """0-based index of the first close <= eps (index i is step i + 1), or None."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    hit = np.flatnonzero(_closes(traj) <= eps)
    return int(hit[0]) if hit.size else None


def time_to_zero_summary(times):
    x = np.asarray(times, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least two times")
    mean = x.mean()
    std = x.std(ddof=1)
    d = x - mean
    m2 = (d**2).mean()
    m3 = (d**3).mean()
    m4 = (d**4).mean()
    if m2 > 0 and n > 2:
        skew = np.sqrt(n * (n - 1)) / (n - 2) * m3 / m2**1.5
    else:
        skew = 0.0
    if m2 > 0 and n > 3:
        g2 = m4 / m2**2 - 3.0
        kurt = (n - 1) / ((n - 2) * (n - 3)) * ((n + 1) * g2 + 6.0)
    else:
        kurt = float("nan")
    q5, q25, q50, q75, q95 = np.percentile(x, [5, 25, 50, 75, 95])
    return {
        "n": int(n),
        "mean": float(mean),
        "median": float(q50),
        "min": float(x.min()),
        "max": float(x.max()),
        "std": float(std),
        "cv": float(std / mean) if mean != 0 else float("nan"),
        "skew": float(skew),
        "excess_kurtosis": float(kurt),
        "p5": float(q5),
        "p95": float(q95),
        "iqr": float(q75 - q25),
    }


def ensemble_moments(ens, group=None):
    """Per-step mean and (n-1)-denominator std of the closes in ``group``."""
    x = ens.closes(group)
    if x.shape[0] == 0:
        raise ValueError(f"no trajectories with label {group}")
    mean = x.mean(axis=0)
    std = x.std(axis=0, ddof=1) if x.shape[0] >= 2 else np.full(x.shape[1], np.nan)
    return mean, std
