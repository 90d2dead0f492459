"""Completion score, smoothing and trial aggregation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .domain import normalize_angle


@dataclass(frozen=True)
class ScoreParams:
    lambda_pos: float = 20.0  # per meter
    lambda_rot: float = 3.0  # per radian
    threshold: float = 0.9

    def __post_init__(self):
        if self.lambda_pos < 0 or self.lambda_rot < 0:
            raise ValueError("score weights must be non-negative")
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold must lie in (0, 1]")


def score(e_pos: float, e_rot: float, params: ScoreParams = ScoreParams()) -> float:
    """``1 - lambda_pos * e_pos - lambda_rot * e_rot``; not clamped."""
    if e_pos < 0 or e_rot < 0:
        raise ValueError("errors must be non-negative")
    return 1.0 - params.lambda_pos * e_pos - params.lambda_rot * e_rot


def pose_errors(pose, goal) -> tuple[float, float]:
    """Euclidean position error (m) and absolute angle error (rad)."""
    return (math.hypot(float(pose[0]) - float(goal[0]), float(pose[1]) - float(goal[1])),
            abs(normalize_angle(float(pose[2]) - float(goal[2]))))


def ema(series, beta: float) -> np.ndarray:
    if not 0 <= beta < 1:
        raise ValueError("beta must lie in [0, 1)")
    x = np.asarray(series, dtype=float)
    out = np.empty_like(x)
    if len(x) == 0:
        return out
    s = x[0]
    for i, v in enumerate(x):
        s = beta * s + (1.0 - beta) * v if i else v
        out[i] = s
    return out


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    seed: int
    C: float
    steps: int
    cap: int = 500
    group: str = ""

    def success(self, threshold: float) -> bool:
        return self.C > threshold and self.steps <= self.cap


@dataclass(frozen=True)
class TrialSummary:
    n: int
    mean_C: float
    success_rate: float
    mean_steps: float


def aggregate_trials(records: Iterable[TrialRecord], params: ScoreParams = ScoreParams()) -> TrialSummary:
    recs = list(records)
    if not recs:
        raise ValueError("need at least one trial record")
    # fsum keeps the result independent of record order
    n = len(recs)
    return TrialSummary(n=n,
                        mean_C=math.fsum(r.C for r in recs) / n,
                        success_rate=sum(r.success(params.threshold) for r in recs) / n,
                        mean_steps=math.fsum(r.steps for r in recs) / n)


# ---------------------------------------------------------------------------
# text tables

CURVE_HEADER = ["step", "reward_raw", "reward_ema"]
TRIAL_HEADER = ["trial", "seed", "C", "success", "steps"]


def write_curve(path, steps, rewards, beta: float = 0.99) -> None:
    smooth = ema(rewards, beta)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        for s, r, e in zip(steps, rewards, smooth):
            w.writerow([int(s), repr(float(r)), repr(float(e))])


def write_trials(path, records, params: ScoreParams = ScoreParams(), group_column: bool = False):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((["group"] if group_column else []) + TRIAL_HEADER)
        for r in records:
            row = [r.trial, r.seed, repr(float(r.C)), int(r.success(params.threshold)), r.steps]
            w.writerow(([r.group] if group_column else []) + row)


def read_table(path, required=()) -> dict:
    """Read a CSV table into columns; raises naming any missing column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty table") from None
        rows = [r for r in reader if r]
    missing = [c for c in required if c not in header]
    if missing:
        raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
    cols = {h: [] for h in header}
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(r)}")
        for h, v in zip(header, r):
            cols[h].append(v)
    return cols
