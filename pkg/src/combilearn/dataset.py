"""Demonstrations and the data relabeling used to train the skill policy.

Relabeling turns each trajectory ``p^0 .. p^T`` into triplets
``(p^t, p^{t+min(w, W_m)}, p^{t+w})`` for every start ``t`` and window
``w <= W_s`` that stays inside the trajectory: the last element is used as a
goal, the middle one as the sub-goal label.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .domain import Trajectory, normalize_angle
from .geometry import TaskGeometry, penetrates

TRIPLET_HEADER = ["traj_id", "px", "pz", "ptheta", "lx", "lz", "ltheta", "hx", "hz", "htheta"]


# ---------------------------------------------------------------------------
# window sizes and relabeling

def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


def window_sizes(length: int, ws_frac: float, wm_frac: float) -> tuple[int, int]:
    """Skill and motion windows in steps for a trajectory of ``length`` poses."""
    if not (0 < wm_frac <= ws_frac <= 1):
        raise ValueError("need 0 < wm_frac <= ws_frac <= 1")
    n = int(length) - 1
    return max(1, _round_half_up(ws_frac * n)), max(1, _round_half_up(wm_frac * n))


def _as_poses(traj) -> np.ndarray:
    return traj.poses if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)


def relabel_indices(length: int, w_s: int, w_m: int, first: int = 0):
    """Index triples ``(t, t + min(w, w_m), t + w)`` in loop order."""
    if w_s < 1 or w_m < 1:
        raise ValueError("window sizes must be >= 1")
    if w_m > w_s:
        raise ValueError(f"W_m ({w_m}) must not exceed W_s ({w_s})")
    last = length - 1
    if last < 1:
        return np.zeros((0,), int), np.zeros((0,), int), np.zeros((0,), int)
    t = np.arange(first, last)
    counts = np.minimum(w_s, last - t)
    t_rep = np.repeat(t, counts)
    # w runs 1..counts[i] within each block
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts) + 1
    return t_rep, t_rep + np.minimum(offsets, w_m), t_rep + offsets


def relabel_hierarchical(traj, w_s: int, w_m: int, first: int = 0):
    """Hierarchical relabeling of one trajectory.

    Returns ``(p, p_l, p_h)`` arrays of shape ``(n, 3)``. ``first=1`` skips
    the initial pose, the other reading of the loop bounds.
    """
    poses = _as_poses(traj)
    t, l, h = relabel_indices(len(poses), w_s, w_m, first)
    return poses[t], poses[l], poses[h]


def relabel_flat(traj, w_s: int, first: int = 0):
    """Flat relabeling: the sub-goal label is the goal itself."""
    if w_s < 1:
        raise ValueError("W_s must be >= 1")
    return relabel_hierarchical(traj, w_s, w_s, first)


def pairs_bc(traj):
    """Consecutive ``(p^t, p^{t+1})`` pairs for behaviour cloning."""
    poses = _as_poses(traj)
    if len(poses) < 2:
        raise ValueError("need at least two poses")
    return poses[:-1], poses[1:]


class GoalRelabeler(BaseEstimator, TransformerMixin):
    """Turn a list of trajectories into a supervised skill-level dataset.

    ``transform`` returns ``(X, y, groups)`` with ``X = [p, p_h]`` (width 6),
    ``y = p_l`` and ``groups`` the source trajectory index of each row.

    Parameters
    ----------
    ws_frac, wm_frac : window fractions of each trajectory's length.
    mode : "hierarchical", "flat" (sub-goal = goal) or "next" (sub-goal =
        the next pose, i.e. goal-conditioned behaviour cloning).
    """

    def __init__(self, ws_frac=0.85, wm_frac=0.30, mode="hierarchical", first=0):
        self.ws_frac = ws_frac
        self.wm_frac = wm_frac
        self.mode = mode
        self.first = first

    def fit(self, trajectories, y=None):
        if self.mode not in ("hierarchical", "flat", "next"):
            raise ValueError(f"unknown relabel mode {self.mode!r}")
        window_sizes(2, self.ws_frac, self.wm_frac)
        self.n_trajectories_ = len(trajectories)
        return self

    def transform(self, trajectories):
        Xs, ys, gs = [], [], []
        for i, traj in enumerate(trajectories):
            poses = _as_poses(traj)
            w_s, w_m = window_sizes(len(poses), self.ws_frac, self.wm_frac)
            if self.mode == "flat":
                w_m = w_s
            elif self.mode == "next":
                w_m = 1
            p, pl, ph = relabel_hierarchical(poses, w_s, w_m, self.first)
            Xs.append(np.hstack([p, ph]))
            ys.append(pl)
            gs.append(np.full(len(p), i))
        if not Xs:
            return np.zeros((0, 6)), np.zeros((0, 3)), np.zeros(0, int)
        return np.vstack(Xs), np.vstack(ys), np.concatenate(gs)


class PairBuilder(BaseEstimator, TransformerMixin):
    """``(X, y, groups)`` of consecutive pose pairs; no goal column."""

    def fit(self, trajectories, y=None):
        return self

    def transform(self, trajectories):
        Xs, ys, gs = [], [], []
        for i, traj in enumerate(trajectories):
            a, b = pairs_bc(traj)
            Xs.append(a)
            ys.append(b)
            gs.append(np.full(len(a), i))
        return np.vstack(Xs), np.vstack(ys), np.concatenate(gs)


# ---------------------------------------------------------------------------
# demonstrations

@dataclass
class NoiseProfile:
    """Knobs for the synthetic demonstrator."""

    start_spread: tuple = (0.003, 0.003, math.radians(2.0))
    jitter: tuple = (0.0008, 0.0008, 0.008)  # amplitude during the approach
    inside_scale: float = 0.1  # jitter scale once parts engage
    speed_range: tuple = (0.8, 1.2)
    fluctuation_prob: float = 0.5
    fluctuation: tuple = (0.004, 0.003, 0.08)

    @classmethod
    def none(cls) -> "NoiseProfile":
        return cls(start_spread=(0.0, 0.0, 0.0), jitter=(0.0, 0.0, 0.0), speed_range=(1.0, 1.0),
                   fluctuation_prob=0.0)


def _waypoints(geometry: TaskGeometry, start: np.ndarray) -> list[np.ndarray]:
    """Scripted approach -> align -> insert path for the bundled tasks."""
    goal = geometry.goal.as_array()
    if geometry.name == "l-insertion":
        above = np.array([0.0, 0.036, 0.0])
        bottom = np.array([0.0, goal[1], goal[2]])
        return [start, above, bottom, goal]
    above = np.array([goal[0], 0.034, goal[2]])
    return [start, above, goal]


def _min_jerk(n: int) -> np.ndarray:
    s = np.linspace(0.0, 1.0, n + 1)[1:]
    return 10 * s ** 3 - 15 * s ** 4 + 6 * s ** 5


def _smooth_noise(rng, n: int, amp) -> np.ndarray:
    """Band-limited noise: a few random sinusoids per axis, unit peak."""
    t = np.linspace(0.0, 1.0, n)
    out = np.zeros((n, 3))
    for axis in range(3):
        for k in range(1, 4):
            out[:, axis] += rng.normal() / k * np.sin(2 * np.pi * (k * t + rng.uniform()))
        peak = np.max(np.abs(out[:, axis])) or 1.0
        out[:, axis] *= amp[axis] / peak
    return out


def generate_demo(geometry: TaskGeometry, rng: np.random.Generator, noise: NoiseProfile | None = None,
                  dt: float = 0.05, speed=(0.008, 0.15), max_tries: int = 50) -> Trajectory:
    """Synthesise one demonstration ending exactly at the goal pose.

    A candidate whose rigid penetration exceeds the clearance is rejected and
    redrawn.
    """
    noise = noise or NoiseProfile()
    for _ in range(max_tries):
        start = geometry.start.as_array() + rng.uniform(-1, 1, 3) * np.asarray(noise.start_spread)
        wps = _waypoints(geometry, start)
        if rng.uniform() < noise.fluctuation_prob:
            # an awkward re-grasp: overshoot the alignment then correct
            sign = rng.choice([-1.0, 1.0])
            detour = wps[1] + sign * np.asarray(noise.fluctuation) * rng.uniform(0.5, 1.0, 3)
            detour[1] = max(detour[1], wps[1][1])
            wps = [wps[0], detour] + wps[1:]
        scale = rng.uniform(*noise.speed_range)
        segments = []
        for a, b in zip(wps[:-1], wps[1:]):
            dist = np.hypot(b[0] - a[0], b[1] - a[1])
            dur = max(dist / (speed[0] * scale), abs(b[2] - a[2]) / (speed[1] * scale), 0.5)
            n = max(2, int(round(dur / dt)))
            s = _min_jerk(n)[:, None]
            segments.append(a + s * (b - a))
        engaged = len(segments) - (2 if geometry.name == "l-insertion" else 1)
        poses = [wps[0][None, :]]
        scales = [np.ones(1)]
        for i, seg in enumerate(segments):
            poses.append(seg)
            scales.append(np.full(len(seg), 1.0 if i < engaged else noise.inside_scale))
        poses = np.vstack(poses)
        scale_v = np.concatenate(scales)
        # taper jitter out so the final pose is exact
        taper = np.clip((len(poses) - 1 - np.arange(len(poses))) / 10.0, 0.0, 1.0)
        jitter = _smooth_noise(rng, len(poses), noise.jitter) * (scale_v * taper)[:, None]
        jitter[0] = 0.0
        poses = poses + jitter
        poses[:, 2] = [normalize_angle(a) for a in poses[:, 2]]
        if any(penetrates(geometry, p, tolerance=geometry.clearance) for p in poses):
            continue
        return Trajectory(dt=dt, poses=poses)
    raise RuntimeError("could not generate a collision-free demonstration; reduce the noise")


@dataclass
class DemoSet:
    trajectories: list
    split: list = field(default_factory=list)  # "train" / "validation" per trajectory

    def __post_init__(self):
        if not self.split:
            self.split = ["train"] * len(self.trajectories)
        if len(self.split) != len(self.trajectories):
            raise ValueError("one split label per trajectory")
        if set(self.split) - {"train", "validation"}:
            raise ValueError("split labels must be 'train' or 'validation'")

    @property
    def train(self) -> list:
        return [t for t, s in zip(self.trajectories, self.split) if s == "train"]

    @property
    def validation(self) -> list:
        return [t for t, s in zip(self.trajectories, self.split) if s == "validation"]

    def save(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for i, traj in enumerate(self.trajectories):
            p = directory / f"demo_{i:03d}.csv"
            save_trajectory(traj, p)
            paths.append(p)
        manifest = {"files": [p.name for p in paths], "split": self.split}
        (directory / "split.json").write_text(json.dumps(manifest, indent=1) + "\n")
        return paths

    @classmethod
    def load(cls, directory) -> "DemoSet":
        directory = Path(directory)
        manifest_path = directory / "split.json"
        if not manifest_path.exists():
            raise FileNotFoundError(f"no split.json in {directory}")
        manifest = json.loads(manifest_path.read_text())
        trajs = [load_trajectory(directory / f) for f in manifest["files"]]
        return cls(trajs, manifest["split"])


def generate_demoset(geometry: TaskGeometry, rng: np.random.Generator, count: int = 10,
                     n_train: int = 8, noise: NoiseProfile | None = None) -> DemoSet:
    if not 0 < n_train <= count:
        raise ValueError("need 0 < n_train <= count")
    trajs = [generate_demo(geometry, rng, noise) for _ in range(count)]
    split = ["train"] * n_train + ["validation"] * (count - n_train)
    return DemoSet(trajs, split)


# ---------------------------------------------------------------------------
# text tables

def save_trajectory(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# dt={traj.dt!r}\n")
        w = csv.writer(fh)
        w.writerow(["t", "x", "z", "theta"])
        for i, (x, z, th) in enumerate(traj.poses):
            w.writerow([i, repr(float(x)), repr(float(z)), repr(float(th))])


def load_trajectory(path) -> Trajectory:
    with open(path) as fh:
        meta = fh.readline().strip()
        if not meta.startswith("# dt="):
            raise ValueError(f"{path}: missing '# dt=' metadata line")
        dt = float(meta[len("# dt="):])
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["t", "x", "z", "theta"]:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [[float(v) for v in row[1:]] for row in reader if row]
    return Trajectory(dt=dt, poses=np.array(rows))


def save_triplets(path, p, pl, ph, traj_ids) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRIPLET_HEADER)
        for tid, a, b, c in zip(traj_ids, p, pl, ph):
            w.writerow([int(tid)] + [repr(float(v)) for v in (*a, *b, *c)])


def load_triplets(path):
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRIPLET_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [row for row in reader if row]
    ids = np.array([int(r[0]) for r in rows], dtype=int)
    vals = np.array([[float(v) for v in r[1:]] for r in rows]).reshape(-1, 9)
    return vals[:, 0:3], vals[:, 3:6], vals[:, 6:9], ids
