"""Shared planar value types, configuration and seeding.

Poses live in the (x, z) plane with the angle ``theta`` measured
counterclockwise about the out-of-plane axis. Angles are wrapped into the
half-open interval [-pi, pi).
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap ``theta`` into [-pi, pi). ``3*pi`` maps to ``-pi``."""
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    wrapped = math.fmod(theta + math.pi, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    wrapped -= math.pi
    # fmod can land exactly on +pi after the shift for tiny negative inputs
    if wrapped >= math.pi:
        wrapped -= TWO_PI
    return wrapped


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorised :func:`normalize_angle`."""
    return np.mod(np.asarray(theta, dtype=float) + math.pi, TWO_PI) - math.pi


def _check_finite(name: str, values) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{name} fields must be finite, got {tuple(values)}")


class Pose(NamedTuple):
    """Planar pose in meters / radians."""

    x: float = 0.0
    z: float = 0.0
    theta: float = 0.0

    @classmethod
    def make(cls, x: float, z: float, theta: float) -> "Pose":
        _check_finite("Pose", (x, z, theta))
        return cls(float(x), float(z), normalize_angle(theta))

    @classmethod
    def from_array(cls, a) -> "Pose":
        a = np.asarray(a, dtype=float).reshape(3)
        return cls.make(a[0], a[1], a[2])

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


class Twist(NamedTuple):
    vx: float = 0.0
    vz: float = 0.0
    omega: float = 0.0

    @classmethod
    def from_array(cls, a) -> "Twist":
        a = np.asarray(a, dtype=float).reshape(3)
        _check_finite("Twist", a)
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


class Wrench(NamedTuple):
    fx: float = 0.0
    fz: float = 0.0
    tau: float = 0.0

    @classmethod
    def from_array(cls, a) -> "Wrench":
        a = np.asarray(a, dtype=float).reshape(3)
        _check_finite("Wrench", a)
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


def pose_delta(a, b) -> Pose:
    """Return ``b - a`` with the shortest angular difference."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("pose_delta needs finite poses")
    return Pose(float(b[0] - a[0]), float(b[1] - a[1]), normalize_angle(b[2] - a[2]))


def pose_error_array(target: np.ndarray, current: np.ndarray) -> np.ndarray:
    """Array form of ``pose_delta(current, target)``; hot-path helper."""
    e = target - current
    e[2] = (e[2] + math.pi) % TWO_PI - math.pi
    return e


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled pose sequence, shape ``(length, 3)``."""

    dt: float
    poses: np.ndarray

    def __post_init__(self):
        poses = np.asarray(self.poses, dtype=float)
        if poses.ndim != 2 or poses.shape[1] != 3:
            raise ValueError(f"poses must have shape (T, 3), got {poses.shape}")
        if len(poses) < 2:
            raise ValueError("a trajectory needs at least two poses")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(poses)):
            raise ValueError("trajectory poses must be finite")
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.poses)


# --------------------------------------------------------------------------
# RNG

def seeded_rng(seed: int) -> np.random.Generator:
    """Return a PCG64-backed generator.

    PCG64 streams are stable across numpy versions and platforms for a given
    seed, and ``rng.bit_generator.state`` round-trips through JSON.
    """
    return np.random.Generator(np.random.PCG64(int(seed)))


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def rng_from_state(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent child generators derived from one root seed."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


# --------------------------------------------------------------------------
# Configuration

@dataclass
class RewardConfig:
    w1: float = 1.0
    w2: float = 2.0
    gamma_success: float = 100.0
    gamma_force: float = -50.0
    alpha: float = 1e-5


@dataclass
class SacConfig:
    hidden: list = field(default_factory=lambda: [64, 64])
    discount: float = 0.95
    polyak: float = 0.005
    batch_size: int = 256
    buffer_size: int = 100_000
    warmup_steps: int = 1000
    updates_per_step: int = 1
    lr: float = 3e-4
    init_temperature: float = 0.1


@dataclass
class ImitationConfig:
    hidden: list = field(default_factory=lambda: [256, 256, 256])
    dropout: float = 0.1
    batch_size: int = 256
    lr: float = 1e-3
    lr_decay: float = 0.5
    lr_decay_steps: int = 20_000
    lr_floor: float = 1e-5
    max_epochs: int = 40
    patience: int = 6
    max_steps: int = 12_000
    val_threshold: float = 1e-3


@dataclass
class ExperimentConfig:
    """Every knob of a run. Serialised as JSON; unknown keys are rejected."""

    seed: int = 0
    env_variant: str = "l-insertion"
    action_variant: str = "PL-8"
    reward: RewardConfig = field(default_factory=RewardConfig)
    p_max: list = field(default_factory=lambda: [0.02, 0.02, 0.2])
    f_max: list = field(default_factory=lambda: [20.0, 20.0, 1.0])
    # None selects the variant default (zero, or 10 N along -z for the channel)
    f_g: list | None = None
    episode_cap: int = 500
    control_hz: float = 20.0
    inner_hz: float = 500.0
    subgoal_period: int = 50
    ws_frac: float = 0.85
    wm_frac: float = 0.30
    kp_p_bounds: list = field(default_factory=lambda: [5.0, 300.0])
    kp_f_bounds: list = field(default_factory=lambda: [0.01, 1.0])
    anti_windup: float = 10.0
    max_action_step: list = field(default_factory=lambda: [0.003, 0.003, 0.03])
    goal_tolerance: list = field(default_factory=lambda: [0.001, math.radians(1.0)])
    perturbation: list = field(default_factory=lambda: [0.010, 0.010, math.radians(6.0)])
    perturb_start: bool = True
    sensor_noise: float = 0.0
    demo_count: int = 10
    demo_split: list = field(default_factory=lambda: [8, 2])
    pl_source: str = "goal"
    imitation: ImitationConfig = field(default_factory=ImitationConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    score_lambda: list = field(default_factory=lambda: [20.0, 3.0])
    success_threshold: float = 0.9
    ema_beta: float = 0.99

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.episode_cap <= 0:
            raise ValueError("episode_cap must be positive")
        if self.control_hz <= 0 or self.inner_hz <= 0:
            raise ValueError("control frequencies must be positive")
        if self.inner_hz < self.control_hz:
            raise ValueError("inner_hz must be at least control_hz")
        if not 0 < self.wm_frac <= self.ws_frac <= 1:
            raise ValueError("need 0 < wm_frac <= ws_frac <= 1")
        if self.subgoal_period < 1:
            raise ValueError("subgoal_period must be >= 1")
        for name in ("kp_p_bounds", "kp_f_bounds"):
            lo, hi = getattr(self, name)
            if not (0 < lo < hi):
                raise ValueError(f"{name} must satisfy 0 < lo < hi, got {lo, hi}")
        for name in ("p_max", "f_max", "max_action_step", "perturbation"):
            v = getattr(self, name)
            if len(v) != 3 or min(v) <= 0:
                raise ValueError(f"{name} must be three positive numbers")
        if self.f_g is not None and len(self.f_g) != 3:
            raise ValueError("f_g must have three entries")
        if self.pl_source not in ("goal", "recorded"):
            raise ValueError("pl_source must be 'goal' or 'recorded'")
        if self.env_variant not in ("l-insertion", "friction-channel"):
            raise ValueError(f"unknown env variant {self.env_variant!r}")

    @property
    def n_substeps(self) -> int:
        return int(round(self.inner_hz / self.control_hz))

    @property
    def control_dt(self) -> float:
        return 1.0 / self.control_hz

    def reference_wrench(self) -> np.ndarray:
        if self.f_g is not None:
            return np.asarray(self.f_g, dtype=float)
        if self.env_variant == "friction-channel":
            return np.array([0.0, -10.0, 0.0])
        return np.zeros(3)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _build(cls, data, "config")

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ValueError(f"{where}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ValueError(f"{where}: unknown keys {unknown}")
    kwargs: dict[str, Any] = {}
    for name, value in data.items():
        sub = _NESTED.get(name)
        kwargs[name] = _build(sub, value, f"{where}.{name}") if sub else value
    return cls(**kwargs)


_NESTED = {"reward": RewardConfig, "imitation": ImitationConfig, "sac": SacConfig}
