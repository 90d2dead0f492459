"""Quasi-static planar insertion simulator.

The end effector holds the moving part through a spring (robot/wrist
compliance ``K_r``) and a damper ``K_r * lag``: with no contact it tracks the
position command through a first-order lag. Contact forces from the penalty
model push back through the same compliance, so a misaligned part slides
along chamfers instead of locking. Coulomb friction (friction-channel
variant) is resolved quasi-statically: the tangential drive is cancelled
while it stays inside the friction cone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .domain import ExperimentConfig, Pose, normalize_angle, TWO_PI
from .geometry import TaskGeometry, bundled_geometry, contacts, sum_contacts

TERMINAL_CAUSES = ("none", "goal", "force-violation", "timeout")


class Observation(NamedTuple):
    p_e: np.ndarray
    p_dot: np.ndarray
    f: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.p_e, self.p_dot, self.f])


@dataclass(frozen=True)
class FailSafeLimits:
    """Ordered safety checks: workspace clamp, step clamp, then force limit."""

    workspace_lo: np.ndarray
    workspace_hi: np.ndarray
    max_step: np.ndarray
    max_wrench: np.ndarray

    def __post_init__(self):
        for name in ("max_step", "max_wrench"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,) or np.any(v <= 0):
                raise ValueError(f"{name} must be three positive numbers")
            object.__setattr__(self, name, v)
        lo = np.asarray(self.workspace_lo, dtype=float)
        hi = np.asarray(self.workspace_hi, dtype=float)
        if np.any(hi <= lo):
            raise ValueError("workspace box must be nonempty")
        object.__setattr__(self, "workspace_lo", lo)
        object.__setattr__(self, "workspace_hi", hi)

    @classmethod
    def for_task(cls, geometry: TaskGeometry, config: ExperimentConfig,
                 max_step=(0.004, 0.004, 0.04)) -> "FailSafeLimits":
        ws = np.asarray(geometry.workspace, dtype=float)
        return cls(ws[:, 0], ws[:, 1], np.asarray(max_step, dtype=float),
                   np.asarray(config.f_max, dtype=float))


@dataclass
class EnvState:
    pose: np.ndarray
    twist: np.ndarray = field(default_factory=lambda: np.zeros(3))
    wrench: np.ndarray = field(default_factory=lambda: np.zeros(3))
    step: int = 0
    terminal: bool = False
    cause: str = "none"

    def copy(self) -> "EnvState":
        return EnvState(self.pose.copy(), self.twist.copy(), self.wrench.copy(), self.step,
                        self.terminal, self.cause)


def goal_reached(pose, geometry: TaskGeometry, tolerance) -> bool:
    """Position within ``tolerance[0]`` (Euclidean) and angle within
    ``tolerance[1]``; both bounds inclusive."""
    g = geometry.goal
    dpos = math.hypot(float(pose[0]) - g.x, float(pose[1]) - g.z)
    drot = abs(normalize_angle(float(pose[2]) - g.theta))
    return dpos <= tolerance[0] and drot <= tolerance[1]


class StepInfo(NamedTuple):
    max_inner_wrench: np.ndarray
    friction_active: bool
    clamped: bool


class PlanarInsertionEnv:
    """One insertion task instance; owns its state and random stream.

    Parameters
    ----------
    geometry : TaskGeometry or bundled geometry name
    config : ExperimentConfig
    compliance : translational / rotational robot stiffness (N/m, N*m/rad)
    lag : first-order tracking time constant of the robot (s)
    """

    def __init__(self, geometry, config: ExperimentConfig | None = None,
                 limits: FailSafeLimits | None = None, compliance=(2.0e4, 2.0e4, 10.0),
                 lag: float = 0.02, rng: np.random.Generator | None = None,
                 collisions: bool = True):
        if isinstance(geometry, str):
            geometry = bundled_geometry(geometry)
        self.geometry = geometry
        self.config = config or ExperimentConfig(env_variant=geometry.name
                                                 if geometry.name in ("l-insertion", "friction-channel")
                                                 else "l-insertion")
        self.limits = limits or FailSafeLimits.for_task(geometry, self.config)
        self.k_r = np.asarray(compliance, dtype=float)
        self.lag = float(lag)
        self.n_sub = self.config.n_substeps
        self.dt = 1.0 / self.config.inner_hz
        self.period = self.config.control_dt
        self.collisions = collisions
        self.rng = rng if rng is not None else np.random.Generator(np.random.PCG64(self.config.seed))
        self.reference = geometry.goal.as_array()
        self.state = EnvState(pose=geometry.start.as_array())
        self.last_info: StepInfo | None = None

    # ------------------------------------------------------------------
    def reset(self, rng: np.random.Generator | None = None, perturb: bool | None = None,
              start=None, max_tries: int = 100) -> EnvState:
        """Start a new episode at the nominal start, optionally perturbed."""
        self.state = reset(self.config, rng if rng is not None else self.rng, self.geometry,
                           perturb=perturb, start=start, max_tries=max_tries)
        self.reference = self.geometry.goal.as_array()
        return self.state

    def observe(self, reference=None) -> Observation:
        ref = self.reference if reference is None else np.asarray(reference, dtype=float)
        e = ref - self.state.pose
        e[2] = (e[2] + math.pi) % TWO_PI - math.pi
        return Observation(e, self.state.twist.copy(), self.state.wrench.copy())

    # ------------------------------------------------------------------
    def _inner(self, pose, vel, p_c):
        """One inner-rate integration step. Returns (pose, vel, wrench, friction_on)."""
        lim = self.limits
        p_c = np.minimum(np.maximum(p_c, lim.workspace_lo), lim.workspace_hi)
        step = p_c - pose
        step[2] = (step[2] + math.pi) % TWO_PI - math.pi
        np.clip(step, -lim.max_step, lim.max_step, out=step)

        k = self.k_r
        drive = k * step
        fx = fz = tq = 0.0
        friction_on = False
        if self.collisions:
            cs = contacts(self.geometry, pose, vel)
            if cs:
                fx, fz, tq = sum_contacts(cs, pose[0], pose[1])
                mu = self.geometry.friction
                if mu > 0.0:
                    dom = max(cs, key=lambda c: c.force)
                    budget = mu * sum(c.force for c in cs)
                    tx, tz = -dom.nz, dom.nx
                    dt_ = (drive[0] + fx) * tx + (drive[1] + fz) * tz
                    ff = -max(-budget, min(budget, dt_))
                    fx += ff * tx
                    fz += ff * tz
                    friction_on = budget > 0.0
        gen = drive + np.array([fx, fz, tq])
        new_vel = gen / (k * self.lag)
        new_pose = pose + self.dt * new_vel
        new_pose[2] = (new_pose[2] + math.pi) % TWO_PI - math.pi
        # sensor convention: what the part applies to the environment
        return new_pose, new_vel, np.array([-fx, -fz, -tq]), friction_on

    def step(self, command, reference=None) -> tuple[EnvState, Observation]:
        """Run one control period.

        ``command`` is either a pose held for the whole period or a callable
        ``command(k, pose, twist, wrench) -> p_c`` evaluated at every inner
        step (this is how the controller closes its loop at the inner rate).
        """
        st = self.state
        if st.terminal:
            raise RuntimeError("cannot step a terminal state; call reset() first")
        if reference is not None:
            self.reference = np.asarray(reference, dtype=float)
        if callable(command):
            get_cmd: Callable = command
        else:
            held = np.asarray(command, dtype=float).reshape(3)
            if not np.all(np.isfinite(held)):
                raise ValueError("commanded pose must be finite")
            get_cmd = lambda k, p, v, w: held  # noqa: E731

        pose = st.pose.copy()
        vel = st.twist.copy()
        wrench = st.wrench.copy()
        start = pose.copy()
        w_sum = np.zeros(3)
        w_peak = np.zeros(3)
        fric = False
        for k in range(self.n_sub):
            p_c = np.asarray(get_cmd(k, pose, vel, wrench), dtype=float)
            pose, vel, wrench, f_on = self._inner(pose, vel, p_c)
            w_sum += wrench
            np.maximum(w_peak, np.abs(wrench), out=w_peak)
            fric = fric or f_on

        mean_w = w_sum / self.n_sub
        if self.config.sensor_noise > 0:
            mean_w = mean_w + self.rng.normal(0.0, self.config.sensor_noise, 3)
        disp = pose - start
        disp[2] = (disp[2] + math.pi) % TWO_PI - math.pi
        new = EnvState(pose=pose, twist=disp / self.period, wrench=mean_w, step=st.step + 1)

        # reactive check after the proactive clamps inside _inner
        if np.any(np.abs(mean_w) > self.limits.max_wrench):
            new.terminal, new.cause = True, "force-violation"
        elif goal_reached(pose, self.geometry, self.config.goal_tolerance):
            new.terminal, new.cause = True, "goal"
        elif new.step >= self.config.episode_cap:
            new.terminal, new.cause = True, "timeout"
        self.state = new
        self.last_info = StepInfo(w_peak, fric, False)
        return new, self.observe()


def env_step(env: PlanarInsertionEnv, state: EnvState, p_c, limits: FailSafeLimits | None = None):
    """Functional form: step ``env`` from ``state`` with a held command."""
    env.state = state.copy()
    if limits is not None:
        env.limits = limits
    return env.step(p_c)


def reset(config: ExperimentConfig, rng: np.random.Generator, geometry: TaskGeometry | None = None,
          perturb: bool | None = None, start=None, max_tries: int = 100) -> EnvState:
    """Sample a collision-free start state."""
    if geometry is None:
        geometry = bundled_geometry(config.env_variant)
    nominal = geometry.start.as_array() if start is None else np.asarray(start, dtype=float)
    if perturb is None:
        perturb = config.perturb_start
    if not perturb:
        return EnvState(pose=nominal.copy())
    half = np.asarray(config.perturbation, dtype=float)
    for _ in range(max_tries):
        pose = nominal + rng.uniform(-half, half)
        pose[2] = normalize_angle(pose[2])
        if not contacts(geometry, pose):
            return EnvState(pose=pose)
    raise RuntimeError(f"no collision-free start found in {max_tries} tries")


def make_env(config: ExperimentConfig, rng=None, **kwargs) -> PlanarInsertionEnv:
    return PlanarInsertionEnv(bundled_geometry(config.env_variant), config, rng=rng, **kwargs)


__all__ = ["Observation", "FailSafeLimits", "EnvState", "PlanarInsertionEnv", "env_step", "reset",
           "goal_reached", "make_env", "Pose", "TERMINAL_CAUSES"]
