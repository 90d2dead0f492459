"""Parallel position/force controller with self-tuned gains.

A PD law on the pose error and a PI law on the force error are blended per
axis by the selection vector ``s`` and drive a unit virtual mass (admittance
form). The resulting velocity is turned into a position command one robot
lag ahead of the current pose, so the tracking robot reproduces it. With
``kd = 2*sqrt(kp)`` the free-space position loop is critically damped.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

KD_FACTOR = 2.0
KI_RATIO = 0.01


@dataclass(frozen=True)
class ControllerGains:
    kp_p: np.ndarray
    kd_p: np.ndarray
    kp_f: np.ndarray
    ki_f: np.ndarray
    s: np.ndarray

    def __repr__(self) -> str:
        f = lambda a: np.array2string(a, precision=4)  # noqa: E731
        return (f"ControllerGains(kp_p={f(self.kp_p)}, kp_f={f(self.kp_f)}, "
                f"s={f(self.s)})")


def _axes(v, name) -> np.ndarray:
    a = np.broadcast_to(np.asarray(v, dtype=float), (3,)).copy()
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


def make_gains(kp_p, kp_f, s, kp_p_bounds=None, kp_f_bounds=None) -> ControllerGains:
    """Build gains; the derivative and integral gains are always derived.

    Scalars broadcast to all three axes. Bounds, when given, are inclusive
    ``(lo, hi)`` pairs and out-of-range values raise ``ValueError``.
    """
    kp_p = _axes(kp_p, "kp_p")
    kp_f = _axes(kp_f, "kp_f")
    s = _axes(s, "s")
    if np.any(kp_p <= 0):
        raise ValueError("kp_p must be positive")
    if np.any(kp_f < 0):
        raise ValueError("kp_f must be non-negative")
    if np.any((s < 0) | (s > 1)):
        raise ValueError("selection values must lie in [0, 1]")
    for arr, bounds, name in ((kp_p, kp_p_bounds, "kp_p"), (kp_f, kp_f_bounds, "kp_f")):
        if bounds is not None:
            lo, hi = bounds
            # allow a couple of ulps for values produced by affine maps
            tol = 1e-12 * max(abs(lo), abs(hi))
            if np.any(arr < lo - tol) or np.any(arr > hi + tol):
                raise ValueError(f"{name} outside bounds {bounds}: {arr}")
    return ControllerGains(kp_p=kp_p, kd_p=KD_FACTOR * np.sqrt(kp_p), kp_f=kp_f,
                           ki_f=KI_RATIO * kp_f, s=s)


@dataclass(frozen=True)
class ControllerState:
    integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    prev_error: np.ndarray = field(default_factory=lambda: np.zeros(3))
    prev_force_error: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    primed: bool = False
    # last branch outputs, kept for logging and inspection
    position_branch: np.ndarray = field(default_factory=lambda: np.zeros(3))
    force_branch: np.ndarray = field(default_factory=lambda: np.zeros(3))


def reset_controller() -> ControllerState:
    return ControllerState()


@dataclass(frozen=True)
class ControllerLimits:
    """Plant-side constants the controller needs.

    lookahead: robot tracking lag (s); the command leads the pose by
        ``lookahead * velocity``.
    period: policy period (s) over which an ``a_p`` increment is spread.
    windup: clamp on the force-error integral (N*s) per axis.
    max_speed: clamp on the virtual velocity per axis.
    """

    lookahead: float = 0.02
    period: float = 0.05
    windup: float = 10.0
    max_speed: tuple = (0.2, 0.2, 2.0)


def control_step(state: ControllerState, gains: ControllerGains, p_e, f_e, a_p, dt: float,
                 limits: ControllerLimits = ControllerLimits()):
    """Advance the controller one inner period.

    Returns ``(new_state, offset)`` where the position command is
    ``p_c = p + offset``. The first call after a reset uses a zero
    derivative so a step in the reference does not kick the PD branch.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    p_e = np.asarray(p_e, dtype=float)
    f_e = np.asarray(f_e, dtype=float)
    a_p = np.asarray(a_p, dtype=float)
    if not (np.all(np.isfinite(p_e)) and np.all(np.isfinite(f_e)) and np.all(np.isfinite(a_p))):
        raise ValueError("controller inputs must be finite")

    if state.primed:
        d_err = (p_e - state.prev_error) / dt
        prev_f = state.prev_force_error
    else:
        d_err = np.zeros(3)
        prev_f = f_e
    integral = state.integral + 0.5 * (f_e + prev_f) * dt
    np.clip(integral, -limits.windup, limits.windup, out=integral)

    pos_branch = gains.kp_p * p_e + gains.kd_p * d_err
    force_branch = gains.kp_f * f_e + gains.ki_f * integral
    accel = gains.s * pos_branch + (1.0 - gains.s) * force_branch

    vmax = np.asarray(limits.max_speed, dtype=float)
    velocity = np.clip(state.velocity + accel * dt, -vmax, vmax)
    offset = limits.lookahead * (velocity + a_p / limits.period)

    new_state = ControllerState(integral=integral, prev_error=p_e.copy(),
                                prev_force_error=f_e.copy(), velocity=velocity, primed=True,
                                position_branch=pos_branch, force_branch=force_branch)
    return new_state, offset


def shift_reference(state: ControllerState, delta) -> ControllerState:
    """Bumpless retarget: move the stored error by the reference change.

    Without this a sub-goal switch enters the derivative term as a step and
    kicks the virtual velocity by ``kd * delta``.
    """
    return replace(state, prev_error=state.prev_error + np.asarray(delta, dtype=float))


class ParallelController:
    """Stateful convenience wrapper used by the rollout loop."""

    def __init__(self, limits: ControllerLimits = ControllerLimits()):
        self.limits = limits
        self.state = reset_controller()

    def reset(self) -> None:
        self.state = reset_controller()

    def retarget(self, delta) -> None:
        self.state = shift_reference(self.state, delta)

    def step(self, gains, p_e, f_e, a_p, dt) -> np.ndarray:
        self.state, offset = control_step(self.state, gains, p_e, f_e, a_p, dt, self.limits)
        return offset


def critical_damping_ok(gains: ControllerGains) -> bool:
    return bool(np.allclose(gains.kd_p ** 2, 4.0 * gains.kp_p, rtol=1e-12)
                and np.allclose(gains.ki_f * 100.0, gains.kp_f, rtol=1e-12))
