"""Independent reference implementations shared by the unit and acceptance tests."""
from __future__ import annotations

import numpy as np

from combilearn.controller import ParallelController, make_gains
from combilearn.domain import ExperimentConfig
from combilearn.env import PlanarInsertionEnv


def enumerate_triplets(poses, w_s, w_m, skip_first=False):
    """Reference enumeration straight from the double loop.

    The trajectory is ``p^0 .. p^T``; for each start ``t`` and window ``w``
    that stays inside it, emit ``(p^t, p^{t+min(w, W_m)}, p^{t+w})``.
    """
    T = len(poses) - 1
    out = []
    for t in range(1 if skip_first else 0, T):
        for w in range(1, w_s + 1):
            if t + w <= T:
                out.append((tuple(poses[t]), tuple(poses[t + min(w, w_m)]), tuple(poses[t + w])))
    return out


def numeric_grad_check(net, x, rng, n_coords=40, eps=1e-6):
    """Worst relative gap between analytic and central-difference gradients.

    The scalar probed is ``sum(R * f(x))`` for a fixed random ``R``; a few
    coordinates of every parameter array and of the input are checked.
    """
    out, cache = net.forward(x)
    R = rng.normal(size=out.shape)
    grads, gx = net.backward(cache, R)

    def loss():
        return float(np.sum(R * net.forward(x)[0]))

    def central(arr, idx):
        old = arr[idx]
        arr[idx] = old + eps
        up = loss()
        arr[idx] = old - eps
        down = loss()
        arr[idx] = old
        return (up - down) / (2 * eps)

    def rel(num, ana):
        return abs(num - ana) / max(1e-6, abs(num) + abs(ana))

    worst = 0.0
    for pi, p in enumerate(net.params):
        for _ in range(max(1, n_coords // len(net.params))):
            idx = tuple(rng.integers(0, s) for s in p.shape)
            worst = max(worst, rel(central(p, idx), grads[pi][idx]))
    for _ in range(5):
        idx = (rng.integers(0, x.shape[0]), rng.integers(0, x.shape[1]))
        worst = max(worst, rel(central(x, idx), gx[idx]))
    return worst


def step_response(kp, target_offset, seconds=12.0):
    """Free-space (contact disabled) closed-loop response with s = 1.

    Returns the per-axis fraction of the commanded offset covered after
    each control step.
    """
    cfg = ExperimentConfig()
    env = PlanarInsertionEnv("l-insertion", cfg, collisions=False)
    start = np.array([0.0, 0.05, 0.0])
    env.reset(perturb=False, start=start)
    target = start + target_offset
    ctl = ParallelController()
    g = make_gains(kp, 0.5, 1.0)
    zero = np.zeros(3)
    poses = []
    for _ in range(int(seconds * cfg.control_hz)):
        st, _ = env.step(lambda _k, p, _v, w: p + ctl.step(g, target - p, -w, zero, env.dt),
                         reference=target)
        poses.append(st.pose.copy())
        if st.terminal:
            break
    return (np.array(poses) - start) / target_offset
