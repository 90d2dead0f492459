"""Skill-level imitation: the sub-goal policy, its baselines and the scheduler.

Three policy kinds share one regressor:

``hgcil``      ``(p, p_h) -> p_l`` trained on hierarchically relabeled triplets
               and queried every ``n`` control steps.
``gcbc-flat``  goal-conditioned cloning, ``(p, p_h) -> next pose``, trained on
               relabeled goals and queried every step.
``bc``         ``p -> next pose`` from consecutive pairs, queried every step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import GoalRelabeler, PairBuilder
from .domain import ImitationConfig, normalize_angle
from .env import PlanarInsertionEnv
from .metrics import ScoreParams, pose_errors, score
from .net import MLP, AdamState, MlpSpec, Normalizer, adam_step, load_checkpoint, save_checkpoint

POLICY_KINDS = ("hgcil", "gcbc-flat", "bc")


class TrainingDiverged(FloatingPointError):
    pass


class SkillPolicy(RegressorMixin, BaseEstimator):
    """MLP regressor with input standardisation and early stopping.

    ``fit(X, y, X_val=None, y_val=None)`` minimises the mean squared error
    over shuffled mini-batches. Internally the network regresses the
    standardised offset ``y - p`` (``p`` = first three input columns), which
    keeps millimetre detail near the goal resolvable; :meth:`predict` adds the
    offset back, so outputs are raw poses, optionally clamped to
    ``workspace`` (a ``(3, 2)`` box).
    """

    def __init__(self, kind="hgcil", hidden=(256, 256, 256), dropout=0.1, batch_size=256,
                 lr=1e-3, lr_decay=0.5, lr_decay_steps=20_000, lr_floor=1e-5, max_epochs=40,
                 patience=6, max_steps=12_000, min_epoch_steps=50, random_state=0,
                 workspace=None):
        self.kind = kind
        self.hidden = hidden
        self.dropout = dropout
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay = lr_decay
        self.lr_decay_steps = lr_decay_steps
        self.lr_floor = lr_floor
        self.max_epochs = max_epochs
        self.patience = patience
        self.max_steps = max_steps
        self.min_epoch_steps = min_epoch_steps
        self.random_state = random_state
        self.workspace = workspace

    @classmethod
    def from_config(cls, kind: str, cfg: ImitationConfig, random_state: int = 0, workspace=None):
        return cls(kind=kind, hidden=tuple(cfg.hidden), dropout=cfg.dropout,
                   batch_size=cfg.batch_size, lr=cfg.lr, lr_decay=cfg.lr_decay,
                   lr_decay_steps=cfg.lr_decay_steps, lr_floor=cfg.lr_floor,
                   max_epochs=cfg.max_epochs, patience=cfg.patience, max_steps=cfg.max_steps,
                   random_state=random_state, workspace=workspace)

    @property
    def input_width(self) -> int:
        return 3 if self.kind == "bc" else 6

    def fit(self, X, y, X_val=None, y_val=None):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if len(X) == 0:
            raise ValueError("empty training set")
        if X.ndim != 2 or X.shape[1] != self.input_width:
            raise ValueError(f"{self.kind} expects {self.input_width} input columns, got {X.shape}")
        if y.shape != (len(X), 3):
            raise ValueError(f"targets must have shape ({len(X)}, 3), got {y.shape}")
        rng = np.random.Generator(np.random.PCG64(self.random_state))
        self.normalizer_ = Normalizer().fit(X if len(X) > 1 else np.vstack([X, X]))
        Xn = self.normalizer_.transform(X)
        offset = y - X[:, :3]
        self.target_mean_ = offset.mean(axis=0)
        self.target_scale_ = np.maximum(offset.std(axis=0), 1e-6)
        t = (offset - self.target_mean_) / self.target_scale_
        has_val = X_val is not None and len(X_val) > 0
        if has_val:
            X_val = np.asarray(X_val, dtype=float)
            Xv = self.normalizer_.transform(X_val)
            tv = (np.asarray(y_val, dtype=float) - X_val[:, :3] - self.target_mean_) / self.target_scale_
        spec = MlpSpec((self.input_width, *self.hidden, 3), self.dropout)
        self.net_ = MLP(spec, rng)
        opt = AdamState.like(self.net_.params, lr=self.lr, decay=self.lr_decay,
                             decay_steps=self.lr_decay_steps, lr_floor=self.lr_floor)
        n = len(Xn)
        bs = min(self.batch_size, n)
        per_epoch = max(math.ceil(n / bs), self.min_epoch_steps)
        self.train_loss_, self.val_loss_ = [], []
        best, best_state, stale, steps = math.inf, None, 0, 0
        for epoch in range(self.max_epochs):
            order = np.empty(0, dtype=int)
            total = 0.0
            for _ in range(per_epoch):
                if len(order) < bs:
                    order = np.concatenate([order, rng.permutation(n)])
                idx, order = order[:bs], order[bs:]
                out, cache = self.net_.forward(Xn[idx], train=True, rng=rng)
                diff = out - t[idx]
                loss = float(np.mean(diff * diff))
                if not math.isfinite(loss):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {steps}")
                grads, _ = self.net_.backward(cache, 2.0 * diff / diff.size)
                adam_step(opt, self.net_.params, grads)
                self.net_.bump()
                total += loss
                steps += 1
                if steps >= self.max_steps:
                    break
            self.train_loss_.append(total / per_epoch)
            monitor = self._mse(Xv, tv) if has_val else self._mse(Xn, t)
            self.val_loss_.append(monitor)
            if monitor < best - 1e-12:
                best, best_state, stale = monitor, self.net_.get_state(), 0
            else:
                stale += 1
            if stale >= self.patience or steps >= self.max_steps:
                break
        self.net_.set_state(best_state)
        self.optimizer_ = opt
        self.n_epochs_ = len(self.train_loss_)
        self.n_steps_ = steps
        return self

    def _mse(self, Xn, t) -> float:
        d = self.net_.predict(Xn) - t
        return float(np.mean(d * d))

    def _raw(self, X) -> np.ndarray:
        out = self.net_.predict(self.normalizer_.transform(X))
        return X[:, :3] + self.target_mean_ + out * self.target_scale_

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = self._raw(X)
        if self.workspace is not None:
            ws = np.asarray(self.workspace, dtype=float)
            out = np.clip(out, ws[:, 0], ws[:, 1])
        return out

    def validation_mse(self, X, y) -> float:
        """MSE of the raw pose outputs (no clamping)."""
        check_is_fitted(self, "net_")
        d = self._raw(np.atleast_2d(np.asarray(X, dtype=float))) - np.asarray(y, dtype=float)
        return float(np.mean(d * d))

    # --- persistence
    def save(self, path) -> None:
        check_is_fitted(self, "net_")
        meta = {"params": {k: (list(v) if isinstance(v, tuple) else v)
                           for k, v in self.get_params().items()},
                "train_loss": self.train_loss_, "val_loss": self.val_loss_,
                "n_steps": self.n_steps_, "target_mean": self.target_mean_.tolist(),
                "target_scale": self.target_scale_.tolist()}
        if meta["params"]["workspace"] is not None:
            meta["params"]["workspace"] = np.asarray(self.workspace).tolist()
        save_checkpoint(path, self.kind, {"policy": self.net_}, meta, self.normalizer_,
                        {"policy": self.optimizer_})

    @classmethod
    def load(cls, path, expect_kind: str | None = None) -> "SkillPolicy":
        ck = load_checkpoint(path)
        if ck.kind not in POLICY_KINDS:
            raise ValueError(f"{path}: checkpoint kind {ck.kind!r} is not a skill policy")
        if expect_kind is not None and ck.kind != expect_kind:
            raise ValueError(f"{path}: expected a {expect_kind} policy, found {ck.kind}")
        params = dict(ck.meta["params"])
        params["hidden"] = tuple(params["hidden"])
        pol = cls(**params)
        pol.net_ = ck.nets["policy"]
        pol.normalizer_ = ck.normalizer
        pol.optimizer_ = ck.optimizers.get("policy")
        pol.train_loss_ = ck.meta["train_loss"]
        pol.val_loss_ = ck.meta["val_loss"]
        pol.n_steps_ = ck.meta["n_steps"]
        pol.target_mean_ = np.asarray(ck.meta["target_mean"])
        pol.target_scale_ = np.asarray(ck.meta["target_scale"])
        pol.n_epochs_ = len(pol.train_loss_)
        return pol


# ---------------------------------------------------------------------------
# dataset construction + training entry points

def build_dataset(kind: str, trajectories, ws_frac: float = 0.85, wm_frac: float = 0.30):
    """``(X, y)`` for one policy kind from a list of trajectories."""
    if kind == "hgcil":
        builder = GoalRelabeler(ws_frac, wm_frac, "hierarchical")
    elif kind == "gcbc-flat":
        builder = GoalRelabeler(ws_frac, wm_frac, "next")
    elif kind == "bc":
        builder = PairBuilder()
    else:
        raise ValueError(f"unknown policy kind {kind!r}")
    X, y, _ = builder.fit(trajectories).transform(trajectories)
    return X, y


def train_skill(train_trajs, val_trajs=(), cfg: ImitationConfig | None = None,
                ws_frac=0.85, wm_frac=0.30, random_state=0, workspace=None) -> SkillPolicy:
    return train_policy("hgcil", train_trajs, val_trajs, cfg, ws_frac, wm_frac, random_state,
                        workspace)


def train_baseline(kind: str, train_trajs, val_trajs=(), cfg: ImitationConfig | None = None,
                   ws_frac=0.85, wm_frac=0.30, random_state=0, workspace=None) -> SkillPolicy:
    if kind not in ("bc", "gcbc-flat"):
        raise ValueError(f"baseline kind must be 'bc' or 'gcbc-flat', got {kind!r}")
    return train_policy(kind, train_trajs, val_trajs, cfg, ws_frac, wm_frac, random_state,
                        workspace)


def train_policy(kind, train_trajs, val_trajs=(), cfg=None, ws_frac=0.85, wm_frac=0.30,
                 random_state=0, workspace=None) -> SkillPolicy:
    if not train_trajs:
        raise ValueError("no training trajectories")
    cfg = cfg or ImitationConfig()
    X, y = build_dataset(kind, train_trajs, ws_frac, wm_frac)
    Xv = yv = None
    if val_trajs:
        Xv, yv = build_dataset(kind, val_trajs, ws_frac, wm_frac)
    pol = SkillPolicy.from_config(kind, cfg, random_state, workspace)
    return pol.fit(X, y, Xv, yv)


# ---------------------------------------------------------------------------
# runtime

def infer_subgoal(policy: SkillPolicy, p, p_h=None) -> np.ndarray:
    """Sub-goal (or next target) for the current pose, clamped to the workspace."""
    p = np.asarray(p, dtype=float).reshape(3)
    if policy.kind == "bc":
        x = p
    else:
        if p_h is None:
            raise ValueError(f"{policy.kind} policy needs a goal pose")
        x = np.concatenate([p, np.asarray(p_h, dtype=float).reshape(3)])
    out = policy.predict(x[None, :])[0]
    out[2] = normalize_angle(out[2])
    return out


@dataclass
class SubGoalScheduler:
    period: int = 50
    subgoal: np.ndarray | None = None
    steps: int = 0
    refreshes: list = field(default_factory=list)  # step indices of policy queries

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("scheduler period must be >= 1")

    def reset(self) -> None:
        self.subgoal, self.steps, self.refreshes = None, 0, []


def schedule_step(sched: SubGoalScheduler, policy, p, p_h):
    """Query the policy on refresh ticks and hold the sub-goal in between."""
    if sched.steps % sched.period == 0 or sched.subgoal is None:
        sched.subgoal = infer_subgoal(policy, p, p_h)
        sched.refreshes.append(sched.steps)
    sched.steps += 1
    return sched, sched.subgoal.copy()


def query_period(kind: str, n: int = 50) -> int:
    """HGCIL refreshes every ``n`` steps; the baselines act every step."""
    return n if kind == "hgcil" else 1


@dataclass
class MotionRollout:
    poses: np.ndarray
    subgoals: np.ndarray
    refreshes: list
    cause: str
    steps: int
    max_wrench: float


def rollout_motion(env: PlanarInsertionEnv, policy: SkillPolicy, period: int | None = None,
                   gain: float = 1.0, step_limit=(0.002, 0.002, 0.02), goal=None,
                   max_steps: int | None = None,
                   stop_score: ScoreParams | None = None) -> MotionRollout:
    """Force-free evaluation: a proportional mover walks toward the held target.

    Each control step commands ``p + clip(gain * (p_l - p), +-step_limit)``.
    With ``stop_score`` the rollout also ends (cause ``"score"``) as soon as
    the completion score passes its threshold. The environment must already
    be reset; build it with ``collisions=False`` to leave contact out.
    """
    period = query_period(policy.kind) if period is None else period
    sched = SubGoalScheduler(period)
    p_h = env.geometry.goal.as_array() if goal is None else np.asarray(goal, dtype=float)
    limit = np.asarray(step_limit, dtype=float)
    cap = max_steps or env.config.episode_cap
    poses, subgoals = [env.state.pose.copy()], []
    peak = 0.0
    st = env.state
    for _ in range(cap):
        sched, p_l = schedule_step(sched, policy, st.pose, p_h)
        delta = p_l - st.pose
        delta[2] = normalize_angle(delta[2])
        target = st.pose + np.clip(gain * delta, -limit, limit)
        st, _ = env.step(target)
        poses.append(st.pose.copy())
        subgoals.append(p_l)
        peak = max(peak, float(np.max(np.abs(st.wrench))))
        if st.terminal:
            break
        if stop_score is not None and score(*pose_errors(st.pose, p_h), stop_score) > stop_score.threshold:
            return MotionRollout(np.array(poses), np.array(subgoals), list(sched.refreshes),
                                 "score", st.step, peak)
    return MotionRollout(np.array(poses), np.array(subgoals), list(sched.refreshes),
                         st.cause if st.terminal else "timeout", st.step, peak)
