"""Soft actor-critic over the parallel position/force controller.

The agent observes ``[p_e, p_dot, f]`` (scaled), emits a tanh-squashed action
that :func:`encode_action` splits into a pose increment ``a_p`` and controller
gains, and is rewarded by a shaped pose/force term plus terminal bonuses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import ControllerGains, ControllerLimits, ParallelController, make_gains
from .domain import ExperimentConfig, SacConfig, rng_from_state, rng_state
from .env import PlanarInsertionEnv
from .net import MLP, AdamState, MlpSpec, adam_step, load_checkpoint, save_checkpoint

# ---------------------------------------------------------------------------
# reward


def l12_norm(z, alpha: float) -> float:
    """``0.5 * |z|^2 + sqrt(alpha + |z|^2)``."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    sq = float(np.dot(np.ravel(z), np.ravel(z)))
    return 0.5 * sq + math.sqrt(alpha + sq)


def linear_map_L(y: float, y_min: float, y_max: float) -> float:
    """1 at ``y_min``, 0 at ``y_max``, clamped affine in between."""
    if not y_max > y_min:
        raise ValueError("need y_max > y_min")
    return min(1.0, max(0.0, (y_max - y) / (y_max - y_min)))


@dataclass(frozen=True)
class RewardParams:
    w1: float = 1.0
    w2: float = 2.0
    p_max: tuple = (0.02, 0.02, 0.2)
    f_max: tuple = (20.0, 20.0, 1.0)
    f_g: tuple = (0.0, 0.0, 0.0)
    alpha: float = 1e-5
    gamma_success: float = 100.0
    gamma_force: float = -50.0

    def __post_init__(self):
        if min(self.p_max) <= 0 or min(self.f_max) <= 0:
            raise ValueError("p_max and f_max must be strictly positive")
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("reward weights must be non-negative")

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "RewardParams":
        r = cfg.reward
        return cls(r.w1, r.w2, tuple(cfg.p_max), tuple(cfg.f_max),
                   tuple(cfg.reference_wrench().tolist()), r.alpha, r.gamma_success, r.gamma_force)

    @property
    def pose_range(self) -> tuple[float, float]:
        """Inner-norm values at zero and at saturated (|p_e| = |p_max|) error."""
        return math.sqrt(self.alpha), 1.5 + math.sqrt(self.alpha + 3.0)

    @property
    def force_range(self) -> tuple[float, float]:
        return 0.0, math.sqrt(3.0)

    @property
    def bounds(self) -> tuple[float, float]:
        return min(0.0, self.gamma_force), self.w1 + self.w2 + max(0.0, self.gamma_success)


EVENTS = ("none", "goal", "force-violation")


def reward(p_e, f, params: RewardParams, event: str = "none") -> float:
    """Shaped pose term + force term + terminal bonus."""
    if event not in EVENTS:
        raise ValueError(f"unknown event {event!r}")
    z = np.asarray(p_e, dtype=float) / np.asarray(params.p_max)
    f_e = (np.asarray(params.f_g) - np.asarray(f, dtype=float)) / np.asarray(params.f_max)
    r = (params.w1 * linear_map_L(l12_norm(z, params.alpha), *params.pose_range)
         + params.w2 * linear_map_L(float(np.linalg.norm(f_e)), *params.force_range))
    if event == "goal":
        r += params.gamma_success
    elif event == "force-violation":
        r += params.gamma_force
    return r


# ---------------------------------------------------------------------------
# action spaces

ACTION_LAYOUTS = {
    # a_p, PD gain, PI gain, selection
    "PL-6": (3, 1, 1, 1),
    "PL-8": (3, 1, 1, 3),
    "PL-10": (3, 3, 3, 1),
    "PL-12": (3, 3, 3, 3),
}


@dataclass(frozen=True)
class ActionSpaceVariant:
    name: str

    def __post_init__(self):
        if self.name not in ACTION_LAYOUTS:
            raise ValueError(f"unknown action variant {self.name!r}; "
                             f"choose from {', '.join(ACTION_LAYOUTS)}")

    @property
    def layout(self) -> tuple:
        return ACTION_LAYOUTS[self.name]

    @property
    def dim(self) -> int:
        return sum(self.layout)

    def slices(self) -> list[slice]:
        out, start = [], 0
        for n in self.layout:
            out.append(slice(start, start + n))
            start += n
        return out


def _affine(raw, lo, hi):
    return lo + 0.5 * (np.asarray(raw) + 1.0) * (hi - lo)


def _affine_inv(val, lo, hi):
    return 2.0 * (np.asarray(val) - lo) / (hi - lo) - 1.0


def encode_action(raw, variant: ActionSpaceVariant, kp_p_bounds=(5.0, 300.0),
                  kp_f_bounds=(0.01, 1.0), max_step=(0.003, 0.003, 0.03)):
    """Map a raw ``[-1, 1]`` vector to ``(a_p, gains)``; scalar slots broadcast."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (variant.dim,):
        raise ValueError(f"{variant.name} expects an action of length {variant.dim}, got {raw.shape}")
    if np.any(np.abs(raw) > 1.0 + 1e-9) or not np.all(np.isfinite(raw)):
        raise ValueError("raw action components must lie in [-1, 1]")
    raw = np.clip(raw, -1.0, 1.0)
    sl = variant.slices()
    a_p = raw[sl[0]] * np.asarray(max_step, dtype=float)
    kp_p = _affine(raw[sl[1]], *kp_p_bounds)
    kp_f = _affine(raw[sl[2]], *kp_f_bounds)
    s = 0.5 * (raw[sl[3]] + 1.0)
    gains = make_gains(np.broadcast_to(kp_p, 3), np.broadcast_to(kp_f, 3), np.broadcast_to(s, 3),
                       kp_p_bounds, kp_f_bounds)
    return a_p, gains


def decode_action(a_p, gains: ControllerGains, variant: ActionSpaceVariant,
                  kp_p_bounds=(5.0, 300.0), kp_f_bounds=(0.01, 1.0),
                  max_step=(0.003, 0.003, 0.03)) -> np.ndarray:
    """Inverse of :func:`encode_action` (scalar slots read from the first axis)."""
    layout = variant.layout

    def pick(v, n):
        return np.asarray(v)[:n] if n == 3 else np.asarray(v)[:1]

    parts = [np.asarray(a_p, dtype=float) / np.asarray(max_step, dtype=float),
             _affine_inv(pick(gains.kp_p, layout[1]), *kp_p_bounds),
             _affine_inv(pick(gains.kp_f, layout[2]), *kp_f_bounds),
             2.0 * pick(gains.s, layout[3]) - 1.0]
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# replay


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.ptr = 0
        self.size = 0
        self.total = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, act, rew, next_obs, done) -> None:
        if not math.isfinite(rew):
            raise ValueError("reward must be finite")
        i = self.ptr
        self.obs[i], self.act[i], self.rew[i] = obs, act, rew
        self.next_obs[i], self.done[i] = next_obs, float(done)
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.total += 1

    def sample(self, batch: int, rng: np.random.Generator):
        if batch > self.size:
            raise ValueError(f"batch {batch} exceeds buffer occupancy {self.size}")
        idx = rng.integers(0, self.size, batch)
        return self.obs[idx], self.act[idx], self.rew[idx], self.next_obs[idx], self.done[idx]

    def oldest(self) -> int:
        """Insertion index (0-based, over all time) of the oldest stored item."""
        return self.total - self.size

    def save(self, path) -> None:
        n = self.size
        order = (np.arange(n) + (self.ptr - n)) % self.capacity  # oldest first
        np.savez(path, obs=self.obs[order], act=self.act[order], rew=self.rew[order],
                 next_obs=self.next_obs[order], done=self.done[order],
                 meta=np.array([self.capacity, self.total]))

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        with np.load(path) as d:
            cap, total = (int(v) for v in d["meta"])
            buf = cls(cap, d["obs"].shape[1], d["act"].shape[1])
            n = len(d["rew"])
            buf.obs[:n], buf.act[:n], buf.rew[:n] = d["obs"], d["act"], d["rew"]
            buf.next_obs[:n], buf.done[:n] = d["next_obs"], d["done"]
        buf.size, buf.ptr, buf.total = n, n % cap, total
        return buf


# ---------------------------------------------------------------------------
# SAC

LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0
_TANH_EPS = 1e-6
_LOG_2PI = math.log(2.0 * math.pi)


class SacDiverged(FloatingPointError):
    pass


class SacAgent:
    """Twin-critic SAC with a tanh-squashed Gaussian actor and learned temperature."""

    def __init__(self, obs_dim: int, act_dim: int, config: SacConfig | None = None,
                 rng: np.random.Generator | None = None):
        self.config = cfg = config or SacConfig()
        self.obs_dim, self.act_dim = obs_dim, act_dim
        rng = rng if rng is not None else np.random.default_rng(0)
        hidden = tuple(cfg.hidden)
        self.actor = MLP(MlpSpec((obs_dim, *hidden, 2 * act_dim)), rng)
        self.q1 = MLP(MlpSpec((obs_dim + act_dim, *hidden, 1)), rng)
        self.q2 = MLP(MlpSpec((obs_dim + act_dim, *hidden, 1)), rng)
        self.q1_targ = MLP(self.q1.spec, rng)
        self.q2_targ = MLP(self.q2.spec, rng)
        self.q1_targ.copy_from(self.q1)
        self.q2_targ.copy_from(self.q2)
        self.log_alpha = np.array([math.log(cfg.init_temperature)])
        self.target_entropy = -float(act_dim)
        kw = dict(lr=cfg.lr, decay=1.0)
        self.opt = {"actor": AdamState.like(self.actor.params, **kw),
                    "q1": AdamState.like(self.q1.params, **kw),
                    "q2": AdamState.like(self.q2.params, **kw),
                    "alpha": AdamState.like([self.log_alpha], **kw)}
        self.updates = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    # --- policy
    def _dist(self, obs):
        out, cache = self.actor.forward(obs)
        mu = out[:, : self.act_dim]
        raw_ls = out[:, self.act_dim:]
        t = np.tanh(raw_ls)
        log_std = LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (t + 1.0)
        return mu, log_std, t, cache

    def _sample(self, obs, rng):
        mu, log_std, t, cache = self._dist(obs)
        std = np.exp(log_std)
        eps = rng.standard_normal(mu.shape)
        a = np.tanh(mu + std * eps)
        logp = np.sum(-0.5 * eps ** 2 - log_std - 0.5 * _LOG_2PI - np.log(1.0 - a ** 2 + _TANH_EPS),
                      axis=1)
        return a, logp, (mu, log_std, t, std, eps, cache)

    def act(self, obs, rng: np.random.Generator | None = None, deterministic: bool = False):
        obs = np.asarray(obs, dtype=float)[None, :]
        if deterministic:
            mu, _, _, _ = self._dist(obs)
            return np.tanh(mu[0])
        a, _, _ = self._sample(obs, rng)
        return a[0]

    def _q(self, net, obs, act):
        return net.forward(np.hstack([obs, act]))

    # --- learning
    def update(self, batch, rng: np.random.Generator) -> dict:
        cfg = self.config
        obs, act, rew, nobs, done = batch
        n = len(rew)
        alpha = self.alpha

        # critic targets
        a2, logp2, _ = self._sample(nobs, rng)
        tq1, _ = self._q(self.q1_targ, nobs, a2)
        tq2, _ = self._q(self.q2_targ, nobs, a2)
        soft = np.minimum(tq1[:, 0], tq2[:, 0]) - alpha * logp2
        y = rew + cfg.discount * (1.0 - done) * soft

        losses = {}
        for name, net in (("q1", self.q1), ("q2", self.q2)):
            q, cache = self._q(net, obs, act)
            d = q[:, 0] - y
            losses[name] = float(np.mean(d * d))
            grads, _ = net.backward(cache, (2.0 * d / n)[:, None])
            adam_step(self.opt[name], net.params, grads)
            net.bump()

        # actor through the reparameterised sample
        a, logp, (mu, log_std, t, std, eps, acache) = self._sample(obs, rng)
        q1, c1 = self._q(self.q1, obs, a)
        q2, c2 = self._q(self.q2, obs, a)
        use1 = q1[:, 0] <= q2[:, 0]
        qmin = np.where(use1, q1[:, 0], q2[:, 0])
        ones = np.full((n, 1), 1.0 / n)
        _, dq1 = self.q1.backward(c1, ones * use1[:, None])
        _, dq2 = self.q2.backward(c2, ones * (~use1)[:, None])
        dq_da = (dq1 + dq2)[:, self.obs_dim:] * n  # per-sample dQmin/da
        one_m = 1.0 - a ** 2
        dlogp_du = 2.0 * a * one_m / (one_m + _TANH_EPS)
        du_common = alpha * dlogp_du - dq_da * one_m  # dL/du per sample
        g_mu = du_common
        g_ls = -alpha + du_common * std * eps
        g_raw_ls = g_ls * 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (1.0 - t ** 2)
        grads, _ = self.actor.backward(acache, np.hstack([g_mu, g_raw_ls]) / n)
        adam_step(self.opt["actor"], self.actor.params, grads)
        self.actor.bump()
        losses["actor"] = float(np.mean(alpha * logp - qmin))

        # temperature
        g_alpha = -float(np.mean(logp + self.target_entropy))
        adam_step(self.opt["alpha"], [self.log_alpha], [np.array([g_alpha * alpha])])
        losses["alpha"] = self.alpha
        losses["entropy"] = float(-np.mean(logp))

        self.q1_targ.copy_from(self.q1, cfg.polyak)
        self.q2_targ.copy_from(self.q2, cfg.polyak)
        self.updates += 1
        for k, v in losses.items():
            if not math.isfinite(v):
                raise SacDiverged(f"non-finite {k} loss after {self.updates} updates: {losses}")
        return losses

    # --- persistence
    def nets(self) -> dict:
        return {"actor": self.actor, "q1": self.q1, "q2": self.q2,
                "q1_targ": self.q1_targ, "q2_targ": self.q2_targ}

    def save(self, path, extra: dict | None = None) -> None:
        meta = {"obs_dim": self.obs_dim, "act_dim": self.act_dim,
                "sac": {k: getattr(self.config, k) for k in self.config.__dataclass_fields__},
                "log_alpha": float(self.log_alpha[0]), "updates": self.updates}
        meta.update(extra or {})
        save_checkpoint(path, "sac", self.nets(), meta, optimizers=self.opt)

    @classmethod
    def load(cls, path) -> tuple["SacAgent", dict]:
        ck = load_checkpoint(path)
        if ck.kind != "sac":
            raise ValueError(f"{path}: expected a sac checkpoint, found {ck.kind!r}")
        m = ck.meta
        agent = cls(m["obs_dim"], m["act_dim"], SacConfig(**m["sac"]))
        for name, net in agent.nets().items():
            net.set_state(ck.nets[name].get_state())
        agent.log_alpha[0] = m["log_alpha"]
        agent.opt = ck.optimizers
        agent.updates = m["updates"]
        return agent, m


def sac_update(agent: SacAgent, batch, rng: np.random.Generator) -> dict:
    return agent.update(batch, rng)


# ---------------------------------------------------------------------------
# episodes

MODES = ("cl", "vanilla", "recorded")


def observation_scale(cfg: ExperimentConfig) -> np.ndarray:
    p_max = np.asarray(cfg.p_max, dtype=float)
    return np.concatenate([p_max, p_max / cfg.control_dt, np.asarray(cfg.f_max, dtype=float)])


def scale_observation(vec, scale) -> np.ndarray:
    return np.clip(np.asarray(vec) / scale, -10.0, 10.0)


@dataclass
class StepLog:
    episode: int
    step: int
    reward: float
    event: str
    wrench: float  # max |f_i| / f_max_i over the axes
    kp_p: float
    kp_f: float
    s: float
    refresh: bool


@dataclass
class EpisodeRecord:
    mode: str
    steps: int = 0
    total_reward: float = 0.0
    cause: str = "none"
    final_pose: np.ndarray | None = None
    subgoal_refreshes: list = field(default_factory=list)
    pl_sources: set = field(default_factory=set)
    log: list = field(default_factory=list)
    forces: list = field(default_factory=list)  # per-step mean wrench
    poses: list = field(default_factory=list)  # pose after each step


class EpisodeRunner:
    """Wires env, controller, optional sub-goal source and agent together.

    ``mode`` selects the reference ``p_l``: ``cl`` queries the skill policy
    through the scheduler, ``vanilla`` uses the task goal every step and
    ``recorded`` replays a demonstration pose by time index.
    """

    def __init__(self, env: PlanarInsertionEnv, config: ExperimentConfig, mode: str = "cl",
                 skill=None, recorded=None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if mode == "cl" and skill is None:
            raise ValueError("cl mode needs a trained skill policy")
        if mode == "cl" and getattr(skill, "kind", "hgcil") != "hgcil":
            raise ValueError(f"cl mode needs an hgcil policy, got {skill.kind}")
        if mode == "recorded" and recorded is None:
            raise ValueError("recorded mode needs a demonstration trajectory")
        self.env, self.cfg, self.mode = env, config, mode
        self.skill = skill
        self.recorded = None if recorded is None else np.asarray(
            getattr(recorded, "poses", recorded), dtype=float)
        self.variant = ActionSpaceVariant(config.action_variant)
        self.params = RewardParams.from_config(config)
        self.scale = observation_scale(config)
        self.f_g = config.reference_wrench()
        self.f_max = np.asarray(config.f_max, dtype=float)
        self.controller = ParallelController(ControllerLimits(
            lookahead=env.lag, period=config.control_dt, windup=config.anti_windup))

    def encode(self, raw):
        c = self.cfg
        return encode_action(raw, self.variant, c.kp_p_bounds, c.kp_f_bounds, c.max_action_step)

    def _reference(self, k: int, pose, sched):
        if self.mode == "vanilla":
            return self.env.geometry.goal.as_array(), "goal"
        if self.mode == "recorded":
            return self.recorded[min(k, len(self.recorded) - 1)].copy(), "recorded"
        from .imitation import schedule_step
        before = len(sched.refreshes)
        sched, p_l = schedule_step(sched, self.skill, pose, self.env.geometry.goal.as_array())
        return p_l, ("skill-refresh" if len(sched.refreshes) > before else "skill-hold")

    def run(self, policy, rng: np.random.Generator, buffer: ReplayBuffer | None = None,
            on_step=None, episode: int = 0, reset_rng: np.random.Generator | None = None,
            start=None, perturb: bool | None = None) -> EpisodeRecord:
        """Play one episode.

        ``policy(obs_scaled) -> raw action``. ``on_step()`` runs after each
        transition (the learner hooks its updates here).
        """
        from .imitation import SubGoalScheduler

        env, cfg = self.env, self.cfg
        env.reset(rng=reset_rng if reset_rng is not None else rng, start=start, perturb=perturb)
        self.controller.reset()
        sched = SubGoalScheduler(cfg.subgoal_period)
        rec = EpisodeRecord(mode=self.mode)
        dt = env.dt
        p_l, src = self._reference(0, env.state.pose, sched)
        rec.pl_sources.add(src)
        obs = scale_observation(env.observe(p_l).vector(), self.scale)
        ctl = self.controller
        f_g = self.f_g
        for k in range(cfg.episode_cap):
            raw = np.asarray(policy(obs), dtype=float)
            a_p, gains = self.encode(raw)

            def command(_k, p, _v, w, p_l=p_l, a_p=a_p, gains=gains):
                e = p_l - p
                e[2] = (e[2] + math.pi) % (2 * math.pi) - math.pi
                return p + ctl.step(gains, e, f_g - w, a_p, dt)

            st, _ = env.step(command, reference=p_l)
            event = {"goal": "goal", "force-violation": "force-violation"}.get(st.cause, "none")
            refresh = src == "skill-refresh"
            # next reference (sub-goal may refresh)
            if not st.terminal:
                new_pl, src = self._reference(k + 1, st.pose, sched)
                rec.pl_sources.add(src)
                ctl.retarget(new_pl - p_l)
            else:
                new_pl = p_l
            obs_raw = env.observe(p_l)
            r = reward(obs_raw.p_e, obs_raw.f, self.params, event)
            next_obs = scale_observation(env.observe(new_pl).vector(), self.scale)
            done = event != "none"  # timeouts bootstrap
            if buffer is not None:
                buffer.add(obs, raw, r, next_obs, done)
            rec.total_reward += r
            rec.forces.append(st.wrench.copy())
            rec.poses.append(st.pose.copy())
            rec.log.append(StepLog(episode, k, r, event,
                                   float(np.max(np.abs(st.wrench) / self.f_max)),
                                   float(np.mean(gains.kp_p)), float(np.mean(gains.kp_f)),
                                   float(np.mean(gains.s)), refresh))
            if on_step is not None:
                on_step()
            obs, p_l = next_obs, new_pl
            if st.terminal:
                break
        rec.steps = st.step
        rec.cause = st.cause
        rec.final_pose = st.pose.copy()
        rec.subgoal_refreshes = list(sched.refreshes)
        return rec


def run_episode(env, config, agent=None, mode="cl", skill=None, recorded=None, rng=None,
                buffer=None, deterministic=True) -> EpisodeRecord:
    """Single episode with an agent (or the inert zero action when ``agent`` is None)."""
    runner = EpisodeRunner(env, config, mode, skill, recorded)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    if agent is None:
        policy = lambda o: np.zeros(runner.variant.dim)  # noqa: E731
    else:
        policy = lambda o: agent.act(o, rng, deterministic)  # noqa: E731
    return runner.run(policy, rng, buffer)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    agent: SacAgent
    curve_steps: list
    curve_rewards: list
    episodes: list  # (episode, steps, total_reward, cause)
    log: list
    total_steps: int


class SacTrainer:
    """Episode loop with warmup, per-step updates and checkpoint/resume."""

    def __init__(self, runner: EpisodeRunner, config: ExperimentConfig, seed: int | None = None):
        self.runner, self.cfg = runner, config
        seed = config.seed if seed is None else seed
        ss = np.random.SeedSequence(seed).spawn(3)
        self.rng_env = np.random.Generator(np.random.PCG64(ss[0]))
        self.rng_act = np.random.Generator(np.random.PCG64(ss[1]))
        self.rng_learn = np.random.Generator(np.random.PCG64(ss[2]))
        act_dim = runner.variant.dim
        self.agent = SacAgent(9, act_dim, config.sac,
                              np.random.Generator(np.random.PCG64(seed)))
        self.buffer = ReplayBuffer(config.sac.buffer_size, 9, act_dim)
        self.steps = 0
        self.curve_steps, self.curve_rewards, self.episodes = [], [], []
        self.keep_log = True
        self.log: list = []

    def _policy(self, obs):
        if self.steps < self.cfg.sac.warmup_steps:
            return self.rng_act.uniform(-1.0, 1.0, self.runner.variant.dim)
        return self.agent.act(obs, self.rng_act)

    def _on_step(self):
        self.steps += 1
        sac = self.cfg.sac
        if self.steps >= sac.warmup_steps and len(self.buffer) >= sac.batch_size:
            for _ in range(sac.updates_per_step):
                self.agent.update(self.buffer.sample(sac.batch_size, self.rng_learn),
                                  self.rng_learn)

    def train(self, total_steps: int, checkpoint=None, checkpoint_every: int = 0,
              progress=None) -> TrainResult:
        next_ck = (self.steps // checkpoint_every + 1) * checkpoint_every if checkpoint_every else None
        while self.steps < total_steps:
            ep = len(self.episodes)
            rec = self.runner.run(self._policy, self.rng_env, self.buffer, self._on_step, ep)
            self.curve_steps.append(self.steps)
            self.curve_rewards.append(rec.total_reward)
            self.episodes.append((ep, rec.steps, rec.total_reward, rec.cause))
            if self.keep_log:
                self.log.extend(rec.log)
            if progress is not None:
                progress(self, rec)
            if next_ck is not None and checkpoint is not None and self.steps >= next_ck:
                self.save(checkpoint)
                next_ck += checkpoint_every
        return TrainResult(self.agent, self.curve_steps, self.curve_rewards, self.episodes,
                           self.log, self.steps)

    # --- resumable state
    def save(self, path) -> None:
        path = Path(path)
        extra = {"steps": self.steps, "curve_steps": self.curve_steps,
                 "curve_rewards": self.curve_rewards,
                 "episodes": [list(e) for e in self.episodes],
                 "rng": {k: rng_state(getattr(self, k))
                         for k in ("rng_env", "rng_act", "rng_learn")},
                 "env_rng": rng_state(self.runner.env.rng)}
        self.agent.save(path, extra)
        self.buffer.save(path.with_suffix(".replay.npz"))

    def restore(self, path) -> None:
        path = Path(path)
        self.agent, meta = SacAgent.load(path)
        self.buffer = ReplayBuffer.load(path.with_suffix(".replay.npz"))
        self.steps = meta["steps"]
        self.curve_steps = list(meta["curve_steps"])
        self.curve_rewards = list(meta["curve_rewards"])
        self.episodes = [tuple(e) for e in meta["episodes"]]
        for k, st in meta["rng"].items():
            setattr(self, k, rng_from_state(st))
        self.runner.env.rng = rng_from_state(meta["env_rng"])


def insertion_phase_force(records, geometry, axis: int = 1, depth_tol: float = 0.001):
    """Mean insertion-axis sensor force over in-contact steps above the goal depth.

    Returns ``(mean_force, n_steps)``; ``mean_force`` is NaN when no step
    qualifies.
    """
    goal = geometry.goal.as_array()[axis]
    vals = []
    for rec in records:
        for f, p in zip(rec.forces, rec.poses):
            if np.any(np.abs(f) > 1e-9) and p[axis] > goal + depth_tol:
                vals.append(f[axis])
    return (float(np.mean(vals)) if vals else float("nan")), len(vals)


def evaluate_agent(runner: EpisodeRunner, agent: SacAgent, n: int, seed: int) -> list[EpisodeRecord]:
    """Deterministic-policy episodes from seeded perturbed starts."""
    out = []
    for i in range(n):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, i])))
        out.append(runner.run(lambda o: agent.act(o, deterministic=True), rng, episode=i))
    return out


# ---------------------------------------------------------------------------
# a contact-free sanity task


class Reach1D:
    """Point on a line, ``x' = x + step * a``; reward ``max(0, 1 - |x' - g| / width)``.

    The optimum moves at full speed toward the goal and then holds, so its
    episodic return has the closed form of :meth:`optimal_return`.
    """

    obs_dim = 2

    def __init__(self, goal: float = 0.5, start: float = -0.5, step: float = 0.1,
                 width: float = 0.2, horizon: int = 50):
        self.goal, self.start, self.step_size = goal, start, step
        self.width, self.horizon = width, horizon
        self.x, self.t = start, 0

    def reset(self) -> np.ndarray:
        self.x, self.t = self.start, 0
        return self._obs()

    def _obs(self) -> np.ndarray:
        return np.array([self.x, self.goal - self.x])

    def _r(self, x) -> float:
        return max(0.0, 1.0 - abs(x - self.goal) / self.width)

    def step(self, a: float):
        self.x = float(np.clip(self.x + self.step_size * float(np.clip(a, -1, 1)), -2.0, 2.0))
        self.t += 1
        return self._obs(), self._r(self.x), self.t >= self.horizon

    def optimal_return(self) -> float:
        x, total = self.start, 0.0
        for _ in range(self.horizon):
            d = self.goal - x
            x += math.copysign(min(abs(d), self.step_size), d)
            total += self._r(x)
        return total


def train_reach(seed: int, steps: int = 20_000, config: SacConfig | None = None,
                eval_every: int = 1000, task: Reach1D | None = None, target: float | None = None):
    """Train SAC on :class:`Reach1D`; returns ``(agent, [(step, deterministic return)])``.

    With ``target`` training stops at the first evaluation reaching it.
    """
    task = task or Reach1D()
    cfg = config or SacConfig(hidden=[64, 64], warmup_steps=500, batch_size=128)
    rng = np.random.Generator(np.random.PCG64(seed))
    agent = SacAgent(task.obs_dim, 1, cfg, np.random.Generator(np.random.PCG64(seed + 1)))
    buf = ReplayBuffer(cfg.buffer_size, task.obs_dim, 1)
    history = []
    obs, t = task.reset(), 0
    while t < steps:
        a = rng.uniform(-1, 1, 1) if t < cfg.warmup_steps else agent.act(obs, rng)
        nobs, r, done = task.step(a[0])
        buf.add(obs, a, r, nobs, False)  # horizon cut, not a true terminal
        obs = task.reset() if done else nobs
        t += 1
        if t >= cfg.warmup_steps and len(buf) >= cfg.batch_size:
            agent.update(buf.sample(cfg.batch_size, rng), rng)
        if t % eval_every == 0:
            history.append((t, reach_return(agent, Reach1D(task.goal, task.start, task.step_size,
                                                           task.width, task.horizon))))
            if target is not None and history[-1][1] >= target:
                break
    return agent, history


def reach_return(agent: SacAgent, task: Reach1D) -> float:
    obs, total, done = task.reset(), 0.0, False
    while not done:
        obs, r, done = task.step(agent.act(obs, deterministic=True)[0])
        total += r
    return total
