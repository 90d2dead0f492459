"""Experiment steps shared by the command line and the acceptance suite.

Every function here is a pure function of its config, seed and input files;
outputs are plain text tables, ``.npz`` checkpoints and JSON manifests.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..dataset import DemoSet, GoalRelabeler, PairBuilder, generate_demoset, save_triplets
from ..domain import ExperimentConfig, seeded_rng
from ..env import PlanarInsertionEnv
from ..geometry import bundled_geometry
from ..imitation import POLICY_KINDS, SkillPolicy, rollout_motion, train_policy
from ..metrics import (ScoreParams, TrialRecord, aggregate_trials, ema, pose_errors, score,
                       write_curve, write_trials)
from ..rl import EpisodeRunner, SacAgent, SacTrainer, evaluate_agent

ROOT_ENV = "COMBILEARN_ROOT"
GROUPS = ("x", "z", "theta")


class PipelineError(RuntimeError):
    """Missing or inconsistent artifacts; reported as a one-line CLI error."""


def artifact_root(explicit=None) -> Path:
    return Path(explicit or os.environ.get(ROOT_ENV) or "artifacts")


def _require(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise PipelineError(f"missing {what}: {path}")
    return path


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    run_id: str
    config: dict
    input_hash: str
    artifacts: dict = field(default_factory=dict)
    started: float = field(default_factory=time.time)
    finished: float | None = None
    base: str | None = None  # artifact paths are stored relative to this

    def add(self, key: str, path) -> None:
        path = Path(path)
        shown = path.relative_to(self.base) if self.base else path
        self.artifacts[key] = {"path": str(shown), "sha256": file_digest(path)}

    def save(self, path) -> None:
        data = asdict(self)
        data.pop("base")
        Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def config_hash(cfg: ExperimentConfig, extra: dict | None = None) -> str:
    blob = json.dumps({"config": cfg.to_dict(), "extra": extra or {}}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# demos, relabeling, imitation

def demo_gen(cfg: ExperimentConfig, out_dir, count: int | None = None, split=None) -> DemoSet:
    count = cfg.demo_count if count is None else count
    n_train = (split or cfg.demo_split)[0]
    if split is not None and sum(split) != count:
        raise PipelineError(f"split {split[0]}:{split[1]} does not add up to {count} demos")
    geometry = bundled_geometry(cfg.env_variant)
    try:
        ds = generate_demoset(geometry, seeded_rng(cfg.seed), count, n_train)
    except RuntimeError as exc:
        raise PipelineError(str(exc)) from exc
    ds.save(out_dir)
    return ds


def load_demos(demo_dir) -> DemoSet:
    _require(Path(demo_dir) / "split.json", "demo set")
    return DemoSet.load(demo_dir)


def relabel(cfg: ExperimentConfig, demo_dir, out_path, kind: str = "hgcil") -> int:
    """Write the supervised table for ``kind``; returns the row count."""
    ds = load_demos(demo_dir)
    if kind == "bc":
        X, y, g = PairBuilder().fit(ds.train).transform(ds.train)
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["traj_id", "px", "pz", "ptheta", "nx", "nz", "ntheta"])
            for tid, a, b in zip(g, X, y):
                w.writerow([int(tid)] + [repr(float(v)) for v in (*a, *b)])
        return len(X)
    mode = {"hgcil": "hierarchical", "gcbc-flat": "next", "flat": "flat"}.get(kind)
    if mode is None:
        raise PipelineError(f"unknown relabel kind {kind!r}")
    X, y, g = GoalRelabeler(cfg.ws_frac, cfg.wm_frac, mode).fit(ds.train).transform(ds.train)
    save_triplets(out_path, X[:, :3], y, X[:, 3:], g)
    return len(X)


def train_il(cfg: ExperimentConfig, demo_dir, out_path, kind: str = "hgcil") -> SkillPolicy:
    if kind not in POLICY_KINDS:
        raise PipelineError(f"unknown policy kind {kind!r}")
    ds = load_demos(demo_dir)
    geometry = bundled_geometry(cfg.env_variant)
    pol = train_policy(kind, ds.train, ds.validation, cfg.imitation, cfg.ws_frac, cfg.wm_frac,
                       random_state=cfg.seed, workspace=np.asarray(geometry.workspace))
    out_path = Path(out_path)
    pol.save(out_path)
    with open(out_path.with_suffix(".loss.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for i, (a, b) in enumerate(zip(pol.train_loss_, pol.val_loss_)):
            w.writerow([i, repr(float(a)), repr(float(b))])
    return pol


def load_skill(path, kind: str | None = None) -> SkillPolicy:
    return SkillPolicy.load(_require(path, "skill-policy checkpoint"), kind)


# ---------------------------------------------------------------------------
# evaluation

def trial_seed(seed: int, group: int, trial: int) -> int:
    return seed * 10_000 + group * 100 + trial


PROTOCOLS = ("perturbed-starts", "single")


def group_starts(cfg: ExperimentConfig, geometry, trials: int = 20, seed: int | None = None,
                 protocol: str = "perturbed-starts"):
    """Yield ``(group, trial, seed, start_pose)``.

    ``perturbed-starts`` perturbs one axis per group (x, z, theta);
    ``single`` is one group perturbing all axes jointly.
    """
    if protocol not in PROTOCOLS:
        raise PipelineError(f"unknown protocol {protocol!r}")
    seed = cfg.seed if seed is None else seed
    half = np.asarray(cfg.perturbation, dtype=float)
    nominal = geometry.start.as_array()
    groups = list(enumerate(GROUPS)) if protocol == "perturbed-starts" else [(3, "all")]
    for g, name in groups:
        for i in range(trials):
            ts = trial_seed(seed, g, i)
            rng = seeded_rng(ts)
            start = nominal.copy()
            if g < 3:
                start[g] += rng.uniform(-half[g], half[g])
            else:
                start += rng.uniform(-half, half)
            yield name, i, ts, start


def eval_skill(cfg: ExperimentConfig, policy: SkillPolicy, trials: int = 20, no_force: bool = True,
               seed: int | None = None, protocol: str = "perturbed-starts") -> list[TrialRecord]:
    """Seeded trials of a skill policy driving the proportional mover."""
    geometry = bundled_geometry(cfg.env_variant)
    params = ScoreParams(*cfg.score_lambda, cfg.success_threshold)
    out = []
    for k, (group, i, ts, start) in enumerate(group_starts(cfg, geometry, trials, seed, protocol)):
        env = PlanarInsertionEnv(geometry, cfg, collisions=not no_force)
        env.reset(perturb=False, start=start)
        r = rollout_motion(env, policy, period=cfg.subgoal_period if policy.kind == "hgcil" else 1,
                           stop_score=params)
        c = score(*pose_errors(r.poses[-1], geometry.goal.as_array()), params)
        out.append(TrialRecord(k, ts, c, r.steps, cfg.episode_cap, group))
    return out


def eval_agent(cfg: ExperimentConfig, agent: SacAgent, mode: str, skill=None, recorded=None,
               trials: int = 20, seed: int | None = None, protocol: str = "single"):
    """Deterministic agent episodes from seeded starts.

    Returns the episode records and one :class:`TrialRecord` per episode
    (its ``group`` column holds the start group).
    """
    geometry = bundled_geometry(cfg.env_variant)
    runner = EpisodeRunner(PlanarInsertionEnv(geometry, cfg), cfg, mode, skill, recorded)
    params = ScoreParams(*cfg.score_lambda, cfg.success_threshold)
    recs, rows = [], []
    policy = lambda o: agent.act(o, deterministic=True)  # noqa: E731
    for k, (group, i, ts, start) in enumerate(group_starts(cfg, geometry, trials, seed, protocol)):
        rec = runner.run(policy, seeded_rng(ts), episode=k, start=start, perturb=False)
        recs.append(rec)
        c = score(*pose_errors(rec.final_pose, geometry.goal.as_array()), params)
        rows.append(TrialRecord(k, ts, c, rec.steps, cfg.episode_cap, group))
    return recs, rows


def write_eval(out_dir, rows, cfg: ExperimentConfig, name: str = "eval") -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = ScoreParams(*cfg.score_lambda, cfg.success_threshold)
    write_trials(out_dir / f"{name}_trials.csv", rows, params, group_column=True)
    groups = sorted({r.group for r in rows}, key=lambda g: (g not in GROUPS, g))
    with open(out_dir / f"{name}_aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "n", "mean_C", "success_rate", "mean_steps"])
        for g in groups + ["all"]:
            sel = rows if g == "all" else [r for r in rows if r.group == g]
            s = aggregate_trials(sel, params)
            w.writerow([g, s.n, repr(s.mean_C), repr(s.success_rate), repr(s.mean_steps)])
    return {"trials": out_dir / f"{name}_trials.csv", "aggregate": out_dir / f"{name}_aggregate.csv"}


# ---------------------------------------------------------------------------
# reinforcement learning

RUNLOG_HEADER = ["episode", "step", "reward", "event", "wrench", "kp_p", "kp_f", "s", "refresh"]


def make_runner(cfg: ExperimentConfig, mode: str, skill=None, recorded=None) -> EpisodeRunner:
    if mode == "cl" and skill is None:
        raise PipelineError("cl mode needs a skill-policy checkpoint (--skill)")
    if mode == "recorded" and recorded is None:
        raise PipelineError("recorded mode needs a demonstration (--demos)")
    geometry = bundled_geometry(cfg.env_variant)
    env = PlanarInsertionEnv(geometry, cfg, rng=seeded_rng(cfg.seed))
    return EpisodeRunner(env, cfg, mode, skill, recorded)


EVAL_HEADER = ["step", "episodes", "mean_return", "goal_rate"]


def train_rl(cfg: ExperimentConfig, mode: str, steps: int, out_dir, skill=None, recorded=None,
             checkpoint_every: int = 0, resume: bool = False, keep_log: bool = True,
             eval_every: int = 0, eval_episodes: int = 5) -> SacTrainer:
    """SAC training with a streamed run log.

    Writes ``runlog.csv`` (one row per control step), ``curve.csv``,
    ``episodes.csv`` and ``agent.npz``. With ``eval_every`` a few
    deterministic episodes run on a separate environment every that many
    steps and land in ``evals.csv``; they do not touch the training streams.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trainer = SacTrainer(make_runner(cfg, mode, skill, recorded), cfg)
    ck = out_dir / "agent.npz"
    if resume:
        _require(ck, "agent checkpoint to resume")
        trainer.restore(ck)
    trainer.keep_log = keep_log
    log_path = out_dir / "runlog.csv"
    eval_path = out_dir / "evals.csv"
    append = resume and log_path.exists()
    eval_runner = make_runner(cfg, mode, skill, recorded) if eval_every else None
    next_eval = [(trainer.steps // eval_every + 1) * eval_every if eval_every else None]
    with open(log_path, "a" if append else "w", newline="") as fh, \
            open(eval_path, "a" if append and eval_path.exists() else "w", newline="") as efh:
        w = csv.writer(fh)
        ew = csv.writer(efh)
        if not append:
            w.writerow(RUNLOG_HEADER)
        if efh.tell() == 0:
            ew.writerow(EVAL_HEADER)

        def progress(tr, rec):
            for e in rec.log:
                w.writerow([e.episode, e.step, repr(e.reward), e.event, repr(e.wrench),
                            repr(e.kp_p), repr(e.kp_f), repr(e.s), int(e.refresh)])
            tr.log.clear()  # streamed to disk already
            if eval_runner is not None and tr.steps >= next_eval[0]:
                recs = evaluate_agent(eval_runner, tr.agent, eval_episodes, cfg.seed)
                ew.writerow([tr.steps, len(recs), repr(float(np.mean([r.total_reward for r in recs]))),
                             repr(sum(r.cause == "goal" for r in recs) / len(recs))])
                efh.flush()
                while next_eval[0] <= tr.steps:
                    next_eval[0] += eval_every

        trainer.train(steps, ck, checkpoint_every, progress)
    trainer.save(ck)
    write_curve(out_dir / "curve.csv", trainer.curve_steps, trainer.curve_rewards, cfg.ema_beta)
    with open(out_dir / "episodes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "steps", "return", "cause"])
        for e in trainer.episodes:
            w.writerow([e[0], e[1], repr(float(e[2])), e[3]])
    return trainer


def load_agent(path) -> SacAgent:
    return SacAgent.load(_require(path, "agent checkpoint"))[0]


def final_ema(rewards, beta: float, frac: float = 0.1) -> float:
    """Mean of the EMA-smoothed curve over its final ``frac`` of entries."""
    smooth = ema(rewards, beta)
    if len(smooth) == 0:
        return float("nan")
    k = max(1, int(round(frac * len(smooth))))
    return float(np.mean(smooth[-k:]))


def fail_safe_audit(runlog_path) -> dict:
    """Scan a run log: every over-limit step must end its episode with the penalty event."""
    over, unpunished, trailing = 0, 0, 0
    with open(runlog_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    last_step = {}
    for r in rows:
        last_step[r["episode"]] = max(last_step.get(r["episode"], -1), int(r["step"]))
    for r in rows:
        if float(r["wrench"]) > 1.0:
            over += 1
            if r["event"] != "force-violation":
                unpunished += 1
            if int(r["step"]) != last_step[r["episode"]]:
                trailing += 1
    return {"steps": len(rows), "over_limit": over, "without_penalty": unpunished,
            "not_terminal": trailing}
