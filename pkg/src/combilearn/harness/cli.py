"""``combilearn`` command line.

Artifacts land under ``--root`` (default: ``$COMBILEARN_ROOT`` or
``./artifacts``). Errors exit non-zero with one line on stderr of the form
``combilearn: error: <reason>``.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from ..domain import ExperimentConfig
from ..metrics import read_table
from . import pipeline as pl


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "env", None):
        changes["env_variant"] = args.env
    if getattr(args, "variant", None):
        changes["action_variant"] = args.variant
    return cfg.replace(**changes) if changes else cfg


def _out(args, default: str) -> Path:
    p = Path(args.out) if args.out else pl.artifact_root(args.root) / default
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _split(text: str):
    try:
        a, b = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"split must look like 8:2, got {text!r}") from None
    return a, b


# ---------------------------------------------------------------------------
# subcommands

def cmd_demo_gen(args) -> None:
    cfg = _config(args)
    out = _out(args, "demos")
    ds = pl.demo_gen(cfg, out, args.count, args.split)
    print(f"wrote {len(ds.trajectories)} demos ({len(ds.train)} train / "
          f"{len(ds.validation)} validation) to {out}")


def cmd_relabel(args) -> None:
    cfg = _config(args)
    out = _out(args, f"{args.kind}_dataset.csv")
    n = pl.relabel(cfg, args.demos, out, args.kind)
    print(f"wrote {n} rows to {out}")


def cmd_train_il(args) -> None:
    cfg = _config(args)
    if args.max_steps is not None:
        cfg.imitation.max_steps = args.max_steps
    out = _out(args, f"{args.kind}.npz")
    pol = pl.train_il(cfg, args.demos, out, args.kind)
    print(f"trained {args.kind}: {pol.n_epochs_} epochs, {pol.n_steps_} steps, "
          f"best validation loss {min(pol.val_loss_):.3e}; checkpoint {out}")


def cmd_train_rl(args) -> None:
    cfg = _config(args)
    skill = pl.load_skill(args.skill, "hgcil") if args.mode == "cl" and args.skill else None
    recorded = None
    if args.mode == "recorded":
        if not args.demos:
            raise pl.PipelineError("recorded mode needs --demos")
        recorded = pl.load_demos(args.demos).train[0]
    out = _out(args, f"rl_{args.mode}")
    tr = pl.train_rl(cfg, args.mode, args.steps, out, skill, recorded,
                     args.checkpoint_every, args.resume, eval_every=args.eval_every,
                     eval_episodes=args.eval_episodes)
    causes = [e[3] for e in tr.episodes]
    print(f"{args.mode}: {tr.steps} steps, {len(causes)} episodes, "
          f"{causes.count('goal')} goal events; outputs in {out}")


def cmd_eval(args) -> None:
    cfg = _config(args)
    out = _out(args, "eval")
    if args.policy:
        pol = pl.load_skill(args.policy)
        rows = pl.eval_skill(cfg, pol, args.trials, no_force=args.no_force,
                             protocol=args.protocol)
        name = f"{pol.kind}"
    elif args.agent:
        agent = pl.load_agent(args.agent)
        skill = pl.load_skill(args.skill, "hgcil") if args.mode == "cl" and args.skill else None
        recorded = pl.load_demos(args.demos).train[0] if args.mode == "recorded" else None
        if args.mode == "cl" and skill is None:
            raise pl.PipelineError("cl evaluation needs --skill")
        _, rows = pl.eval_agent(cfg, agent, args.mode, skill, recorded, args.trials,
                                protocol=args.protocol)
        name = f"agent_{args.mode}"
    else:
        raise pl.PipelineError("eval needs --policy or --agent")
    paths = pl.write_eval(out, rows, cfg, name)
    print(f"wrote {paths['trials']} and {paths['aggregate']}")


def _plot_curve(path: Path, out_dir: Path) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "combilearn"  # stable element ids
    import matplotlib.pyplot as plt

    cols = read_table(path, required=["step"])
    steps = np.array(cols["step"], dtype=float)
    outputs = []
    for name in cols:
        if name == "step":
            continue
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(steps, np.array(cols[name], dtype=float), lw=1)
        ax.set_xlabel("environment step")
        ax.set_ylabel(name)
        fig.tight_layout()
        target = out_dir / f"{path.parent.name}_{path.stem}_{name}.svg"
        fig.savefig(target, metadata={"Date": None})
        plt.close(fig)
        outputs.append(target)
    return outputs


def _plot_aggregates(paths: list[Path], out_dir: Path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "combilearn"  # stable element ids
    import matplotlib.pyplot as plt

    tables = [(p.stem.replace("_aggregate", ""),
               read_table(p, required=["group", "mean_C"])) for p in paths]
    groups = [g for g in tables[0][1]["group"] if g != "all"]
    fig, ax = plt.subplots(figsize=(5, 3))
    width = 0.8 / len(tables)
    for k, (label, cols) in enumerate(tables):
        lookup = dict(zip(cols["group"], cols["mean_C"]))
        ax.bar(np.arange(len(groups)) + k * width, [float(lookup.get(g, "nan")) for g in groups],
               width, label=label)
    ax.set_xticks(np.arange(len(groups)) + 0.4 - width / 2)
    ax.set_xticklabels(groups)
    ax.set_ylabel("mean score C")
    ax.legend(fontsize=7)
    fig.tight_layout()
    target = out_dir / "scores.svg"
    fig.savefig(target, metadata={"Date": None})
    plt.close(fig)
    return target


def plot_files(files, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs, aggregates = [], []
    for f in map(Path, files):
        if not f.exists():
            raise pl.PipelineError(f"missing table: {f}")
        header = read_table(f)
        if "mean_C" in header:
            aggregates.append(f)
        elif "step" in header:
            outputs.extend(_plot_curve(f, out_dir))
        else:
            raise ValueError(f"{f}: missing column(s) step or mean_C")
    if aggregates:
        outputs.append(_plot_aggregates(aggregates, out_dir))
    return outputs


def cmd_plot(args) -> None:
    out = Path(args.out) if args.out else pl.artifact_root(args.root) / "plots"
    for p in plot_files(args.files, out):
        print(p)


def reproduce(cfg: ExperimentConfig, out_dir, rl_steps: int = 30_000, il_steps: int | None = None,
              trials: int = 20, modes=("cl", "vanilla"), quiet: bool = False) -> pl.RunManifest:
    """Demo generation through IL comparison and CL/vanilla RL, all from one seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if il_steps is not None:
        cfg.imitation.max_steps = il_steps
    say = (lambda *a: None) if quiet else (lambda *a: print(*a, flush=True))
    extra = {"rl_steps": rl_steps, "il_steps": il_steps, "trials": trials, "modes": list(modes)}
    man = pl.RunManifest(run_id=pl.config_hash(cfg, extra)[:12], config=cfg.to_dict(), base=str(out),
                         input_hash=pl.config_hash(cfg, extra))
    cfg.to_json(out / "config.json")
    man.add("config", out / "config.json")

    demos = out / "demos"
    pl.demo_gen(cfg, demos)
    for f in sorted(demos.iterdir()):
        man.add(f"demos/{f.name}", f)
    say("demos written")

    skills = {}
    aggregates = []
    for kind in ("hgcil", "gcbc-flat", "bc"):
        ck = out / "il" / f"{kind}.npz"
        ck.parent.mkdir(parents=True, exist_ok=True)
        skills[kind] = pl.train_il(cfg, demos, ck, kind)
        man.add(f"il/{kind}", ck)
        man.add(f"il/{kind}.loss", ck.with_suffix(".loss.csv"))
        rows = pl.eval_skill(cfg, skills[kind], trials, no_force=True)
        paths = pl.write_eval(out / "eval", rows, cfg, kind)
        aggregates.append(paths["aggregate"])
        man.add(f"eval/{kind}_trials", paths["trials"])
        man.add(f"eval/{kind}_aggregate", paths["aggregate"])
        say(f"{kind}: trained and evaluated")

    curves = []
    for mode in modes:
        run_dir = out / f"rl_{mode}"
        tr = pl.train_rl(cfg, mode, rl_steps, run_dir, skills["hgcil"] if mode == "cl" else None,
                         pl.load_demos(demos).train[0] if mode == "recorded" else None)
        _, rows = pl.eval_agent(cfg, tr.agent, mode, skills["hgcil"], pl.load_demos(demos).train[0],
                                trials)
        paths = pl.write_eval(run_dir, rows, cfg, "agent")
        for name in ("curve.csv", "episodes.csv", "runlog.csv", "agent.npz"):
            man.add(f"rl_{mode}/{name}", run_dir / name)
        man.add(f"rl_{mode}/agent_trials", paths["trials"])
        man.add(f"rl_{mode}/agent_aggregate", paths["aggregate"])
        curves.append(run_dir / "curve.csv")
        say(f"{mode}: {tr.steps} steps")

    for p in plot_files(curves + aggregates, out / "plots"):
        man.add(f"plots/{p.name}", p)
    man.finished = time.time()
    man.save(out / "manifest.json")
    return man


def cmd_reproduce(args) -> None:
    if args.manifest:
        man = pl.RunManifest.load(pl._require(args.manifest, "manifest"))
        cfg = ExperimentConfig.from_dict(man.config)
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
    else:
        cfg = _config(args)
    out = Path(args.out) if args.out else pl.artifact_root(args.root) / "reproduce"
    man = reproduce(cfg, out, args.rl_steps, args.il_steps, args.trials)
    print(f"run {man.run_id}: {len(man.artifacts)} artifacts, manifest {out / 'manifest.json'}")


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="combilearn",
                                description="Imitation-guided force-control learning on a planar "
                                            "insertion simulator.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--root", help=f"artifact root (default ${pl.ROOT_ENV} or ./artifacts)")
    common.add_argument("--out", help="output path (file or directory)")
    common.add_argument("--env", choices=["l-insertion", "friction-channel"])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("demo-gen", parents=[common], help="write synthetic demonstrations")
    s.add_argument("--count", type=int)
    s.add_argument("--split", type=_split, help="train:validation, e.g. 8:2")
    s.set_defaults(func=cmd_demo_gen)

    s = sub.add_parser("relabel", parents=[common], help="write the relabeled training table")
    s.add_argument("--demos", required=True)
    s.add_argument("--kind", default="hgcil", choices=["hgcil", "gcbc-flat", "flat", "bc"])
    s.set_defaults(func=cmd_relabel)

    s = sub.add_parser("train-il", parents=[common], help="train a skill policy or baseline")
    s.add_argument("--demos", required=True)
    s.add_argument("--kind", default="hgcil", choices=list(pl.POLICY_KINDS))
    s.add_argument("--max-steps", type=int)
    s.set_defaults(func=cmd_train_il)

    s = sub.add_parser("train-rl", parents=[common], help="train the SAC force-control agent")
    s.add_argument("--mode", default="cl", choices=["cl", "vanilla", "recorded"])
    s.add_argument("--variant", choices=["PL-6", "PL-8", "PL-10", "PL-12"])
    s.add_argument("--skill", help="hgcil checkpoint (cl mode)")
    s.add_argument("--demos", help="demo directory (recorded mode)")
    s.add_argument("--steps", type=int, default=30_000)
    s.add_argument("--checkpoint-every", type=int, default=0)
    s.add_argument("--resume", action="store_true")
    s.add_argument("--eval-every", type=int, default=5000,
                   help="steps between evaluation rounds (0 disables)")
    s.add_argument("--eval-episodes", type=int, default=5)
    s.set_defaults(func=cmd_train_rl)

    s = sub.add_parser("eval", parents=[common], help="evaluate a policy or agent")
    s.add_argument("--policy", help="skill-policy checkpoint")
    s.add_argument("--agent", help="agent checkpoint")
    s.add_argument("--mode", default="cl", choices=["cl", "vanilla", "recorded"])
    s.add_argument("--variant", choices=["PL-6", "PL-8", "PL-10", "PL-12"])
    s.add_argument("--skill")
    s.add_argument("--demos")
    s.add_argument("--trials", type=int, default=20)
    s.add_argument("--protocol", default="perturbed-starts", choices=["perturbed-starts", "single"])
    s.add_argument("--no-force", action="store_true",
                   help="leave contact out and use the proportional mover")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("plot", parents=[common], help="render curve/score tables as SVG")
    s.add_argument("files", nargs="+")
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("reproduce", parents=[common], help="run the whole pipeline")
    s.add_argument("--manifest", help="rerun the config stored in a manifest")
    s.add_argument("--rl-steps", type=int, default=30_000)
    s.add_argument("--il-steps", type=int)
    s.add_argument("--trials", type=int, default=20)
    s.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (pl.PipelineError, ValueError, FileNotFoundError, RuntimeError) as exc:
        reason = " ".join(str(exc).split())
        print(f"combilearn: error: {reason}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
