"""Command-line entry point.

Exit codes: 0 success, 1 runtime/domain error, 2 usage error,
3 verification failure.

All randomness flows from explicit --seed flags. --threads caps the BLAS
thread pools (set before numpy is imported, which is why the heavy modules
are imported inside the command handlers); --threads 1 is the
bit-reproducible serial schedule.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_VERIFY_FAILED = 3

_OBJECTIVE_FLAGS = {
    "liv": "liv",
    "vip-i": "vip_i",
    "vip-l": "vip_l",
    "infonce": "infonce",
    "mm-vip": "multimodal_vip",
}


def _apply_threads(argv: list[str]) -> None:
    threads = "1"
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, threads)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="livkit",
        description="Synthetic-world vision-language value learning: data, "
                    "training, rewards, behavior cloning, planning, verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1,
                       help="BLAS thread cap; 1 = bit-reproducible serial schedule")

    p = sub.add_parser("gen-data", help="generate an annotated-video dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--policy", choices=("expert", "random"), required=True)
    p.add_argument("--horizon", type=int, default=40)
    p.add_argument("--tasks", default="0,1,2,3",
                   help="comma-separated task ids (expert task cycle / random-mode labels)")
    common(p)

    for name in ("train", "finetune"):
        p = sub.add_parser(name, help="run the training loop" if name == "train"
                           else "training loop initialized from a checkpoint")
        p.add_argument("--data", required=True)
        p.add_argument("--objective", choices=sorted(_OBJECTIVE_FLAGS), default="liv")
        p.add_argument("--out", required=True)
        p.add_argument("--steps", type=int, default=2000)
        p.add_argument("--batch", type=int, default=64)
        p.add_argument("--lr", type=float, default=1e-4)
        p.add_argument("--weight-decay", type=float, default=1e-3)
        p.add_argument("--gamma", type=float, default=0.98)
        p.add_argument("--eval-every", type=int, default=100)
        p.add_argument("--init", required=(name == "finetune"), default=None,
                       help="checkpoint to initialize from")
        p.add_argument("--k", type=int, default=32, help="embedding width for fresh models")
        p.add_argument("--p-degenerate", type=float, default=0.0)
        p.add_argument("--infonce-scale", choices=("one", "one-minus-gamma"), default="one")
        p.add_argument("--infonce-symmetric", action="store_true")
        common(p)

    p = sub.add_parser("eval-reward", help="emit cost curves and curve metrics")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--episodes", default="all",
                   help="'all', comma-separated ids, 'first:N', or 'last:N'")
    p.add_argument("--goal", choices=("image", "text", "both"), default="both")
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("bc", help="behavior cloning on frozen features")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--encoding", choices=("language", "one-hot"), default="language")
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("rollout", help="closed-loop policy evaluation")
    p.add_argument("--policy", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--episodes-per-task", type=int, default=25)
    p.add_argument("--horizon", type=int, default=40)
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("plan", help="reward-driven trajectory optimization suite")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--planner", choices=("mppi", "cem"), required=True)
    p.add_argument("--iterations", type=int, default=None,
                   help="default: 8 for mppi, 1 for cem")
    p.add_argument("--sequences", type=int, default=None,
                   help="default: 128 for mppi, 200 for cem")
    p.add_argument("--horizon", type=int, default=40)
    p.add_argument("--lambda", dest="temperature", type=float, default=0.5)
    p.add_argument("--noise-std", type=float, default=0.04)
    p.add_argument("--grip-noise-std", type=float, default=0.35)
    p.add_argument("--elite-frac", type=float, default=0.1)
    p.add_argument("--episodes-per-task", type=int, default=13)
    p.add_argument("--oracle-reward", action="store_true",
                   help="score with the ground-truth distance reward (sanity runs)")
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("verify", help="run the property suites")
    p.add_argument("--suite", choices=("prop1", "gradcheck", "invariants", "all"),
                   default="all")
    p.add_argument("--corrupt", action="store_true",
                   help="negative-control hook: corrupt a loss so checks must fail")
    p.add_argument("--out", default=None, help="write the JSON report here too")
    common(p)
    return parser


# -- handlers -----------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    from .data import GenConfig, generate_dataset, save_dataset
    from .manifest import write_run_manifest

    task_ids = tuple(int(t) for t in args.tasks.split(",") if t != "")
    config = GenConfig(episodes=args.episodes, policy=args.policy,
                       horizon=args.horizon, seed=args.seed, task_ids=task_ids)
    dataset = generate_dataset(config)
    save_dataset(dataset, args.out)
    write_run_manifest(args.out, "gen-data", config.to_dict(), {}, args.seed)
    print(f"wrote {len(dataset.videos)} episodes to {args.out}")
    return EXIT_OK


def _train_config(args):
    from .encoders import EncoderConfig
    from .objectives import LossConfig
    from .training import TrainConfig

    loss = LossConfig(
        gamma=args.gamma,
        infonce_outer_scale=args.infonce_scale.replace("-", "_"),
        infonce_symmetric=args.infonce_symmetric,
        p_degenerate=args.p_degenerate,
    )
    return TrainConfig(
        objective=_OBJECTIVE_FLAGS[args.objective],
        steps=args.steps,
        batch=args.batch,
        lr=args.lr,
        weight_decay=args.weight_decay,
        seed=args.seed,
        eval_every=args.eval_every,
        loss=loss,
        encoder=EncoderConfig(k=args.k),
        init_checkpoint=args.init,
    )


def _cmd_train(args) -> int:
    from .data import load_dataset
    from .manifest import fingerprint_dir, write_run_manifest
    from .training import train

    dataset = load_dataset(args.data)
    config = _train_config(args)
    result = train(dataset, config, out_dir=args.out)
    inputs = {"dataset": fingerprint_dir(args.data)}
    if args.init is not None:
        inputs["init_checkpoint"] = fingerprint_dir(args.init)
    write_run_manifest(args.out, "finetune" if args.init else "train",
                       config.to_dict(), inputs, args.seed)
    print(f"trained {config.steps} steps; final loss {result.metrics[-1]['loss']:.6f}; "
          f"checkpoint at {args.out}")
    return EXIT_OK


def _resolve_episodes(spec: str, count: int) -> list[int]:
    if spec == "all":
        return list(range(count))
    if spec.startswith("first:"):
        return list(range(min(int(spec.split(":")[1]), count)))
    if spec.startswith("last:"):
        n = min(int(spec.split(":")[1]), count)
        return list(range(count - n, count))
    ids = [int(t) for t in spec.split(",") if t != ""]
    for i in ids:
        if not 0 <= i < count:
            raise IndexError(f"unknown episode id {i} (dataset has {count})")
    return ids


def _cmd_eval_reward(args) -> int:
    import numpy as np

    from .data import load_dataset
    from .encoders import Model
    from .errors import MissingTextError
    from .manifest import canonical_json, fingerprint_dir, write_run_manifest
    from .reward import ImageGoal, TextGoal, cost_curve, curve_metrics

    model = Model.load(args.ckpt)
    dataset = load_dataset(args.data)
    try:
        episode_ids = _resolve_episodes(args.episodes, len(dataset.videos))
    except (IndexError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR

    goals = ("image", "text") if args.goal == "both" else (args.goal,)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    per_episode: dict = {}
    means: dict[str, list[float]] = {g: [] for g in goals}
    for i in episode_ids:
        video = dataset.videos[i]
        columns: dict[str, np.ndarray] = {}
        metrics: dict = {}
        for g in goals:
            if g == "image":
                curve = cost_curve(model, video.frames, ImageGoal(video.goal_frame))
            else:
                if not video.annotated:
                    raise MissingTextError(f"episode {i} has no annotation for a text goal")
                curve = cost_curve(model, video.frames, TextGoal(video.token_ids))
            columns[g] = curve
            metrics[g] = curve_metrics(curve)
            means[g].append(metrics[g]["spearman"])
        header = "frame," + ",".join(f"neg_cos_{g}_goal" for g in goals)
        lines = [header]
        for t in range(video.horizon):
            cells = [str(t)] + [format(float(columns[g][t]), ".17g") for g in goals]
            lines.append(",".join(cells))
        (out / f"ep_{i:06d}_curve.csv").write_text("\n".join(lines) + "\n")
        per_episode[str(i)] = metrics
    report = {
        "episodes": per_episode,
        "mean_spearman": {g: float(np.mean(v)) for g, v in means.items()},
        "goal": args.goal,
    }
    (out / "metrics.json").write_text(canonical_json(report) + "\n")
    write_run_manifest(out, "eval-reward",
                       {"episodes": args.episodes, "goal": args.goal},
                       {"checkpoint": fingerprint_dir(args.ckpt),
                        "dataset": fingerprint_dir(args.data)},
                       args.seed)
    print(canonical_json(report["mean_spearman"]))
    return EXIT_OK


def _cmd_bc(args) -> int:
    from .data import load_dataset
    from .encoders import Model
    from .manifest import fingerprint_dir, write_run_manifest
    from .policy import BCConfig, bc_train

    model = Model.load(args.ckpt)
    dataset = load_dataset(args.data)
    config = BCConfig(steps=args.steps, batch=args.batch, lr=args.lr, seed=args.seed,
                      encoding=args.encoding.replace("-", "_"))
    policy, log = bc_train(model, dataset, config)
    policy.save(args.out, extra_metadata={"bc_config": config.to_dict()})
    lines = ["step,mse"] + [f"{row['step']},{format(row['mse'], '.17g')}" for row in log]
    (Path(args.out) / "bc_loss.csv").write_text("\n".join(lines) + "\n")
    write_run_manifest(args.out, "bc", config.to_dict(),
                       {"checkpoint": fingerprint_dir(args.ckpt),
                        "dataset": fingerprint_dir(args.data)},
                       args.seed)
    print(f"final bc mse {log[-1]['mse']:.6g}; policy at {args.out}")
    return EXIT_OK


def _cmd_rollout(args) -> int:
    from .encoders import Model
    from .manifest import canonical_json, fingerprint_dir, write_run_manifest
    from .policy import Policy, evaluate_policy

    model = Model.load(args.ckpt)
    policy = Policy.load(args.policy)
    report = evaluate_policy(policy, model, episodes_per_task=args.episodes_per_task,
                             seed=args.seed, horizon=args.horizon)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(canonical_json(report) + "\n")
    write_run_manifest(out, "rollout",
                       {"episodes_per_task": args.episodes_per_task, "horizon": args.horizon},
                       {"checkpoint": fingerprint_dir(args.ckpt),
                        "policy": fingerprint_dir(args.policy)},
                       args.seed)
    print(canonical_json(report))
    return EXIT_OK


def _cmd_plan(args) -> int:
    from . import world
    from .encoders import Model
    from .manifest import canonical_json, fingerprint_dir, write_run_manifest
    from .planner import (
        default_config,
        oracle_scorer_factory,
        run_planning_suite,
        text_goal_scorer_factory,
    )

    overrides: dict = {"horizon": args.horizon, "temperature": args.temperature,
                       "noise_std": args.noise_std, "grip_noise_std": args.grip_noise_std,
                       "elite_frac": args.elite_frac, "seed": args.seed}
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.sequences is not None:
        overrides["num_sequences"] = args.sequences
    cfg = default_config(args.planner, **overrides)

    inputs = {}
    if args.oracle_reward:
        factory = oracle_scorer_factory()
    else:
        if args.ckpt is None:
            print("error: --ckpt is required unless --oracle-reward is set", file=sys.stderr)
            return EXIT_USAGE
        model = Model.load(args.ckpt)
        factory = text_goal_scorer_factory(model)
        inputs["checkpoint"] = fingerprint_dir(args.ckpt)

    report = run_planning_suite(factory, list(world.TASKS), cfg,
                                episodes_per_task=args.episodes_per_task, seed=args.seed)
    report["reward"] = "oracle" if args.oracle_reward else "learned_text_goal"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(canonical_json(report) + "\n")
    write_run_manifest(out, "plan", cfg.to_dict(), inputs, args.seed)
    print(canonical_json({"mean": report["mean"], "per_task": report["per_task"]}))
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .manifest import canonical_json
    from .verify import run_suites

    report = run_suites(args.suite, seed=args.seed, corrupt=args.corrupt)
    text = canonical_json(report) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK if report["passed"] else EXIT_VERIFY_FAILED


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "finetune": _cmd_train,
    "eval-reward": _cmd_eval_reward,
    "bc": _cmd_bc,
    "rollout": _cmd_rollout,
    "plan": _cmd_plan,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    _apply_threads(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_USAGE

    from .errors import LivkitError

    try:
        return _HANDLERS[args.command](args)
    except LivkitError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (FileNotFoundError, IndexError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
