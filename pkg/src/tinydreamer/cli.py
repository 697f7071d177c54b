"""Command line entry points: train, eval, gradcheck, saliency, bench.

Heavy modules are imported lazily inside each subcommand so that thread
limits can be pinned before numpy loads. Every failure exits nonzero with a
single machine-parseable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")


def _emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True))


def cmd_train(args) -> int:
    from .config import RunConfig
    from .trainer import Trainer

    config = RunConfig.load(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.steps is not None:
        overrides["total_steps"] = args.steps
    if args.objective is not None:
        overrides["objective"] = args.objective
    if args.env is not None:
        overrides["env"] = args.env
    if overrides:
        config = config.replace(**overrides)
    trainer = Trainer(config, args.out)
    if args.out:
        config.save(os.path.join(args.out, "config.json"))
    trainer.train()
    stats = trainer.evaluate()
    _emit(
        {
            "command": "train",
            "env_steps": trainer.env_steps,
            "grad_steps": trainer.grad_steps,
            "out": args.out,
            **{f"eval/{k}": v for k, v in stats.items()},
        }
    )
    return 0


def cmd_eval(args) -> int:
    from .envs import EnvSpec
    from .trainer import evaluate_policy, load_params

    store, config = load_params(args.checkpoint)
    env_spec = EnvSpec.parse(args.env)
    stats = evaluate_policy(store, config, env_spec, args.episodes, args.seed)
    _emit({"command": "eval", "env": args.env, **stats})
    return 0


def cmd_gradcheck(args) -> int:
    from . import gradchecks

    modules = gradchecks.available() if args.module == "all" else [args.module]
    failed = []
    for module in modules:
        for label, report in gradchecks.run_module(module, args.instances).items():
            status = "PASS" if report.passed else "FAIL"
            print(f"{module}/{label}: {status} (max rel err {report.max_error:.3e})")
            if not report.passed:
                failed.append(f"{module}/{label}")
    if failed:
        raise RuntimeError(f"gradient check failed: {failed}")
    _emit({"command": "gradcheck", "modules": modules, "status": "pass"})
    return 0


def cmd_saliency(args) -> int:
    from .analysis import occlusion_saliency, save_saliency
    from .envs import EnvSpec, make_env
    from .trainer import build_specs, load_params

    store, config = load_params(args.checkpoint)
    env_spec = EnvSpec.parse(args.env)
    _, wspec, aspec = build_specs(config)
    if env_spec.obs_dim != wspec.obs_dim or env_spec.action_dim != aspec.dim:
        raise ValueError(
            f"checkpoint/env mismatch: model expects obs {wspec.obs_dim}/action {aspec.dim}, "
            f"env provides obs {env_spec.obs_dim}/action {env_spec.action_dim}"
        )
    env = make_env(env_spec, seed=args.seed)
    obs = env.reset()
    params = store.bind(["world", "actor"], frozen=True)
    smap = occlusion_saliency(params, wspec, aspec, obs, args.patch, args.stride, args.fill)
    save_saliency(smap, args.out)
    top = int(smap.scores.argmax())
    _emit(
        {
            "command": "saliency",
            "out": args.out,
            "max_score": float(smap.scores.max()),
            "argmax_row": top // smap.scores.shape[1],
            "argmax_col": top % smap.scores.shape[1],
        }
    )
    return 0


def cmd_bench(args) -> int:
    from .config import RunConfig

    if args.kernels:
        from . import backend

        results = backend.benchmark()
        _emit({"command": "bench", "mode": "kernels", "compiled_available": backend.implementations()[0] is not None, "results": results})
        return 0
    from .trainer import bench_grad_steps

    config = RunConfig.load(args.config)
    result = bench_grad_steps(config, steps=args.steps)
    _emit({"command": "bench", "mode": "grad_steps", **result})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tinydreamer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an agent")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--objective", choices=["bt", "recon", "none"])
    p.add_argument("--env")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--module", default="all")
    p.add_argument("--instances", type=int, default=3)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("saliency", help="occlusion saliency for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patch", type=int, default=3)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--fill", type=float, default=0.0)
    p.set_defaults(fn=cmd_saliency)

    p = sub.add_parser("bench", help="wall-time benchmarks")
    p.add_argument("--config")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--kernels", action="store_true", help="compare kernel backends instead")
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "bench" and not args.kernels and not args.config:
        print(json.dumps({"error": "bench requires --config (or --kernels)"}), file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except Exception as exc:  # single-line machine-parseable failure
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
