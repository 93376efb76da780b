"""Command-line interface for the pipeline.

Commands mirror the pipeline stages: gen-data, train-reward, train-policy,
optimize, evaluate, benchmark.  All commands resolve settings the same way:
profile defaults, then the INI file given with --config, then --seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .actionopt import optimize_action
from .config import default_config_text, load_config
from .core import derive_seed, load_dataset, rng_from, save_dataset
from .evaluate import clipped_ips_estimate, dm_estimate, ips_estimate, run_benchmark
from .policy import initialize_policy, load_policy, oppg_train, sample_actions, save_policy
from .rewardmodel import augment_counterfactual, load_ensemble, save_ensemble, train_ensemble
from .synthenv import generate_dataset, sample_contexts

__all__ = ["main"]

# stage sub-stream keys, matching the ones run_benchmark uses so CLI-built
# pieces reproduce the corresponding benchmark stages
_K_DATA, _K_AUGMENT, _K_ENSEMBLE, _K_POLICY_INIT, _K_OPPG = 1, 3, 4, 5, 6


def _add_common(sub: argparse.ArgumentParser, *, out_required: bool) -> None:
    sub.add_argument("--config", metavar="PATH", default=None,
                     help="INI run config; built-in defaults when omitted")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the pipeline seed from [eval]")
    sub.add_argument("--profile", choices=("fast", "full"), default="fast",
                     help="size profile supplying the defaults")
    sub.add_argument("--out", metavar="DIR", required=out_required,
                     default=None, help="output directory")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="offbandit",
        description="Offline contextual-bandit pipeline on a synthetic benchmark.",
    )
    parser.add_argument("--print-config", action="store_true",
                        help="print the default config for --profile and exit")
    parser.add_argument("--profile", choices=("fast", "full"), default="fast",
                        help=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("gen-data", help="generate a logged dataset CSV")
    _add_common(p, out_required=True)
    p.add_argument("--records", type=int, default=None,
                   help="record count (default: train_records + heldout)")

    p = sub.add_parser("train-reward", help="fit the reward ensemble on logged data")
    _add_common(p, out_required=True)
    p.add_argument("--data", metavar="CSV", required=True, help="logged dataset")

    p = sub.add_parser("train-policy", help="train the stochastic policy on logged data")
    _add_common(p, out_required=True)
    p.add_argument("--data", metavar="CSV", required=True, help="logged dataset")

    p = sub.add_parser("optimize", help="pick an action for one context")
    _add_common(p, out_required=False)
    p.add_argument("--model", metavar="DIR", required=True, help="ensemble directory")
    p.add_argument("--context", default=None,
                   help="comma-separated context vector; omit to draw one")
    p.add_argument("--context-seed", type=int, default=0,
                   help="seed for the drawn context when --context is omitted")
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--beta", type=float, default=None,
                   help="uncertainty penalty (default: [ga] beta)")
    p.add_argument("--policy", metavar="JSON", default=None,
                   help="trained policy; switches to policy-initialized search")

    p = sub.add_parser("evaluate", help="off-policy estimates on a logged dataset")
    _add_common(p, out_required=False)
    p.add_argument("--data", metavar="CSV", required=True, help="logged dataset")
    p.add_argument("--model", metavar="DIR", default=None,
                   help="ensemble directory; adds the logged-actions DM estimate")
    p.add_argument("--policy", metavar="JSON", default=None,
                   help="policy file; adds IPS and clipped-IPS estimates")

    p = sub.add_parser("benchmark", help="run the full pipeline and write the report")
    _add_common(p, out_required=True)
    return parser


def _load(args):
    return load_config(args.config, profile=args.profile, seed=args.seed)


def _say(message: str) -> None:
    print(message)


def _cmd_gen_data(args) -> int:
    cfg = _load(args)
    env = cfg.make_env()
    n = args.records if args.records is not None else cfg.train_records + cfg.heldout
    data = generate_dataset(env, n, derive_seed(cfg.seed, _K_DATA))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "dataset.csv"
    save_dataset(data, path)
    _say(f"wrote {path} ({data.size} records, {env.context_dim} context dims, "
         f"{env.space.n_dims} action dims)")
    return 0


def _cmd_train_reward(args) -> int:
    cfg = _load(args)
    data = load_dataset(args.data, cfg.space, allow_sentinel=True)
    if cfg.augment_enabled:
        before = data.size
        data = augment_counterfactual(data, cfg.augment, derive_seed(cfg.seed, _K_AUGMENT))
        _say(f"augmented {before} -> {data.size} records")
    ensemble = train_ensemble(
        data, cfg.members, cfg.reward_train,
        seed=derive_seed(cfg.seed, _K_ENSEMBLE), hidden=cfg.reward_hidden,
    )
    out = Path(args.out) / "ensemble"
    save_ensemble(ensemble, out)
    _say(f"wrote {out} ({cfg.members} members, hidden {list(cfg.reward_hidden)})")
    return 0


def _cmd_train_policy(args) -> int:
    cfg = _load(args)
    data = load_dataset(args.data, cfg.space, allow_sentinel=True)
    policy0 = initialize_policy(
        cfg.space, cfg.context_dim, seed=derive_seed(cfg.seed, _K_POLICY_INIT),
        hidden=cfg.policy_hidden, init_width=cfg.policy_init_width,
    )
    policy, trace = oppg_train(
        policy0, data, replace(cfg.oppg, seed=derive_seed(cfg.seed, _K_OPPG))
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "policy.json"
    save_policy(policy, path)
    values = trace["batch_value"]
    _say(f"wrote {path} (batch objective {values[0]:.4f} -> {values[-1]:.4f} "
         f"over {trace['updates']} updates)")
    return 0


def _cmd_optimize(args) -> int:
    cfg = _load(args)
    ensemble = load_ensemble(Path(args.model))
    if args.context is not None:
        s = np.asarray([float(v) for v in args.context.split(",")], dtype=float)
        if s.size != ensemble.context_dim:
            raise SystemExit(
                f"context has {s.size} values, model expects {ensemble.context_dim}"
            )
    else:
        s = sample_contexts(cfg.make_env(), 1, args.context_seed)[0]
    policy = load_policy(args.policy) if args.policy else None
    ga = cfg.ga_config(
        restarts=args.restarts, seed=cfg.seed, beta=args.beta,
        init_source="policy" if policy is not None else "uniform",
    )
    action, value, diagnostics = optimize_action(ensemble, s, ga, policy=policy)
    doc = {
        "context": [float(v) for v in s],
        "action": [float(v) for v in action],
        "predicted_value": float(value),
        "diagnostics": diagnostics,
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    _say(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "decision.json").write_text(text + "\n", encoding="utf-8")
        _say(f"wrote {out / 'decision.json'}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _load(args)
    if args.model is None and args.policy is None:
        raise SystemExit("evaluate needs --model and/or --policy")
    data = load_dataset(args.data, cfg.space, allow_sentinel=True)
    doc: dict = {"records": data.size}
    if args.model:
        ensemble = load_ensemble(Path(args.model))
        logged = iter(data.actions)
        mean, _ = dm_estimate(ensemble, data.contexts, lambda s: next(logged))
        doc["logged_actions_dm"] = mean
        _say(f"logged-actions DM      {mean:+.4f}")
    if args.policy:
        policy = load_policy(args.policy)
        est, se = ips_estimate(policy, data)
        doc["ips"] = {"estimate": est, "standard_error": se}
        _say(f"IPS                    {est:+.4f} (SE {se:.4f})")
        doc["clipped_ips"] = []
        for m in cfg.m_grid:
            est, se = clipped_ips_estimate(policy, data, m)
            doc["clipped_ips"].append({"m": m, "estimate": est, "standard_error": se})
            _say(f"clipped IPS (M={m:g})   {est:+.4f} (SE {se:.4f})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "evaluation.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        _say(f"wrote {path}")
    return 0


def _cmd_benchmark(args) -> int:
    cfg = _load(args)
    result = run_benchmark(cfg, args.out, progress=lambda m: print(m, file=sys.stderr))
    _say(f"{'method':<22} {'pred TP':>9} {'true TP':>9} {'sigma':>7}")
    for rep in result.reports:
        _say(f"{rep.method:<22} {rep.predicted_mean_tp:>9.4f} "
             f"{rep.true_mean_tp:>9.4f} {rep.mean_sigma:>7.4f}")
    _say(f"report written to {result.out_dir}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-reward": _cmd_train_reward,
    "train-policy": _cmd_train_policy,
    "optimize": _cmd_optimize,
    "evaluate": _cmd_evaluate,
    "benchmark": _cmd_benchmark,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        print(default_config_text(args.profile), end="")
        return 0
    if args.command is None:
        parser.print_help()
        return 2
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
