"""Command line front end: train, bench, eval.

Config files are YAML with optional `env`, `ppo`, and `randomization`
sections; unknown keys are rejected with exit code 2 so typos fail loudly
instead of silently falling back to defaults.
"""

import argparse
import csv
import dataclasses
import os
import sys
import time

import numpy as np
import yaml

from .envs import EnvConfig, TASKS, make_env
from .ppo import PPO, PPOConfig, DigestMismatch, train
from .randomize import RandomizationSchedule


class ConfigError(Exception):
    pass


_ENV_KEYS = {f.name for f in dataclasses.fields(EnvConfig)}
_PPO_KEYS = {f.name for f in dataclasses.fields(PPOConfig)}


def load_config(path):
    try:
        with open(path) as f:
            cfg = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed config: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a mapping")
    for section in cfg:
        if section not in ("env", "ppo", "randomization"):
            raise ConfigError(f"unknown config section {section!r}")
    for key in cfg.get("env", {}):
        if key not in _ENV_KEYS:
            raise ConfigError(f"unknown config key 'env.{key}'")
    for key in cfg.get("ppo", {}):
        if key not in _PPO_KEYS:
            raise ConfigError(f"unknown config key 'ppo.{key}'")
    if "randomization" in cfg:
        try:
            RandomizationSchedule.from_config(cfg["randomization"])
        except (ValueError, KeyError, TypeError) as e:
            raise ConfigError(f"bad randomization config: {e}") from None
    return cfg


def build_env(args, cfg):
    overrides = dict(cfg.get("env", {}))
    overrides["num_envs"] = args.num_envs
    overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    else:
        overrides.setdefault("workers", default_workers(args.num_envs))
    overrides["workers"] = min(overrides["workers"], args.num_envs)
    if "hidden" in cfg.get("ppo", {}):
        cfg["ppo"]["hidden"] = tuple(cfg["ppo"]["hidden"])
    env = make_env(args.env, EnvConfig(), **overrides)
    sched = cfg.get("randomization")
    if sched and env.randomizer is not None:
        env.randomizer.schedule = RandomizationSchedule.from_config(sched)
    return env


def default_workers(num_envs):
    return max(1, min(os.cpu_count() or 1, num_envs))


def build_agent(env, cfg, seed):
    ppo_cfg = PPOConfig(**cfg.get("ppo", {}))
    return PPO(env.obs_dim, env.act_dim, ppo_cfg, seed=seed)


# ---------------------------------------------------------------- commands


def cmd_train(args, cfg):
    env = build_env(args, cfg)
    agent = build_agent(env, cfg, args.seed)
    os.makedirs(args.out, exist_ok=True)
    metrics = os.path.join(args.out, "metrics.csv")
    checkpoint = os.path.join(args.out, "checkpoint.bin")

    def log(row):
        print(f"iter {row['iteration']:5d}  steps {row['env_steps']:>10d}  "
              f"reward {row['mean_reward']:+.4f}  kl {row['kl']:.5f}  "
              f"lr {row['lr']:.2e}", flush=True)

    try:
        train(env, agent, iterations=args.iterations, horizon=args.horizon,
              metrics_path=metrics, checkpoint_path=checkpoint, log=log)
    finally:
        env.close()
    print(f"wrote {metrics} and {checkpoint}")
    return 0


def _parse_env_counts(spec):
    try:
        counts = [int(tok) for tok in str(spec).split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"bad --num-envs list {spec!r}") from None
    if not counts or any(c < 1 for c in counts):
        raise ConfigError("--num-envs entries must be positive")
    return counts


def cmd_bench(args, cfg):
    counts = _parse_env_counts(args.num_envs)
    n_min = min(counts)
    rows = []
    for n in counts:
        # constant experience: shrink the horizon as the batch grows
        horizon = max(1, (args.base_horizon * n_min) // n)
        ns = argparse.Namespace(**{**vars(args), "num_envs": n})
        env = build_env(ns, cfg)
        agent = (build_agent(env, cfg, args.seed)
                 if args.with_policy else None)
        rng = np.random.default_rng(args.seed)
        decim = env.config.decimation
        obs = env.reset()
        for _ in range(args.warmup):
            obs = env.step(np.zeros((n, env.act_dim))).obs
        t0 = time.perf_counter()
        for _ in range(horizon):
            if agent is not None:
                action, _, _ = agent.net.act(obs, rng)
            else:
                action = rng.uniform(-1, 1, (n, env.act_dim))
            obs = env.step(action).obs
        wall = time.perf_counter() - t0
        env.close()
        rows.append({
            "num_envs": n,
            "horizon": horizon,
            "control_steps_per_sec": horizon * n / wall,
            "sim_steps_per_sec": horizon * n * decim / wall,
            "wall_clock_s": wall,
        })
        print(f"num_envs {n:6d}  horizon {horizon:5d}  "
              f"control fps {rows[-1]['control_steps_per_sec']:12.1f}  "
              f"sim fps {rows[-1]['sim_steps_per_sec']:12.1f}  "
              f"wall {wall:.3f}s", flush=True)
    if args.out:
        os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
        with open(args.out, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
        print(f"wrote {args.out}")
    return 0


def cmd_eval(args, cfg):
    if args.episodes < 1:
        raise ConfigError("--episodes must be positive")
    env = build_env(args, cfg)
    agent = build_agent(env, cfg, args.seed)
    agent.load(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    obs = env.reset()
    E = env.config.num_envs
    returns = []
    acc = np.zeros(E)
    try:
        while len(returns) < args.episodes:
            action, _, _ = agent.net.act(obs, rng, deterministic=True)
            out = env.step(action)
            acc += out.reward
            for e in np.nonzero(out.done)[0]:
                returns.append(acc[e])
                acc[e] = 0.0
            obs = out.obs
    finally:
        env.close()
    returns = np.asarray(returns[:args.episodes])
    print(f"episodes {len(returns)}  mean return {returns.mean():+.4f}  "
          f"std {returns.std():.4f}")
    return 0


# -------------------------------------------------------------------- main


def make_parser():
    p = argparse.ArgumentParser(prog="batchsim")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--env", required=True, choices=sorted(TASKS))
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", default=None)
        sp.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: logical cores)")

    t = sub.add_parser("train", help="train a PPO policy")
    common(t)
    t.add_argument("--num-envs", type=int, default=256)
    t.add_argument("--iterations", type=int, default=100)
    t.add_argument("--horizon", type=int, default=16)
    t.add_argument("--out", default="runs/latest")
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("bench", help="throughput sweep")
    common(b)
    b.add_argument("--num-envs", default="64,256,1024",
                   help="comma-separated batch sizes")
    b.add_argument("--base-horizon", type=int, default=256,
                   help="control steps at the smallest batch size")
    b.add_argument("--warmup", type=int, default=5)
    b.add_argument("--with-policy", action="store_true",
                   help="include policy inference in the loop")
    b.add_argument("--out", default=None, help="CSV output path")
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("eval", help="roll out a checkpoint")
    common(e)
    e.add_argument("--num-envs", type=int, default=16)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else {}
        return args.func(args, cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DigestMismatch as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return 2
    except (TypeError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
