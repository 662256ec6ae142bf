"""Command line front end.

    flowlab train  CONFIG            run an experiment into [output] directory
    flowlab theory [flags]           run the verification checks, print a table
    flowlab target CONFIG            enumerate the target distribution
    flowlab dump-x CONFIG            dump the seen-terminal dataset of a run

Exit codes: 0 success, 1 failed check or runtime error, 2 bad config or
input, 3 enumeration budget exceeded.
"""

import argparse
import json
import os
import sys

import numpy as np

from .config import ConfigError, load_config, render_config
from .envs import EnumerationBudgetError
from .evaluation import build_target
from .policy import EnvTable
from .theory import run_all_checks
from .training import run_experiment


def _fail(code, category, message):
    sys.stderr.write(f"flowlab: error: {category}: {message}\n")
    return code


def cmd_train(args):
    cfg = load_config(args.config)
    env = cfg.build_env()
    rewardfn = cfg.build_reward(env)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.ini"), "w", encoding="utf-8") as fh:
        fh.write(render_config(cfg))
    trainer, rows = run_experiment(env, rewardfn, cfg.train, cfg.out_dir)
    last = rows[-1] if rows else None
    print(
        f"trained {cfg.train.rounds} rounds; |X|={len(trainer.dataset)}"
        + (f"; rel_mean_error={last['rel_mean_error']:.2f}%" if last else "")
    )
    print(f"wrote {cfg.out_dir}/{{metrics.csv,summary.json,checkpoint.npz,config.ini}}")
    return 0


def cmd_theory(args):
    sizes = _parse_sizes(args.sizes)
    results = run_all_checks(
        seed=args.seed,
        sizes=sizes,
        urn_trials=args.trials,
        pascal_n_max=args.nmax,
        violate=args.violate,
    )
    if args.json:
        print(
            json.dumps(
                [{"name": r.name, "passed": r.passed, "detail": r.detail} for r in results],
                indent=2,
            )
        )
    else:
        width = max(len(r.name) for r in results)
        for r in results:
            print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        return _fail(1, "theory", f"failed checks: {', '.join(failed)}")
    return 0


def _parse_sizes(text):
    sizes = []
    for part in text.split(","):
        try:
            n, k = part.strip().split(":")
            sizes.append((int(n), int(k)))
        except ValueError:
            raise ConfigError(f"--sizes entry {part!r} is not N:K") from None
    return tuple(sizes)


def cmd_target(args):
    cfg = load_config(args.config)
    env = cfg.build_env()
    rewardfn = cfg.build_reward(env)
    table = EnvTable(env)
    target = build_target(table, rewardfn)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "target.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("terminal,reward,p_star\n")
        for s, r, p in zip(table.terminal_states(), target.rewards, target.probs):
            fh.write(f"{env.state_str(s)},{r:.12g},{p:.12g}\n")
    print(f"terminals={target.rewards.size} Z={target.Z:.12g} target_mean={target.target_mean:.12g}")
    qs = np.interp([0.25, 0.5, 0.75], target.level_cum[1:], target.levels)
    print(
        "reward CDF under p*: "
        f"min={target.levels[0]:.6g} q25={qs[0]:.6g} median={qs[1]:.6g} "
        f"q75={qs[2]:.6g} max={target.levels[-1]:.6g}"
    )
    print(f"wrote {path}")
    return 0


def cmd_dump_x(args):
    cfg = load_config(args.config)
    ckpt = args.checkpoint or os.path.join(cfg.out_dir, "checkpoint.npz")
    out = args.out or os.path.join(cfg.out_dir, "x.csv")
    if not os.path.exists(ckpt):
        raise ConfigError(f"checkpoint not found: {ckpt}")
    env = cfg.build_env()
    data = np.load(ckpt)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("terminal,reward,round_first_seen\n")
        if "ds_payloads" in data:
            for p, r, seen in zip(
                data["ds_payloads"], data["ds_rewards"], data["ds_first_seen"]
            ):
                s = tuple(int(v) for v in p)
                fh.write(f"{env.state_str(s)},{r:.12g},{int(seen)}\n")
    print(f"wrote {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="flowlab", description="Sampler-training laboratory on enumerable graphs"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run an experiment from a config file")
    p.add_argument("config")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("theory", help="run the verification checks")
    p.add_argument("--sizes", default="3:2,6:3,8:4", help="N:K pairs, comma separated")
    p.add_argument("--nmax", type=int, default=30, help="binomial row bound checked to n=NMAX")
    p.add_argument("--trials", type=int, default=2000, help="urn simulation trials")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true", help="machine-readable report")
    p.add_argument(
        "--violate",
        action="store_true",
        help="debug: run the substructure check on a pair that breaks its premise",
    )
    p.set_defaults(fn=cmd_theory)

    p = sub.add_parser("target", help="enumerate the target distribution")
    p.add_argument("config")
    p.set_defaults(fn=cmd_target)

    p = sub.add_parser("dump-x", help="dump a run's seen-terminal dataset")
    p.add_argument("config")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_dump_x)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        return _fail(2, "config", str(err))
    except EnumerationBudgetError as err:
        return _fail(3, "budget", str(err))
    except OSError as err:
        return _fail(2, "input", str(err))
    except (RuntimeError, ValueError, KeyError, AssertionError) as err:
        return _fail(1, "runtime", str(err))


if __name__ == "__main__":
    sys.exit(main())
