"""``bctrl`` command line."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from bctrl import harness
from bctrl.guess import STRATEGIES
from bctrl.problems import load_dataset


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bctrl", description="Boundary control of the Poisson equation.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help, *flags):
        p = sub.add_parser(name, help=help)
        common = {
            "seed": dict(type=int, default=0),
            "count": dict(type=int, default=100),
            "dataset": dict(type=Path, required=True),
            "weights": dict(type=Path, default=None, help="informed-guess checkpoint"),
            "params": dict(type=Path, default=None, help="hybrid optimizer checkpoint"),
            "iters": dict(type=int, default=32),
            "guess": dict(default="mean", choices=STRATEGIES),
            "reference": dict(type=Path, default=None, help="CSV id,cost,feasible,iterations"),
            "out": dict(type=Path, required=True),
            "workers": dict(type=int, default=1),
        }
        for f in flags:
            p.add_argument(f"--{f}", **common[f])
        return p

    p = add("generate", "write a synthetic dataset CSV", "seed", "count", "out", "workers")
    p.add_argument("--n-min", type=int, default=10)
    p.add_argument("--n-max", type=int, default=100)
    p.add_argument("--no-cost-filter", action="store_true", help="skip the reference-cost filter")

    p = add("eval-guesses", "cost of every initial-guess strategy", "dataset", "weights", "out", "workers")
    p.add_argument("--strategies", default=",".join(STRATEGIES))

    p = add("train-guess", "train the informed-guess network", "dataset", "seed", "out")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.01)

    p = add("train-opt", "train the hybrid optimizer by policy gradients", "dataset", "seed", "out", "guess", "weights")
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--steps", type=int, default=8, help="episode length")
    p.add_argument("--lr", type=float, default=1e-3)

    add("optimize", "run the hybrid optimizer on a dataset",
        "dataset", "params", "iters", "guess", "weights", "reference", "out", "workers")

    p = add("compare", "win/loss/tie counts against reference results", "reference", "out")
    p.add_argument("--report", type=Path, required=True, help="summary.csv written by optimize")
    p.add_argument("--column", default="best_cost")

    p = add("flops", "FLOP and wall-time table across grid sizes", "seed", "iters", "params", "weights", "out")
    p.add_argument("--n-list", type=_ints, default=[16, 32, 64, 128])

    p = add("extrapolate", "run the method on grids beyond the training range",
            "dataset", "params", "weights", "guess", "iters", "out")
    p.add_argument("--n-list", type=_ints, default=[150, 200])
    p.add_argument("--ids", type=_ints, default=None, help="problem ids (default: first problem)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    cmd = args.command
    try:
        if cmd == "generate":
            problems = harness.cmd_generate(args.seed, args.count, args.out, (args.n_min, args.n_max),
                                            args.workers, not args.no_cost_filter)
            print(f"wrote {len(problems)} problems to {args.out}")
        elif cmd == "eval-guesses":
            res = harness.cmd_eval_guesses(load_dataset(args.dataset), args.out, args.weights,
                                           args.strategies.split(","), workers=args.workers)
            print(f"evaluated {len(res['costs'])} problems into {args.out}")
        elif cmd == "train-guess":
            harness.cmd_train_guess(load_dataset(args.dataset), args.out, args.epochs, args.lr, args.seed)
            print(f"saved weights to {args.out}")
        elif cmd == "train-opt":
            harness.cmd_train_opt(load_dataset(args.dataset), args.out, args.episodes, args.steps, args.lr,
                                  args.seed, args.guess, args.weights)
            print(f"saved params to {args.out}")
        elif cmd == "optimize":
            params = args.params if args.params is not None else harness.HybridParams()
            rep = harness.cmd_optimize(load_dataset(args.dataset), params, args.out, args.iters, args.guess,
                                       args.weights, args.reference, workers=args.workers)
            for row in rep["stats"]:
                print("{:>10}  mean {:.4g}  median {:.4g}  lowest {:.4g}  highest {:.4g}".format(*row))
            if rep["failures"]:
                print(f"{len(rep['failures'])} problems failed, see failures.csv")
        elif cmd == "compare":
            r = harness.cmd_compare(args.report, args.reference, args.column, args.out)
            print(f"wins {r.wins}  losses {r.losses}  ties {r.ties}  feasible {r.feasible}  win rate {r.win_rate:.2f}%")
            for label, ids in (("report", r.unmatched_report), ("reference", r.unmatched_reference)):
                if ids:
                    print(f"ids only in {label}: {' '.join(map(str, ids))}")
        elif cmd == "flops":
            res = harness.cmd_flops_timing(args.n_list, args.iters, args.seed, args.params, args.weights, args.out)
            for name, (slope, resid) in res["fits"].items():
                print(f"{name}: log-log slope {slope:.3f} (rms residual {resid:.3g})")
        elif cmd == "extrapolate":
            problems = load_dataset(args.dataset)
            if args.ids:
                wanted = set(args.ids)
                problems = [p for p in problems if p.id in wanted]
            else:
                problems = problems[:1]
            params = args.params if args.params is not None else harness.HybridParams()
            rows = harness.cmd_extrapolate(problems, params, args.n_list, args.weights, args.guess,
                                           args.iters, args.out)
            for r in rows:
                print(f"id {r[0]}  n {r[1]}  best cost {r[3]:.6g}")
    except (ValueError, OSError) as e:
        print(f"bctrl {cmd}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
