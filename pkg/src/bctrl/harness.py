"""Benchmark commands: generate, train, evaluate, compare, count FLOPs.

Every command writes plot-ready CSV (UTF-8, headers, reals at 17
significant digits) and returns the rows it wrote.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from bctrl import flops
from bctrl.checkpoint import load_conv_stack, load_hybrid_params, save_conv_stack, save_hybrid_params
from bctrl.cost import CostConfig, cost_ring
from bctrl.guess import STRATEGIES, ConvStack2D, GuessStrategy, TrainConfig, guess_ring, train_informed
from bctrl.hybrid import HybridParams, PolicyGradientConfig, SpatioTemporalNet, run, train_policy_gradient
from bctrl.poisson import SolverError, source_basis
from bctrl.problems import (
    N_RANGE, Problem, dumps_dataset, generate_dataset, generate_problem, load_dataset, problem_rng,
)

log = logging.getLogger(__name__)

TRACE_HEADER = ("iter", "f", "f_o", "f_v", "adam_contrib", "rms_contrib", "net_contrib")
REFERENCE_HEADER = ("id", "cost", "feasible", "iterations")
TIE_RTOL = 1e-9


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return "" if x is None else str(x)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) for x in r])


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _pool_map(fn, items, workers: int):
    # results come back in submission order, i.e. by problem id
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def split_dataset(problems: Sequence[Problem], seed: int = 0, ratios=(0.8, 0.1, 0.1)):
    """Seeded 80:10:10 split into train, validation and test lists."""
    order = np.random.default_rng(seed).permutation(len(problems))
    n_train = int(round(ratios[0] * len(problems)))
    n_val = int(round(ratios[1] * len(problems)))
    pick = lambda idx: [problems[i] for i in sorted(idx)]
    return pick(order[:n_train]), pick(order[n_train : n_train + n_val]), pick(order[n_train + n_val :])


def describe(values: Sequence[float]) -> tuple[float, float, float, float]:
    """Mean, median, lowest and highest, the row layout of the summary table."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return (math.nan,) * 4
    return float(v.mean()), float(np.median(v)), float(v.min()), float(v.max())


def cumulative_counts(costs: dict[str, Sequence[float]]) -> list[list]:
    """Rows ``threshold, count_<strategy>...`` with counts of costs <= threshold."""
    thresholds = np.unique(np.concatenate([np.asarray(v, dtype=float) for v in costs.values()]))
    sorted_costs = {k: np.sort(np.asarray(v, dtype=float)) for k, v in costs.items()}
    rows = []
    for t in thresholds:
        rows.append([float(t)] + [int(np.searchsorted(s, t, side="right")) for s in sorted_costs.values()])
    return rows


# -- generate ------------------------------------------------------------------


def cmd_generate(seed: int, count: int, out, n_range=N_RANGE, workers: int = 1, cost_filter: bool = True):
    from bctrl.problems import default_reference_cost

    problems = generate_dataset(seed, count, default_reference_cost if cost_filter else None, n_range, workers)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(dumps_dataset(problems), encoding="utf-8")
    return problems


# -- guesses -------------------------------------------------------------------


def _guess_costs(args):
    problem, strategies, cfg = args
    basis = source_basis(problem.grid)
    return [cost_ring(problem, guess_ring(s, problem, basis), cfg, basis)[0].f for s in strategies]


def _strategies(names: Sequence[str], weights) -> list[GuessStrategy]:
    net = None
    if any(n in ("informed", "hybrid") for n in names):
        if weights is None:
            raise ValueError("informed and hybrid guesses need --weights")
        net = weights if isinstance(weights, ConvStack2D) else load_conv_stack(weights)
    return [GuessStrategy(n, net if n in ("informed", "hybrid") else None) for n in names]


def cmd_eval_guesses(problems: Sequence[Problem], out_dir, weights=None, strategies: Sequence[str] = STRATEGIES,
                     cfg: CostConfig = CostConfig(), workers: int = 1):
    """Guess costs per problem, cumulative counts, summary stats and the informed-vs-edge table."""
    strats = _strategies(strategies, weights)
    names = [s.kind for s in strats]
    out_dir = Path(out_dir)
    costs = _pool_map(_guess_costs, [(p, strats, cfg) for p in problems], workers)
    rows = [[p.id, p.n, p.c, *c] for p, c in zip(problems, costs)]
    write_csv(out_dir / "guess_costs.csv", ("id", "n", "c", *names), rows)
    by_name = {k: [c[i] for c in costs] for i, k in enumerate(names)}
    write_csv(out_dir / "guess_cumulative.csv", ("threshold", *names), cumulative_counts(by_name))
    write_csv(out_dir / "guess_stats.csv", ("strategy", "mean", "median", "lowest", "highest"),
              [[k, *describe(v)] for k, v in by_name.items()])
    table = []
    if "informed" in names and "edge" in names:
        for c in sorted({p.c for p in problems}, reverse=True):
            pairs = [(by_name["informed"][i], by_name["edge"][i]) for i, p in enumerate(problems) if p.c == c]
            table.append([c, sum(a < b for a, b in pairs), sum(b < a for a, b in pairs), sum(a == b for a, b in pairs)])
        write_csv(out_dir / "guess_wins_by_source.csv", ("c", "informed_wins", "edge_wins", "ties"), table)
    return {"costs": rows, "names": names, "wins_by_source": table}


def cmd_train_guess(problems: Sequence[Problem], out, epochs: int = 50, lr: float = 0.01, seed: int = 0,
                    cfg: CostConfig = CostConfig()) -> ConvStack2D:
    train, val, _ = split_dataset(problems, seed)
    history: list = []
    net = train_informed(train, val, ConvStack2D.near_identity(np.random.default_rng(seed)),
                         TrainConfig(seed=seed, cost=cfg), epochs=epochs, lr=lr, history=history)
    for epoch, tr, va in history:
        log.info("epoch %d train %.6g val %.6g", epoch, tr, va)
    save_conv_stack(net, out)
    return net


def cmd_train_opt(problems: Sequence[Problem], out, episodes: int = 200, steps: int = 8, lr: float = 1e-3,
                  seed: int = 0, guess: str = "mean", weights=None, cfg: CostConfig = CostConfig()) -> HybridParams:
    train, val, _ = split_dataset(problems, seed)
    params0 = HybridParams(net=SpatioTemporalNet.random(np.random.default_rng(seed)))
    pg = PolicyGradientConfig(seed=seed, guess=_strategies([guess], weights)[0], cost=cfg)
    history: list = []
    params = train_policy_gradient(train, val, params0, episodes, steps, lr, pg, history)
    for done, v in history:
        log.info("episodes %d val %.6g", done, v)
    save_hybrid_params(params, out)
    return params


# -- optimize / compare --------------------------------------------------------


def _optimize_one(args):
    problem, params, strategy, iters, cfg = args
    try:
        return problem.id, run(problem, params, strategy, iters, cfg), None
    except SolverError as e:
        return problem.id, None, str(e)


def write_run_trace(result, path) -> None:
    rows = []
    for k, b in enumerate(result.trace):
        c = result.contributions[k - 1] if k > 0 else None
        rows.append([k, b.f, b.f_o, b.f_v, *((c.adam, c.rms, c.net) if c else (0.0, 0.0, 0.0))])
    write_csv(path, TRACE_HEADER, rows)


def read_trace(path) -> list[dict[str, float]]:
    return [{k: float(v) for k, v in r.items()} for r in read_csv(path)]


def load_references(path) -> dict[int, dict]:
    rows = read_csv(path)
    refs = {}
    for line, r in enumerate(rows, start=2):
        try:
            refs[int(r["id"])] = {"cost": float(r["cost"]), "feasible": int(r["feasible"]) == 1,
                                  "iterations": int(r["iterations"])}
        except (KeyError, ValueError) as e:
            raise ValueError(f"{path} row {line}: {e}") from e
    return refs


def first_beat(fs: Sequence[float], ref: float) -> int | None:
    for k, f in enumerate(fs):
        if f < ref and not _tied(f, ref):
            return k
    return None


def summarize_traces(trace_dir, out_dir=None, reference=None, checkpoints=(8,)):
    """Summary and histogram CSVs computed from stored trace files only."""
    trace_dir = Path(trace_dir)
    out_dir = Path(out_dir) if out_dir is not None else trace_dir.parent
    refs = load_references(reference) if reference is not None else None
    files = sorted(trace_dir.glob("*.csv"), key=lambda p: int(p.stem))
    summary, fs_by_id = [], {}
    for path in files:
        t = read_trace(path)
        fs = [r["f"] for r in t]
        best = int(np.argmin(fs))
        pid = int(path.stem)
        fs_by_id[pid] = fs
        summary.append([pid, len(fs) - 1, fs[0], fs[best], best, t[best]["f_o"], t[best]["f_v"],
                        int(t[best]["f_v"] == 0), fs[-1]])
    header = ("id", "iters", "initial_cost", "best_cost", "best_iter", "best_f_o", "best_f_v", "feasible", "final_cost")
    write_csv(out_dir / "summary.csv", header, summary)
    iters = max((s[1] for s in summary), default=0)
    hist = [[k, sum(s[4] == k for s in summary), sum(s[4] == k and s[7] for s in summary)] for k in range(iters + 1)]
    write_csv(out_dir / "best_iter_hist.csv", ("iter", "count", "count_feasible"), hist)
    stats = [["initial", *describe([s[2] for s in summary])]]
    for k in checkpoints:
        if k < iters:
            stats.append([f"best@{k}", *describe([min(fs[: k + 1]) for fs in fs_by_id.values()])])
    stats.append([f"best@{iters}", *describe([s[3] for s in summary])])
    write_csv(out_dir / "cost_stats.csv", ("row", "mean", "median", "lowest", "highest"), stats)
    result = {"summary": summary, "best_iter_hist": hist, "stats": stats}
    if refs is not None:
        beats = {}
        for s in summary:
            r = refs.get(s[0])
            if r is not None and r["feasible"]:
                beats[s[0]] = (first_beat(fs_by_id[s[0]], r["cost"]), bool(s[7]))
        bh = [[k, sum(b == k for b, _ in beats.values()), sum(b == k and f for b, f in beats.values())]
              for k in range(iters + 1)]
        write_csv(out_dir / "first_beat_hist.csv", ("iter", "count", "count_feasible"), bh)
        scatter = [[pid, refs[pid]["cost"], s[3]] for s in summary for pid in [s[0]] if pid in refs]
        write_csv(out_dir / "cost_scatter.csv", ("id", "reference_cost", "method_cost"), scatter)
        result["first_beat_hist"] = bh
    return result


def cmd_optimize(problems: Sequence[Problem], params, out_dir, iters: int = 32, guess: str = "mean",
                 weights=None, reference=None, cfg: CostConfig = CostConfig(), workers: int = 1):
    """Run the hybrid optimizer on every problem; traces plus summaries.

    Problems whose solve fails are listed in ``failures.csv`` and skipped.
    """
    if not isinstance(params, HybridParams):
        params = load_hybrid_params(params)
    strategy = _strategies([guess], weights)[0]
    out_dir = Path(out_dir)
    trace_dir = out_dir / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)
    results = _pool_map(_optimize_one, [(p, params, strategy, iters, cfg) for p in problems], workers)
    failures, violations = [], []
    for pid, res, err in results:
        if res is None:
            failures.append([pid, err])
            continue
        write_run_trace(res, trace_dir / f"{pid}.csv")
        b = res.trace[res.best_iter]
        violations.append([pid, b.max_violation, b.mean_violation, b.violated_cells])
    write_csv(out_dir / "failures.csv", ("id", "error"), failures)
    write_csv(out_dir / "violations.csv", ("id", "max_violation", "mean_violation", "violated_cells"), violations)
    report = summarize_traces(trace_dir, out_dir, reference)
    report["failures"] = failures
    return report


def _tied(a: float, b: float) -> bool:
    return abs(a - b) <= TIE_RTOL * max(abs(a), abs(b), 1e-300)


@dataclass
class CompareResult:
    wins: int
    losses: int
    ties: int
    feasible: int
    unmatched_report: list[int] = field(default_factory=list)
    unmatched_reference: list[int] = field(default_factory=list)

    @property
    def win_rate(self) -> float:
        return 100.0 * self.wins / self.feasible


def compare_costs(method: dict[int, float], refs: dict[int, dict]) -> CompareResult:
    """Head-to-head against feasible references; ties within relative 1e-9."""
    common = sorted(set(method) & set(refs))
    if not common:
        raise ValueError("report and reference share no problem ids")
    wins = losses = ties = feasible = 0
    for pid in common:
        r = refs[pid]
        if not r["feasible"]:
            continue
        feasible += 1
        m = method[pid]
        if _tied(m, r["cost"]):
            ties += 1
        elif m < r["cost"]:
            wins += 1
        else:
            losses += 1
    if feasible == 0:
        raise ValueError("no feasible reference among the shared problem ids")
    return CompareResult(wins, losses, ties, feasible,
                         sorted(set(method) - set(refs)), sorted(set(refs) - set(method)))


def cmd_compare(report, reference, column: str = "best_cost", out=None) -> CompareResult:
    rows = read_csv(report)
    method = {int(r["id"]): float(r[column]) for r in rows}
    result = compare_costs(method, load_references(reference))
    if out is not None:
        write_csv(out, ("wins", "losses", "ties", "feasible", "win_rate_pct"),
                  [[result.wins, result.losses, result.ties, result.feasible, result.win_rate]])
    return result


# -- flops and extrapolation ------------------------------------------------


def problem_of_size(seed: int, n: int, start: int = 0) -> Problem:
    """First problem of the seeded stream that passes the range filter, resized to ``n``."""
    index = start
    while True:
        p = generate_problem(seed, index, ref_cost_fn=None, n_range=(n, n))
        if isinstance(p, Problem):
            return p
        index += 1


def loglog_slope(ns: Sequence[float], values: Sequence[float]) -> tuple[float, float]:
    """Least-squares slope of ``log(values)`` against ``log(ns)`` and the RMS residual."""
    x, y = np.log(np.asarray(ns, dtype=float)), np.log(np.asarray(values, dtype=float))
    coef, res, *_ = np.polyfit(x, y, 1, full=True)
    rms = math.sqrt(float(res[0]) / len(x)) if len(res) else 0.0
    return float(coef[0]), rms


def cmd_flops_timing(n_list: Sequence[int] = (16, 32, 64, 128), iters: int = 32, seed: int = 0, params=None,
                     weights=None, out=None, cfg: CostConfig = CostConfig()):
    """FLOPs and wall time for one informed guess and ``iters`` optimizer updates per size.

    Without ``weights`` a near-identity conv stack is used; the FLOP count
    does not depend on the weight values.
    """
    net = load_conv_stack(weights) if weights is not None else ConvStack2D.near_identity(np.random.default_rng(seed))
    if params is None:
        params = HybridParams()
    elif not isinstance(params, HybridParams):
        params = load_hybrid_params(params)
    strategy = GuessStrategy("informed", net)
    rows = []
    for n in n_list:
        problem = problem_of_size(seed, n)
        basis = source_basis(problem.grid)  # cached table, excluded from both counts
        with flops.track() as gc:
            t0 = time.perf_counter()
            guess_ring(strategy, problem, basis)
            t_guess = time.perf_counter() - t0
        with flops.track() as oc:
            t0 = time.perf_counter()
            run(problem, params, strategy, iters, cfg)
            t_opt = time.perf_counter() - t0
        opt_total = sum(oc.values()) - oc["guess"]
        rows.append([n, sum(gc.values()), opt_total, oc["solve"], oc["net"], t_guess, t_opt])
    header = ("n", "guess_flops", "optimizer_flops", "solve_flops", "net_flops", "guess_seconds", "optimizer_seconds")
    fits = {name: loglog_slope([r[0] for r in rows], [r[i] for r in rows])
            for i, name in ((1, "guess_flops"), (2, "optimizer_flops"), (3, "solve_flops"))} if len(rows) > 1 else {}
    if out is not None:
        out = Path(out)
        write_csv(out / "flops.csv", header, rows)
        write_csv(out / "flops_fit.csv", ("quantity", "slope", "rms_residual"), [[k, *v] for k, v in fits.items()])
    return {"rows": rows, "header": header, "fits": fits}


def cmd_extrapolate(problems: Sequence[Problem], params, n_list: Sequence[int], weights=None, guess: str = "mean",
                    iters: int = 32, out=None, cfg: CostConfig = CostConfig()):
    """Re-sample each problem on larger grids and run the full method there."""
    if not isinstance(params, HybridParams):
        params = load_hybrid_params(params)
    strategy = _strategies([guess], weights)[0]
    rows = []
    for p in problems:
        for n in n_list:
            if n < 10:
                raise ValueError("extrapolation sizes start at 10")
            q = p.resized(n)
            try:
                r = run(q, params, strategy, iters, cfg)
                rows.append([p.id, n, r.trace[0].f, r.best_cost, r.best_iter, ""])
            except SolverError as e:
                rows.append([p.id, n, math.nan, math.nan, -1, str(e)])
    header = ("id", "n", "initial_cost", "best_cost", "best_iter", "error")
    if out is not None:
        write_csv(out, header, rows)
    return rows
