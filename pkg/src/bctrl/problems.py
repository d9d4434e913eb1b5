"""Synthetic boundary control problems and their CSV persistence."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from bctrl.grid import BoundaryValues, DomainField, Grid

ALPHA = 0.01
Y_MIN = -1e20
SOURCE_TERMS = (0.0, -10.0, -20.0, -30.0, -40.0, -50.0)
N_RANGE = (10, 100)
COEF_RANGE = (-5, 5)
PHASE_RANGE = (1, 6)
MIN_PROFILE_RANGE = 0.3
MAX_REFERENCE_COST = 0.2

CSV_HEADER = (
    "id", "n", "alpha", "c", "qa1", "qb1", "qa2", "qb2",
    "s1k", "s1d", "s2k", "s2d", "y_min", "y_max", "u_min", "u_max",
)


class DatasetError(ValueError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


@dataclass(frozen=True)
class ProfileExpression:
    """``a1 x1^2 + b1 x1 + a2 x2^2 + b2 x2`` plus optional ``sin^2(k pi x + pi / d)`` terms.

    A sine term is ``None`` when absent, otherwise ``(k, d)``.
    """

    quad1: tuple[int, int] = (0, 0)
    quad2: tuple[int, int] = (0, 0)
    sin1: tuple[int, int] | None = None
    sin2: tuple[int, int] | None = None

    def __post_init__(self):
        lo, hi = COEF_RANGE
        for a in (*self.quad1, *self.quad2):
            if not lo <= a <= hi:
                raise ValueError(f"quadratic coefficient {a} outside [{lo}, {hi}]")
        for term in (self.sin1, self.sin2):
            if term is None:
                continue
            k, d = term
            if k == 0 or not lo <= k <= hi:
                raise ValueError(f"sine frequency {k} must be a nonzero integer in [{lo}, {hi}]")
            if not PHASE_RANGE[0] <= d <= PHASE_RANGE[1]:
                raise ValueError(f"sine phase divisor {d} outside {PHASE_RANGE}")

    def is_trivial(self) -> bool:
        return self.quad1 == (0, 0) and self.quad2 == (0, 0) and self.sin1 is None and self.sin2 is None

    def __call__(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        out = self.quad1[0] * x1**2 + self.quad1[1] * x1 + self.quad2[0] * x2**2 + self.quad2[1] * x2
        if self.sin1 is not None:
            k, d = self.sin1
            out = out + np.sin(k * np.pi * x1 + np.pi / d) ** 2
        if self.sin2 is not None:
            k, d = self.sin2
            out = out + np.sin(k * np.pi * x2 + np.pi / d) ** 2
        return out

    def __str__(self):
        parts = []
        for (a, b), x in ((self.quad1, "x1"), (self.quad2, "x2")):
            if a:
                parts.append(f"{a}*{x}^2")
            if b:
                parts.append(f"{b}*{x}")
        for term, x in ((self.sin1, "x1"), (self.sin2, "x2")):
            if term is not None:
                parts.append(f"sin^2({term[0]}*pi*{x} + pi/{term[1]})")
        return " + ".join(parts) or "0"


def eval_profile(expr: ProfileExpression, grid: Grid) -> DomainField:
    """Sample the expression at interior nodes; rows follow ``x2``, columns ``x1``."""
    x = grid.coordinates()
    x1, x2 = np.meshgrid(x, x, indexing="xy")
    return DomainField(grid, np.broadcast_to(expr(x1, x2), (grid.n, grid.n)))


@dataclass(frozen=True, eq=False)
class Problem:
    grid: Grid
    expr: ProfileExpression
    c: float
    y_max: float
    u_min: float
    u_max: float
    alpha: float = ALPHA
    y_min: float = Y_MIN
    id: int = 0
    y_d: DomainField = field(init=False, repr=False)
    u_d: BoundaryValues = field(init=False, repr=False)

    def __post_init__(self):
        if not (self.y_min < self.y_max):
            raise ValueError(f"domain bounds inverted: {self.y_min} >= {self.y_max}")
        if not (self.u_min < self.u_max):
            raise ValueError(f"boundary bounds inverted: {self.u_min} >= {self.u_max}")
        object.__setattr__(self, "y_d", eval_profile(self.expr, self.grid))
        object.__setattr__(self, "u_d", BoundaryValues.constant(self.grid, 0.0))

    @property
    def n(self) -> int:
        return self.grid.n

    def key(self) -> tuple:
        return (self.id, self.grid.n, self.alpha, self.c, self.expr, self.y_min, self.y_max, self.u_min, self.u_max)

    def __eq__(self, other):
        return isinstance(other, Problem) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def resized(self, n: int) -> Problem:
        """Same expression, source and bounds resampled on an ``n``-grid."""
        return replace(self, grid=Grid(n))


@dataclass(frozen=True)
class Rejected:
    index: int
    reason: str
    value: float


def derive_bounds(y_d: DomainField, rng: np.random.Generator) -> tuple[float, float, float]:
    """``(y_max, u_min, u_max)`` from the extremes and median of the profile.

    ``y_max`` is uniform between the median and the maximum. Each boundary
    bound is the corresponding extreme shifted by half a uniform draw from
    ``[-(max - min), max - min]``; the pair is redrawn if it comes out
    inverted. A constant profile gives every bound equal to the constant.
    """
    v = y_d.values
    lo, hi, med = float(v.min()), float(v.max()), float(np.median(v))
    spread = hi - lo
    y_max = float(rng.uniform(med, hi)) if hi > med else hi
    if spread == 0:
        return y_max, lo, hi
    while True:
        u_min = lo + 0.5 * float(rng.uniform(-spread, spread))
        u_max = hi + 0.5 * float(rng.uniform(-spread, spread))
        if u_min < u_max:
            return y_max, u_min, u_max


def problem_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(index)]))


def draw_expression(rng: np.random.Generator) -> ProfileExpression:
    lo, hi = COEF_RANGE
    nonzero = [k for k in range(lo, hi + 1) if k != 0]
    while True:
        q = rng.integers(lo, hi + 1, size=4)
        sines = []
        for _ in range(2):
            if rng.random() < 0.5:
                sines.append((int(rng.choice(nonzero)), int(rng.integers(PHASE_RANGE[0], PHASE_RANGE[1] + 1))))
            else:
                sines.append(None)
        expr = ProfileExpression((int(q[0]), int(q[1])), (int(q[2]), int(q[3])), sines[0], sines[1])
        if not expr.is_trivial():
            return expr


def default_reference_cost(problem: Problem) -> float:
    """Best cost of the 100-step Adam bias-layer baseline."""
    from bctrl.baselines import run_bias_layer_baseline

    return run_bias_layer_baseline(problem, "adam", steps=100).best_cost


def check_filters(problem: Problem, ref_cost_fn: Callable[[Problem], float] | None) -> Rejected | None:
    v = problem.y_d.values
    spread = float(v.max() - v.min())
    if spread < MIN_PROFILE_RANGE:
        return Rejected(problem.id, "range-filter", spread)
    if ref_cost_fn is not None:
        cost = float(ref_cost_fn(problem))
        if not math.isfinite(cost) or cost > MAX_REFERENCE_COST:
            return Rejected(problem.id, "cost-filter", cost)
    return None


def generate_problem(master_seed: int, index: int,
                     ref_cost_fn: Callable[[Problem], float] | None = default_reference_cost,
                     n_range: tuple[int, int] = N_RANGE) -> Problem | Rejected:
    """Draw problem ``index`` of the stream seeded by ``master_seed``.

    ``ref_cost_fn`` maps a candidate to its reference per-cell cost; pass
    None to skip the cost filter.
    """
    rng = problem_rng(master_seed, index)
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    expr = draw_expression(rng)
    c = float(rng.choice(SOURCE_TERMS))
    grid = Grid(n)
    y_d = eval_profile(expr, grid)
    v = y_d.values
    spread = float(v.max() - v.min())
    if spread < MIN_PROFILE_RANGE:
        return Rejected(index, "range-filter", spread)
    y_max, u_min, u_max = derive_bounds(y_d, rng)
    problem = Problem(grid, expr, c, y_max, u_min, u_max, id=index)
    return check_filters(problem, ref_cost_fn) or problem


def generate_dataset(master_seed: int, count: int, ref_cost_fn=default_reference_cost,
                     n_range: tuple[int, int] = N_RANGE, workers: int = 1) -> list[Problem]:
    """First ``count`` accepted problems of the seeded stream, in index order."""
    accepted: list[Problem] = []
    index = 0
    batch = max(1, workers) * 4
    pool = None
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        pool = ProcessPoolExecutor(workers)
    try:
        while len(accepted) < count:
            idx = range(index, index + batch)
            if pool is None:
                results = [generate_problem(master_seed, i, ref_cost_fn, n_range) for i in idx]
            else:
                results = list(pool.map(generate_problem, [master_seed] * batch, idx,
                                        [ref_cost_fn] * batch, [n_range] * batch))
            for r in results:
                if isinstance(r, Problem) and len(accepted) < count:
                    accepted.append(r)
            index += batch
    finally:
        if pool is not None:
            pool.shutdown()
    return accepted


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _row(p: Problem) -> list[str]:
    s1 = p.expr.sin1 or (0, 0)
    s2 = p.expr.sin2 or (0, 0)
    return [
        str(p.id), str(p.n), _fmt(p.alpha), _fmt(p.c),
        str(p.expr.quad1[0]), str(p.expr.quad1[1]), str(p.expr.quad2[0]), str(p.expr.quad2[1]),
        str(s1[0]), str(s1[1]), str(s2[0]), str(s2[1]),
        _fmt(p.y_min), _fmt(p.y_max), _fmt(p.u_min), _fmt(p.u_max),
    ]


def dumps_dataset(problems: Iterable[Problem]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for p in problems:
        w.writerow(_row(p))
    return buf.getvalue()


def save_dataset(problems: Iterable[Problem], path) -> None:
    Path(path).write_text(dumps_dataset(problems), encoding="utf-8")


def _parse_row(rec: dict) -> Problem:
    def sine(k, d):
        k, d = int(rec[k]), int(rec[d])
        return None if k == 0 and d == 0 else (k, d)

    expr = ProfileExpression(
        (int(rec["qa1"]), int(rec["qb1"])),
        (int(rec["qa2"]), int(rec["qb2"])),
        sine("s1k", "s1d"),
        sine("s2k", "s2d"),
    )
    return Problem(
        Grid(int(rec["n"])), expr, float(rec["c"]),
        y_max=float(rec["y_max"]), u_min=float(rec["u_min"]), u_max=float(rec["u_max"]),
        alpha=float(rec["alpha"]), y_min=float(rec["y_min"]), id=int(rec["id"]),
    )


def loads_dataset(text: str) -> list[Problem]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetError(1, "missing header") from None
    if tuple(header) != CSV_HEADER:
        raise DatasetError(1, f"unexpected header {header}")
    problems = []
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise DatasetError(row_no, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
        try:
            problems.append(_parse_row(dict(zip(CSV_HEADER, row))))
        except ValueError as e:
            raise DatasetError(row_no, str(e)) from e
    return problems


def load_dataset(path) -> list[Problem]:
    return loads_dataset(Path(path).read_text(encoding="utf-8"))
