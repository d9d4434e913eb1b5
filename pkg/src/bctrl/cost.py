"""Barrier-penalised tracking cost and its exact adjoint gradient.

``F = F_o + beta * F_v`` with

* ``F_o = w_dom * 1/2 sum (y - y_d)^2 + w_bnd * alpha/2 sum (u - u_d)^2``
* ``F_v = w_dom * sum f_dom(y) + w_bnd * sum f_bnd(u)``

where the barriers are one-sided squared bound violations. The weights
default to ``1 / n^2`` and ``1 / (4 n)``, i.e. per-cell means, so costs
are comparable across grid sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bctrl import flops
from bctrl.grid import BoundaryValues, DomainField, edges_of_array
from bctrl.poisson import DEFAULT_RTOL, SourceBasis, boundary_load, cg_solve, source_basis
from bctrl.problems import Problem

VIOLATION_FLOOR = 1e-12


@dataclass(frozen=True)
class CostConfig:
    beta: float = 1e4
    domain_weight: float | None = None
    boundary_weight: float | None = None
    solver_rtol: float = DEFAULT_RTOL

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        for w in (self.domain_weight, self.boundary_weight):
            if w is not None and not w > 0:
                raise ValueError("quadrature weights must be positive")

    def weights(self, n: int) -> tuple[float, float]:
        wd = self.domain_weight if self.domain_weight is not None else 1.0 / n**2
        wb = self.boundary_weight if self.boundary_weight is not None else 1.0 / (4 * n)
        return wd, wb


@dataclass(frozen=True)
class CostBreakdown:
    f: float
    f_o: float
    f_v: float
    max_violation: float
    mean_violation: float
    violated_cells: int

    @property
    def reward(self) -> float:
        return -self.f


def _deviation(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    dev = np.where(x > hi, x - hi, np.where(x < lo, x - lo, 0.0))
    dev[np.abs(dev) < VIOLATION_FLOOR] = 0.0
    return dev


class WarmStart:
    """Previous forward and adjoint solutions, reused as CG starting points.

    Iterative optimisers change the control a little per step, so
    starting from the last solution saves most CG iterations.
    """

    def __init__(self):
        self.y = None
        self.lam = None


def _state(problem: Problem, ring: np.ndarray, basis: SourceBasis, rtol: float,
           warm: WarmStart | None) -> np.ndarray:
    n = problem.n
    top, right, bottom, left = ring[:n], ring[n : 2 * n], ring[2 * n : 3 * n][::-1], ring[3 * n :][::-1]
    rhs = boundary_load(problem.grid, top, bottom, left, right)
    y = cg_solve(problem.grid, rhs, rtol=rtol, x0=None if warm is None else warm.y)
    if warm is not None:
        warm.y = y.copy()
    if problem.c != 0:
        y += basis.scaled(problem.c)
    return y


def _edges_ring(a: np.ndarray) -> np.ndarray:
    top, bottom, left, right = edges_of_array(a)
    return np.concatenate([top, right, bottom[::-1], left[::-1]])


def cost_ring(problem: Problem, ring: np.ndarray, cfg: CostConfig = CostConfig(),
              basis: SourceBasis | None = None, with_grad: bool = False,
              warm: WarmStart | None = None):
    """Cost of a boundary control given in ring layout.

    Returns ``(breakdown, y)`` or, with ``with_grad``, ``(breakdown, y, dF/du)``
    with the gradient also in ring layout.
    """
    ring = np.asarray(ring, dtype=float)
    n = problem.n
    if ring.shape != (4 * n,):
        raise ValueError(f"control of length {4 * n} expected, got {ring.shape}")
    if basis is None:
        basis = source_basis(problem.grid)
    wd, wb = cfg.weights(n)
    y = _state(problem, ring, basis, cfg.solver_rtol, warm)
    r_y = y - problem.y_d.values
    r_u = ring  # u_d is zero
    dev_y = _deviation(y, problem.y_min, problem.y_max)
    dev_u = _deviation(ring, problem.u_min, problem.u_max)
    f_o = wd * 0.5 * float(np.sum(r_y * r_y)) + wb * 0.5 * problem.alpha * float(np.sum(r_u * r_u))
    f_v = wd * float(np.sum(dev_y * dev_y)) + wb * float(np.sum(dev_u * dev_u))
    abs_dev = np.concatenate([np.abs(dev_y).ravel(), np.abs(dev_u)])
    out = CostBreakdown(
        f=f_o + cfg.beta * f_v,
        f_o=f_o,
        f_v=f_v,
        max_violation=float(abs_dev.max()),
        mean_violation=float(abs_dev.mean()),
        violated_cells=int(np.count_nonzero(abs_dev)),
    )
    flops.add("cost", 12 * y.size + 12 * ring.size)
    if not with_grad:
        return out, y
    adj_rhs = wd * (r_y + cfg.beta * 2.0 * dev_y)
    lam = cg_solve(problem.grid, adj_rhs, rtol=cfg.solver_rtol, x0=None if warm is None else warm.lam)
    if warm is not None:
        warm.lam = lam.copy()
    grad = _edges_ring(lam) / problem.grid.h**2 + wb * (problem.alpha * r_u + cfg.beta * 2.0 * dev_u)
    flops.add("cost", 4 * y.size + 6 * ring.size)
    return out, y, grad


def evaluate(problem: Problem, u: BoundaryValues, cfg: CostConfig = CostConfig(),
             basis: SourceBasis | None = None) -> CostBreakdown:
    if u.grid != problem.grid:
        raise ValueError(f"control on {u.grid} does not match problem grid {problem.grid}")
    return cost_ring(problem, u.as_ring(), cfg, basis)[0]


def state(problem: Problem, u: BoundaryValues, cfg: CostConfig = CostConfig(),
          basis: SourceBasis | None = None) -> DomainField:
    return DomainField(problem.grid, cost_ring(problem, u.as_ring(), cfg, basis)[1])


def value_and_gradient(problem: Problem, u: BoundaryValues, cfg: CostConfig = CostConfig(),
                       basis: SourceBasis | None = None) -> tuple[CostBreakdown, BoundaryValues]:
    if u.grid != problem.grid:
        raise ValueError(f"control on {u.grid} does not match problem grid {problem.grid}")
    out, _, g = cost_ring(problem, u.as_ring(), cfg, basis, with_grad=True)
    return out, BoundaryValues.from_ring(problem.grid, g)


def gradient(problem: Problem, u: BoundaryValues, cfg: CostConfig = CostConfig(),
             basis: SourceBasis | None = None) -> BoundaryValues:
    """Exact ``dF/du`` by one forward and one adjoint solve."""
    return value_and_gradient(problem, u, cfg, basis)[1]


def finite_difference_gradient(problem: Problem, u: BoundaryValues, cfg: CostConfig = CostConfig(),
                               step: float = 1e-5, basis: SourceBasis | None = None) -> BoundaryValues:
    """Central differences, one pair of solves per boundary element."""
    if not step > 0:
        raise ValueError("step must be positive")
    ring = u.as_ring()
    g = np.empty_like(ring)
    for k in range(ring.size):
        up, dn = ring.copy(), ring.copy()
        up[k] += step
        dn[k] -= step
        g[k] = (cost_ring(problem, up, cfg, basis)[0].f - cost_ring(problem, dn, cfg, basis)[0].f) / (2 * step)
    return BoundaryValues.from_ring(problem.grid, g)
