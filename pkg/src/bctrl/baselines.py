"""SGD, Adam and RMSProp on a single bias layer holding the boundary values."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bctrl.cost import CostBreakdown, CostConfig, WarmStart, cost_ring
from bctrl.grid import BoundaryValues
from bctrl.guess import GuessStrategy, guess_ring
from bctrl.poisson import SolverError, source_basis
from bctrl.problems import Problem


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, size: int, **kw) -> AdamState:
        return cls(np.zeros(size), np.zeros(size), **kw)


@dataclass
class RmsPropState:
    s: np.ndarray
    rho: float = 0.99
    eps: float = 1e-8

    @classmethod
    def fresh(cls, size: int, **kw) -> RmsPropState:
        return cls(np.zeros(size), **kw)


@dataclass(frozen=True)
class SgdConfig:
    lr: float = 0.05


def adam_direction(state: AdamState, g: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """Bias-corrected ``m / (sqrt(v) + eps)``; the learning rate is applied by the caller."""
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    d = m_hat / (np.sqrt(v_hat) + state.eps)
    return d, AdamState(m, v, t, state.beta1, state.beta2, state.eps)


def rmsprop_direction(state: RmsPropState, g: np.ndarray) -> tuple[np.ndarray, RmsPropState]:
    s = state.rho * state.s + (1 - state.rho) * g * g
    return g / (np.sqrt(s) + state.eps), RmsPropState(s, state.rho, state.eps)


@dataclass
class BaselineResult:
    trace: list[CostBreakdown]
    best_u: BoundaryValues
    best_step: int
    error: str | None = None

    @property
    def best_cost(self) -> float:
        return self.trace[self.best_step].f


def run_bias_layer_baseline(problem: Problem, optimizer_kind: str = "adam", steps: int = 100,
                            lr: float = 0.05, cfg: CostConfig = CostConfig(),
                            guess: GuessStrategy = GuessStrategy("mean")) -> BaselineResult:
    """Optimise the boundary values directly with a first-order method.

    ``trace[k]`` is the cost after ``k`` updates, so the trace has
    ``steps + 1`` entries. A solver failure stops the run and the partial
    trace is returned with ``error`` set.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if optimizer_kind not in ("sgd", "adam", "rmsprop"):
        raise ValueError(f"unknown optimizer {optimizer_kind!r}")
    basis = source_basis(problem.grid)
    u = guess_ring(guess, problem, basis)
    adam = AdamState.fresh(u.size)
    rms = RmsPropState.fresh(u.size)
    trace: list[CostBreakdown] = []
    best_u, best_step = u.copy(), 0
    error = None
    warm = WarmStart()
    for step in range(steps + 1):
        try:
            res = cost_ring(problem, u, cfg, basis, with_grad=step < steps, warm=warm)
        except SolverError as e:
            error = str(e)
            break
        out, g = res[0], res[-1]
        trace.append(out)
        if out.f < trace[best_step].f:
            best_u, best_step = u.copy(), step
        if step == steps:
            break
        if optimizer_kind == "sgd":
            d = g
        elif optimizer_kind == "adam":
            d, adam = adam_direction(adam, g)
        else:
            d, rms = rmsprop_direction(rms, g)
        u = u - lr * d
    if not trace:
        raise SolverError(f"baseline failed on initial guess: {error}", float("nan"))
    return BaselineResult(trace, BoundaryValues.from_ring(problem.grid, best_u), best_step, error)


TRACE_HEADER = ("step", "f", "f_o", "f_v", "max_violation")


def write_trace(trace: list[CostBreakdown], path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for k, b in enumerate(trace):
            w.writerow([k, *(format(x, ".17g") for x in (b.f, b.f_o, b.f_v, b.max_violation))])
