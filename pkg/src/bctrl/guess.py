"""Initial guesses for the boundary control.

Three data-only strategies (mean, median, edge values of the desired
profile) and a convolutional "informed" guess: clamp the desired profile
to the domain bounds, subtract the source-term solution, shift by the
array minimum, run four 3x3 conv + ReLU layers, restore the minimum,
take the edges and clamp them to the boundary bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from bctrl import flops
from bctrl.cost import CostConfig, cost_ring
from bctrl.grid import BoundaryValues, edges_of_array
from bctrl.layers import conv2d_backward, conv2d_forward, relu
from bctrl.poisson import SourceBasis, source_basis
from bctrl.problems import Problem

STRATEGIES = ("mean", "median", "edge", "informed", "hybrid")
CHANNELS = (1, 8, 8, 8, 1)


class TrainingError(RuntimeError):
    pass


@dataclass
class ConvStack2D:
    """Four 3x3 convolutions, each followed by ReLU; any input size."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != 4 or len(self.biases) != 4:
            raise ValueError("ConvStack2D has exactly four layers")

    @classmethod
    def zeros(cls, channels: Sequence[int] = CHANNELS) -> ConvStack2D:
        ws = [np.zeros((co, ci, 3, 3)) for ci, co in zip(channels[:-1], channels[1:])]
        return cls(ws, [np.zeros(co) for co in channels[1:]])

    @classmethod
    def near_identity(cls, rng: np.random.Generator, noise: float = 0.01,
                      channels: Sequence[int] = CHANNELS) -> ConvStack2D:
        """Channel 0 passes its input through each layer; the rest is small noise.

        Inputs are non-negative after the min-shift, so the ReLUs leave the
        pass-through untouched and training starts from the edge guess of
        the source-corrected profile.
        """
        net = cls.zeros(channels)
        for w in net.weights:
            w += noise * rng.standard_normal(w.shape)
            w[0, 0, 1, 1] += 1.0
        return net

    def copy(self) -> ConvStack2D:
        return ConvStack2D([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def param_names(self) -> list[str]:
        return [f"layer{k}.weight" for k in range(4)] + [f"layer{k}.bias" for k in range(4)]

    def forward(self, x: np.ndarray, keep: bool = False):
        a = x[None, :, :]
        caches = []
        for w, b in zip(self.weights, self.biases):
            z, cache = conv2d_forward(a, w, b)
            a = relu(z)
            flops.add("guess", z.size)
            caches.append((cache, z))
        return (a[0], caches) if keep else a[0]

    def backward(self, caches, gout: np.ndarray) -> list[np.ndarray]:
        """Gradients in :meth:`parameters` order."""
        g = gout[None, :, :]
        dws, dbs = [None] * 4, [None] * 4
        for k in range(3, -1, -1):
            cache, z = caches[k]
            g = g * (z > 0)
            g, grads = conv2d_backward(cache, self.weights[k], g)
            dws[k], dbs[k] = grads["w"], grads["b"]
        return [*dws, *dbs]


@dataclass(frozen=True)
class GuessStrategy:
    kind: str
    net: ConvStack2D | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown guess strategy {self.kind!r}; choose from {STRATEGIES}")
        if self.kind in ("informed", "hybrid") and self.net is None:
            raise ValueError(f"{self.kind} guess needs trained ConvStack2D weights")


def _ring(a: np.ndarray) -> np.ndarray:
    top, bottom, left, right = edges_of_array(a)
    return np.concatenate([top, right, bottom[::-1], left[::-1]])


def _scatter_ring(n: int, g: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`_ring`: corners collect from both of their edges."""
    out = np.zeros((n, n))
    out[0, :] += g[:n]
    out[:, -1] += g[n : 2 * n]
    out[-1, :] += g[2 * n : 3 * n][::-1]
    out[:, 0] += g[3 * n :][::-1]
    return out


def network_input(problem: Problem, basis: SourceBasis) -> tuple[np.ndarray, float]:
    """Clamped, source-corrected, min-shifted profile and the shift."""
    z = np.clip(problem.y_d.values, problem.y_min, problem.y_max)
    if problem.c != 0:
        z = z - basis.scaled(problem.c)
    m = float(z.min())
    flops.add("guess", 4 * z.size)
    return z - m, m


def _informed_raw(net: ConvStack2D, problem: Problem, basis: SourceBasis, keep: bool = False):
    x, m = network_input(problem, basis)
    if keep:
        out, caches = net.forward(x, keep=True)
        return _ring(out + m), caches
    return _ring(net.forward(x) + m)


def guess_ring(strategy: GuessStrategy, problem: Problem, basis: SourceBasis | None = None) -> np.ndarray:
    n = problem.n
    lo, hi = problem.u_min, problem.u_max
    kind = strategy.kind
    if kind == "hybrid":
        kind = "edge" if problem.c == 0 else "informed"
    y_d = problem.y_d.values
    if kind == "mean":
        raw = np.full(4 * n, float(y_d.mean()))
    elif kind == "median":
        raw = np.full(4 * n, float(np.median(y_d)))
    elif kind == "edge":
        raw = _ring(y_d)
    else:
        if basis is None:
            basis = source_basis(problem.grid)
        raw = _informed_raw(strategy.net, problem, basis)
    return np.clip(raw, lo, hi)


def guess(strategy: GuessStrategy, problem: Problem, basis: SourceBasis | None = None) -> BoundaryValues:
    return BoundaryValues.from_ring(problem.grid, guess_ring(strategy, problem, basis))


def informed_cost_and_grads(net: ConvStack2D, problem: Problem, cfg: CostConfig = CostConfig(),
                            basis: SourceBasis | None = None):
    """Cost of the informed guess and its gradient with respect to the weights."""
    if basis is None:
        basis = source_basis(problem.grid)
    raw, caches = _informed_raw(net, problem, basis, keep=True)
    u = np.clip(raw, problem.u_min, problem.u_max)
    breakdown, _, g_u = cost_ring(problem, u, cfg, basis, with_grad=True)
    g_raw = g_u * ((raw >= problem.u_min) & (raw <= problem.u_max))
    grads = net.backward(caches, _scatter_ring(problem.n, g_raw))
    return breakdown.f, grads


def mean_cost(strategy: GuessStrategy, problems: Sequence[Problem], cfg: CostConfig = CostConfig()) -> float:
    if not problems:
        return math.nan
    return float(np.mean([cost_ring(p, guess_ring(strategy, p), cfg)[0].f for p in problems]))


@dataclass
class TrainConfig:
    batch_size: int = 8
    clip_norm: float = 1.0
    seed: int = 0
    cost: CostConfig = field(default_factory=CostConfig)


def train_informed(train_problems: Sequence[Problem], val_problems: Sequence[Problem],
                   net: ConvStack2D | None = None, cfg: TrainConfig | None = None,
                   epochs: int = 50, lr: float = 0.01, history: list | None = None) -> ConvStack2D:
    """Gradient descent on the mean informed-guess cost.

    Each epoch walks the shuffled training set in minibatches, taking one
    clipped gradient step per batch. The weights with the lowest mean
    validation cost (including the starting weights) are returned.
    ``history`` receives ``(epoch, train_cost, val_cost)`` tuples.
    """
    cfg = cfg or TrainConfig()
    rng = np.random.default_rng(cfg.seed)
    if net is None:
        net = ConvStack2D.near_identity(rng)
    net = net.copy()
    if {p.id for p in train_problems} & {p.id for p in val_problems}:
        raise ValueError("training and validation problems overlap")

    def val_cost(candidate):
        return mean_cost(GuessStrategy("informed", candidate), val_problems, cfg.cost)

    best, best_val = net.copy(), val_cost(net)
    if history is not None:
        history.append((0, math.nan, best_val))
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train_problems))
        costs = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_problems[i] for i in order[start : start + cfg.batch_size]]
            total = [np.zeros_like(p) for p in net.parameters()]
            for p in batch:
                f, grads = informed_cost_and_grads(net, p, cfg.cost)
                if not math.isfinite(f):
                    raise TrainingError(f"non-finite cost on problem {p.id} at epoch {epoch}")
                costs.append(f)
                for t, g in zip(total, grads):
                    t += g / len(batch)
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in total))
            scale = lr * min(1.0, cfg.clip_norm / norm) if norm > 0 else 0.0
            for p, g in zip(net.parameters(), total):
                p -= scale * g
        v = val_cost(net)
        if not math.isfinite(v):
            raise TrainingError(f"non-finite validation cost at epoch {epoch}")
        if history is not None:
            history.append((epoch, float(np.mean(costs)), v))
        if v < best_val:
            best, best_val = net.copy(), v
    return best
