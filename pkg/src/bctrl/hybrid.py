"""Learned iterative optimizer: Adam + RMSProp + a spatio-temporal network.

Each iteration feeds the boundary gradient to three update rules whose
directions are blended by three learnable learning rates::

    u <- u - (eta_adam * d_adam + eta_rms * d_rms + eta_net * d_net)

The network sees the gradient on the closed boundary ring as three
channels ``(g, g^2, g^3)``, passes it through two temporal conv blocks
(circular 1-D convolution + ReLU, then an LSTM cell per ring position
whose state persists across iterations) and a final circular
convolution + ReLU. The non-negative output is a step magnitude;
``d_net = magnitude * sign(g)``.

Training is REINFORCE: the update gets Gaussian exploration noise, the
reward is ``-F`` after every step and only the policy log-density is
differentiated, never the PDE solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from bctrl.baselines import AdamState, RmsPropState, adam_direction, rmsprop_direction
from bctrl.cost import CostBreakdown, CostConfig, WarmStart, cost_ring
from bctrl.grid import BoundaryValues
from bctrl.guess import GuessStrategy, TrainingError, guess_ring
from bctrl.layers import conv1d_backward, conv1d_forward, lstm_backward, lstm_forward, relu
from bctrl.poisson import SolverError, source_basis
from bctrl.problems import Problem

DEFAULT_ETAS = (0.0223, 0.0221, 0.0645)
NET_CHANNELS = (3, 8, 8, 1)
_LOG_2PI = math.log(2 * math.pi)


# -- network ---------------------------------------------------------------


@dataclass
class TemporalConvBlock:
    conv_w: np.ndarray  # (out, in, 3)
    conv_b: np.ndarray  # (out,)
    wx: np.ndarray  # (out, 4 out)
    wh: np.ndarray  # (out, 4 out)
    b: np.ndarray  # (4 out,)

    @classmethod
    def zeros(cls, c_in: int, c_out: int) -> TemporalConvBlock:
        return cls(np.zeros((c_out, c_in, 3)), np.zeros(c_out), np.zeros((c_out, 4 * c_out)),
                   np.zeros((c_out, 4 * c_out)), np.zeros(4 * c_out))

    @property
    def hidden(self) -> int:
        return self.conv_b.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"conv.w": self.conv_w, "conv.b": self.conv_b, "lstm.wx": self.wx,
                "lstm.wh": self.wh, "lstm.b": self.b}


@dataclass
class SpatioTemporalNet:
    block1: TemporalConvBlock
    block2: TemporalConvBlock
    head_w: np.ndarray  # (1, hidden, 3)
    head_b: np.ndarray  # (1,)

    @classmethod
    def zeros(cls, channels: Sequence[int] = NET_CHANNELS) -> SpatioTemporalNet:
        c0, c1, c2, c3 = channels
        return cls(TemporalConvBlock.zeros(c0, c1), TemporalConvBlock.zeros(c1, c2),
                   np.zeros((c3, c2, 3)), np.zeros(c3))

    @classmethod
    def random(cls, rng: np.random.Generator, head_scale: float = 0.1,
               channels: Sequence[int] = NET_CHANNELS) -> SpatioTemporalNet:
        net = cls.zeros(channels)
        for blk in (net.block1, net.block2):
            fan_in = blk.conv_w.shape[1] * 3
            blk.conv_w[...] = rng.normal(0, 1 / math.sqrt(fan_in), blk.conv_w.shape)
            k = 1 / math.sqrt(blk.hidden)
            blk.wx[...] = rng.uniform(-k, k, blk.wx.shape)
            blk.wh[...] = rng.uniform(-k, k, blk.wh.shape)
            blk.b[blk.hidden : 2 * blk.hidden] = 1.0  # forget gate bias
        net.head_w[...] = head_scale * rng.normal(0, 1 / math.sqrt(net.head_w.shape[1] * 3), net.head_w.shape)
        return net

    def named_parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for tag, blk in (("block1", self.block1), ("block2", self.block2)):
            for k, v in blk.arrays().items():
                out[f"{tag}.{k}"] = v
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out

    def copy(self) -> SpatioTemporalNet:
        b1, b2 = (TemporalConvBlock(*(a.copy() for a in (b.conv_w, b.conv_b, b.wx, b.wh, b.b)))
                  for b in (self.block1, self.block2))
        return SpatioTemporalNet(b1, b2, self.head_w.copy(), self.head_b.copy())

    def fresh_state(self, length: int) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(np.zeros((length, b.hidden)), np.zeros((length, b.hidden))) for b in (self.block1, self.block2)]


def net_features(g: np.ndarray) -> np.ndarray:
    return np.stack([g, g * g, g * g * g], axis=1)


def net_forward(net: SpatioTemporalNet, g: np.ndarray, state):
    """One iteration of the network on ring gradient ``g``.

    Returns ``(magnitude, new_state, cache)``; the cache feeds
    :func:`net_backward_through_time`.
    """
    x = net_features(g)
    new_state, caches = [], []
    for blk, (h, c) in zip((net.block1, net.block2), state):
        z, conv_cache = conv1d_forward(x, blk.conv_w, blk.conv_b)
        a = relu(z)
        h, c, lstm_cache = lstm_forward(a, h, c, blk.wx, blk.wh, blk.b)
        new_state.append((h, c))
        caches.append((conv_cache, z, lstm_cache))
        x = h
    z, head_cache = conv1d_forward(x, net.head_w, net.head_b)
    return relu(z[:, 0]), new_state, (caches, head_cache, z[:, 0])


def net_direction(net: SpatioTemporalNet, g, state=None):
    """``(direction, magnitude, new_state)``; the direction never opposes ``g``.

    ``g`` may be a ring array or :class:`BoundaryValues`; ``sign(0) = 0``.
    """
    if isinstance(g, BoundaryValues):
        g = g.as_ring()
    g = np.asarray(g, dtype=float)
    if state is None:
        state = net.fresh_state(g.size)
    m, state, _ = net_forward(net, g, state)
    return m * np.sign(g), m, state


def net_backward_through_time(net: SpatioTemporalNet, caches: list, dms: list[np.ndarray]) -> dict[str, np.ndarray]:
    """Gradient of ``sum_t <dms[t], magnitude_t>`` with respect to the weights."""
    grads = {k: np.zeros_like(v) for k, v in net.named_parameters().items()}
    blocks = (net.block1, net.block2)
    carry = [(0.0, 0.0), (0.0, 0.0)]
    for (block_caches, head_cache, z_head), dm in zip(reversed(caches), reversed(dms)):
        dz = (dm * (z_head > 0))[:, None]
        dx, g = conv1d_backward(head_cache, net.head_w, dz)
        grads["head.w"] += g["w"]
        grads["head.b"] += g["b"]
        new_carry = [None, None]
        for k in (1, 0):
            blk = blocks[k]
            conv_cache, z, lstm_cache = block_caches[k]
            dh = dx + carry[k][0]
            dc = np.zeros_like(dh) + carry[k][1]
            da, dh_prev, dc_prev, g = lstm_backward(lstm_cache, blk.wx, blk.wh, dh, dc)
            tag = f"block{k + 1}"
            grads[f"{tag}.lstm.wx"] += g["wx"]
            grads[f"{tag}.lstm.wh"] += g["wh"]
            grads[f"{tag}.lstm.b"] += g["b"]
            dx, g = conv1d_backward(conv_cache, blk.conv_w, da * (z > 0))
            grads[f"{tag}.conv.w"] += g["w"]
            grads[f"{tag}.conv.b"] += g["b"]
            new_carry[k] = (dh_prev, dc_prev)
        carry = new_carry
    return grads


# -- parameters and optimizer state ------------------------------------------


@dataclass
class HybridParams:
    eta_adam: float = DEFAULT_ETAS[0]
    eta_rms: float = DEFAULT_ETAS[1]
    eta_net: float = DEFAULT_ETAS[2]
    net: SpatioTemporalNet = field(default_factory=SpatioTemporalNet.zeros)
    exploration_log_std: float = math.log(0.01)

    def __post_init__(self):
        for v in (self.eta_adam, self.eta_rms, self.eta_net, self.exploration_log_std):
            if not math.isfinite(v):
                raise ValueError("hybrid parameters must be finite")

    def copy(self) -> HybridParams:
        return replace(self, net=self.net.copy())

    def flat(self) -> dict[str, np.ndarray]:
        """All trainable values by name; scalars as 0-d arrays (copies)."""
        out = {"eta_adam": np.array(self.eta_adam), "eta_rms": np.array(self.eta_rms),
               "eta_net": np.array(self.eta_net), "log_std": np.array(self.exploration_log_std)}
        for k, v in self.net.named_parameters().items():
            out[f"net.{k}"] = v.copy()
        return out

    def with_flat(self, values: dict[str, np.ndarray]) -> HybridParams:
        net = self.net.copy()
        named = net.named_parameters()
        for k, v in values.items():
            if k.startswith("net."):
                named[k[4:]][...] = v
        return HybridParams(float(values["eta_adam"]), float(values["eta_rms"]), float(values["eta_net"]),
                            net, float(values["log_std"]))


@dataclass
class OptimizerState:
    adam: AdamState
    rms: RmsPropState
    net: list
    warm: WarmStart = field(default_factory=WarmStart)

    @classmethod
    def fresh(cls, params: HybridParams, size: int) -> OptimizerState:
        return cls(AdamState.fresh(size), RmsPropState.fresh(size), params.net.fresh_state(size))


@dataclass(frozen=True)
class ContributionRecord:
    adam: float
    rms: float
    net: float


def _blend(params: HybridParams, g: np.ndarray, state: OptimizerState, keep_cache: bool = False):
    d_adam, adam = adam_direction(state.adam, g)
    d_rms, rms = rmsprop_direction(state.rms, g)
    m, net_state, cache = net_forward(params.net, g, state.net)
    d_net = m * np.sign(g)
    parts = (params.eta_adam * d_adam, params.eta_rms * d_rms, params.eta_net * d_net)
    step = parts[0] + parts[1] + parts[2]
    record = ContributionRecord(*(float(np.mean(np.abs(p))) for p in parts))
    new_state = OptimizerState(adam, rms, net_state, state.warm)
    extra = (d_adam, d_rms, m, cache) if keep_cache else None
    return step, new_state, record, extra


def hybrid_step(problem: Problem, u, state: OptimizerState, params: HybridParams,
                cfg: CostConfig = CostConfig(), basis=None):
    """One deterministic update from ``u``.

    Returns ``(u_next, state_next, cost_at_u, contributions)``; ``u`` and
    ``u_next`` use the ring layout (a :class:`BoundaryValues` is accepted).
    """
    if isinstance(u, BoundaryValues):
        u = u.as_ring()
    out, _, g = cost_ring(problem, u, cfg, basis, with_grad=True, warm=state.warm)
    step, state, record, _ = _blend(params, g, state)
    return u - step, state, out, record


@dataclass
class RunResult:
    trace: list[CostBreakdown]
    contributions: list[ContributionRecord]
    best_u: BoundaryValues
    best_iter: int
    magnitudes: list[np.ndarray] = field(default_factory=list, repr=False)
    error: str | None = None

    @property
    def best_cost(self) -> float:
        return self.trace[self.best_iter].f

    def best_so_far(self, k: int) -> float:
        """Lowest cost among iterations ``0..k``."""
        return min(b.f for b in self.trace[: k + 1])


def run(problem: Problem, params: HybridParams, guess_strategy: GuessStrategy = GuessStrategy("mean"),
        iters: int = 32, cfg: CostConfig = CostConfig(), record_net: bool = False) -> RunResult:
    """``iters`` hybrid updates from the initial guess.

    ``trace[k]`` is the cost after ``k`` updates; ``contributions[k - 1]``
    describes update ``k``. Best iteration is the first minimum.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    basis = source_basis(problem.grid)
    u = guess_ring(guess_strategy, problem, basis)
    state = OptimizerState.fresh(params, u.size)
    trace, contribs, mags = [], [], []
    best_u, best_iter, error = u.copy(), 0, None
    for k in range(iters + 1):
        try:
            res = cost_ring(problem, u, cfg, basis, with_grad=k < iters, warm=state.warm)
        except SolverError as e:
            error = str(e)
            break
        out = res[0]
        trace.append(out)
        if out.f < trace[best_iter].f:
            best_u, best_iter = u.copy(), k
        if k == iters:
            break
        step, state, record, extra = _blend(params, res[-1], state, keep_cache=record_net)
        if record_net:
            mags.append(extra[2])
        contribs.append(record)
        u = u - step
    if not trace:
        raise SolverError(f"hybrid run failed on initial guess: {error}", float("nan"))
    return RunResult(trace, contribs, BoundaryValues.from_ring(problem.grid, best_u), best_iter, mags, error)


def probe_net_output_variation(params: HybridParams, problem: Problem, iters: int = 32,
                               guess_strategy: GuessStrategy = GuessStrategy("mean"),
                               cfg: CostConfig = CostConfig()) -> list[float]:
    """Mean ``|magnitude_t - magnitude_1|`` for iterations ``t = 2..iters``."""
    if iters < 2:
        raise ValueError("iters must be at least 2")
    result = run(problem, params, guess_strategy, iters, cfg, record_net=True)
    first = result.magnitudes[0]
    return [float(np.mean(np.abs(m - first))) for m in result.magnitudes[1:]]


# -- policy gradient -----------------------------------------------------------


@dataclass
class Episode:
    problem_id: int
    grads: list[np.ndarray]
    actions: list[np.ndarray]
    rewards: list[float]
    costs: list[float]  # cost at u_0 .. u_T


def rollout(problem: Problem, params: HybridParams, guess_strategy: GuessStrategy, steps: int,
            rng: np.random.Generator | None, cfg: CostConfig = CostConfig()) -> Episode:
    """Sample one episode; ``rng=None`` disables exploration noise."""
    basis = source_basis(problem.grid)
    u = guess_ring(guess_strategy, problem, basis)
    state = OptimizerState.fresh(params, u.size)
    sigma = math.exp(params.exploration_log_std)
    ep = Episode(problem.id, [], [], [], [])
    out, _, g = cost_ring(problem, u, cfg, basis, with_grad=True, warm=state.warm)
    ep.costs.append(out.f)
    for t in range(steps):
        step, state, _, _ = _blend(params, g, state)
        action = -step
        if rng is not None:
            action = action + sigma * rng.standard_normal(action.shape)
        ep.grads.append(g)
        ep.actions.append(action)
        u = u + action
        res = cost_ring(problem, u, cfg, basis, with_grad=t < steps - 1, warm=state.warm)
        out, g = res[0], res[-1]
        ep.costs.append(out.f)
        ep.rewards.append(-out.f)
    return ep


def log_prob_and_grad(params: HybridParams, episode: Episode, step_weights: Sequence[float] | None = None):
    """Weighted sum of per-step Gaussian log-densities and its gradient.

    The mean action at step ``t`` is replayed from the recorded gradients
    with fresh optimizer and recurrent state, so only the policy is
    differentiated. Gradients are keyed as in :meth:`HybridParams.flat`.
    """
    T = len(episode.actions)
    w = np.ones(T) if step_weights is None else np.asarray(step_weights, dtype=float)
    L = episode.actions[0].size
    log_std = params.exploration_log_std
    inv_var = math.exp(-2 * log_std)
    state = OptimizerState.fresh(params, L)
    total = 0.0
    d_eta = np.zeros(3)
    d_log_std = 0.0
    caches, dms = [], []
    for t in range(T):
        g, a = episode.grads[t], episode.actions[t]
        step, state, _, (d_adam, d_rms, m, cache) = _blend(params, g, state, keep_cache=True)
        diff = a + step  # a - mu with mu = -step
        sq = float(np.sum(diff * diff))
        total += w[t] * (-0.5 * sq * inv_var - L * log_std - 0.5 * L * _LOG_2PI)
        dmu = w[t] * diff * inv_var
        sgn = np.sign(g)
        d_eta -= (float(dmu @ d_adam), float(dmu @ d_rms), float(dmu @ (m * sgn)))
        d_log_std += w[t] * (sq * inv_var - L)
        caches.append(cache)
        dms.append(-params.eta_net * sgn * dmu)
    grads = {"eta_adam": np.array(d_eta[0]), "eta_rms": np.array(d_eta[1]),
             "eta_net": np.array(d_eta[2]), "log_std": np.array(d_log_std)}
    for k, v in net_backward_through_time(params.net, caches, dms).items():
        grads[f"net.{k}"] = v
    return total, grads


def returns_to_go(rewards: Sequence[float], mode: str = "sum") -> np.ndarray:
    r = np.asarray(rewards, dtype=float)
    if mode == "sum":
        return np.cumsum(r[::-1])[::-1].copy()
    if mode == "final":
        return np.full(r.shape, r[-1])
    raise ValueError(f"unknown return mode {mode!r}")


@dataclass
class PolicyGradientConfig:
    batch_size: int = 4
    clip_norm: float = 1.0
    baseline_decay: float = 0.9
    return_mode: str = "sum"
    eval_every: int = 20
    seed: int = 0
    explore: bool = True
    guess: GuessStrategy = field(default_factory=lambda: GuessStrategy("mean"))
    cost: CostConfig = field(default_factory=CostConfig)


def validation_cost(params: HybridParams, problems: Sequence[Problem], steps: int,
                    guess_strategy: GuessStrategy, cfg: CostConfig = CostConfig()) -> float:
    """Mean best-so-far cost of deterministic ``steps``-update runs."""
    return float(np.mean([run(p, params, guess_strategy, steps, cfg).best_cost for p in problems]))


def train_policy_gradient(train_problems: Sequence[Problem], val_problems: Sequence[Problem],
                          params0: HybridParams, episodes: int = 200, T: int = 8, lr: float = 1e-3,
                          cfg: PolicyGradientConfig | None = None, history: list | None = None) -> HybridParams:
    """REINFORCE with reward-to-go and a per-step moving-average baseline.

    Episodes are collected in batches of ``cfg.batch_size``; each batch
    gives one clipped gradient-ascent step. Every ``cfg.eval_every``
    episodes (and at the start and end) the deterministic policy is scored
    on the validation problems and the best parameters so far are kept.
    ``history`` receives ``(episodes_done, val_cost)`` tuples.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    cfg = cfg or PolicyGradientConfig()
    rng = np.random.default_rng(cfg.seed)
    params = params0.copy()

    def score(p):
        v = validation_cost(p, val_problems, T, cfg.guess, cfg.cost)
        if not math.isfinite(v):
            raise TrainingError("non-finite validation cost")
        return v

    best, best_val = params.copy(), score(params)
    if history is not None:
        history.append((0, best_val))
    baseline = None
    done = 0
    next_eval = cfg.eval_every
    while done < episodes:
        batch = min(cfg.batch_size, episodes - done)
        total = {k: np.zeros_like(v) for k, v in params.flat().items()}
        for _ in range(batch):
            problem = train_problems[int(rng.integers(len(train_problems)))]
            ep = rollout(problem, params, cfg.guess, T, rng if cfg.explore else None, cfg.cost)
            G = returns_to_go(ep.rewards, cfg.return_mode)
            if not np.all(np.isfinite(G)):
                raise TrainingError(f"non-finite return on problem {problem.id}")
            baseline = G.copy() if baseline is None else cfg.baseline_decay * baseline + (1 - cfg.baseline_decay) * G
            if not cfg.explore:
                continue
            _, grads = log_prob_and_grad(params, ep, G - baseline)
            for k in total:
                total[k] += grads[k] / batch
        done += batch
        norm = math.sqrt(sum(float(np.sum(v * v)) for v in total.values()))
        if norm > 0 and lr > 0:
            scale = lr * min(1.0, cfg.clip_norm / norm)
            flat = params.flat()
            params = params.with_flat({k: flat[k] + scale * total[k] for k in flat})
        if done >= next_eval or done >= episodes:
            next_eval += cfg.eval_every
            v = score(params)
            if history is not None:
                history.append((done, v))
            if v < best_val:
                best, best_val = params.copy(), v
    return best
