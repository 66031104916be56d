"""Plain and noisy mini-batch SGD with a mutual-information budget.

Noisy updates follow

    h_t   = h_{t-1}   - alpha_t  * mean_grad_h   + N(0, sigma_t^2 I)
    w_k,t = w_k,t-1   - beta_k,t * mean_grad_w_k + N(0, sigma_k,t^2 I)

and each iteration contributes at most
``(d/2) * log(1 + alpha_t^2 M^2 / (d sigma_t^2))`` nats to I(S; h), where
``d`` is the number of head parameters and ``M^2`` bounds the second moment
of the mean head gradient.

All randomness comes from Philox streams keyed by ``(seed, purpose, t, k)``,
so any iteration can be replayed in isolation and two runs sharing a seed
share their mini-batch and noise draws exactly.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .net import Network, LossEvaluator, ShapeError, backward, batch_losses, forward

SCHEDULE_KINDS = ("constant", "inverse_square")

_BATCH_STREAM = 1
_NOISE_STREAM = 2


def keyed_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the stream ``(seed, *key)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**64 - 1), *key])))


@dataclass(frozen=True)
class Schedule:
    """Learning-rate / noise-scale schedule.

    ``inverse_square`` uses ``alpha_t = c / t**2`` and ``sigma_t = sqrt(c) / t``.
    ``constant`` uses ``alpha_t = c`` and ``sigma_t = noise``.
    """

    kind: str
    c: float
    noise: Optional[float] = None

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not self.c > 0:
            raise ValueError("schedule constant must be positive")
        if self.kind == "constant" and (self.noise is None or not self.noise > 0):
            raise ValueError("constant schedule needs a positive noise scale")

    def at(self, t: int) -> tuple:
        return schedule_at(self.kind, self.c, t, self.noise)

    def ratio_sum(self, T) -> float:
        """``sum_{t<=T} alpha_t^2 / sigma_t^2``; ``T`` may be ``math.inf``."""
        if self.kind == "inverse_square":
            if math.isinf(T):
                return self.c * math.pi**2 / 6.0
            return self.c * math.fsum(1.0 / (i * i) for i in range(1, int(T) + 1))
        if math.isinf(T):
            raise ValueError("an infinite horizon is only summable for inverse_square")
        return int(T) * (self.c / self.noise) ** 2


def schedule_at(kind: str, C: float, t: int, noise: Optional[float] = None) -> tuple:
    """Return ``(alpha_t, sigma_t)`` for iteration ``t >= 1``."""
    if t < 1:
        raise ValueError("schedules are defined for t >= 1")
    if not C > 0:
        raise ValueError("C must be positive")
    if kind == "inverse_square":
        return C / (t * t), math.sqrt(C) / t
    if kind == "constant":
        if noise is None or not noise > 0:
            raise ValueError("constant schedule needs a positive noise scale")
        return C, noise
    raise ValueError(f"unknown schedule kind {kind!r}")


def mi_budget_increment(alpha: float, sigma: float, d: int, grad_moment: float) -> float:
    """Per-iteration information bound in nats.

    ``(d/2) * log1p(alpha^2 M^2 / (d sigma^2))`` where ``grad_moment`` is
    ``M^2``.  See :func:`mi_budget_cap` for the looser linear form.
    """
    if alpha == 0:
        return 0.0
    if sigma <= 0 or d < 1 or grad_moment < 0 or alpha < 0:
        raise ValueError("need alpha >= 0, sigma > 0, d >= 1, grad_moment >= 0")
    return 0.5 * d * math.log1p(alpha * alpha * grad_moment / (d * sigma * sigma))


def mi_budget_cap(alpha: float, sigma: float, grad_moment: float) -> float:
    return alpha * alpha * grad_moment / (2.0 * sigma * sigma)


# ----------------------------------------------------------------------------
# steps


def _check_grads(net: Network, grads: Sequence) -> list:
    grads = list(grads.as_list() if hasattr(grads, "as_list") else grads)
    layers = net.all_layers()
    if len(grads) != len(layers):
        raise ShapeError(f"{len(grads)} gradients for {len(layers)} layers")
    for k, (layer, g) in enumerate(zip(layers, grads)):
        if not layer.trainable:
            continue
        if g is None or np.shape(g) != layer.weights.shape:
            raise ShapeError(f"layer {k}: gradient shape {np.shape(g)} != {layer.weights.shape}")
    return grads


def sgd_step(net: Network, grads, lr: float) -> Network:
    grads = _check_grads(net, grads)
    return net.replace_weights([l.weights - lr * np.asarray(g) if l.trainable else None
                                for l, g in zip(net.all_layers(), grads)])


class NoiseKey(NamedTuple):
    """Position in the noise stream: the next step draws from ``(seed, counter)``."""

    seed: int
    counter: int = 1


def _per_layer(value, n: int) -> list:
    if np.ndim(value) == 0:
        return [float(value)] * n
    value = list(value)
    if len(value) != n:
        raise ShapeError(f"expected {n} per-layer values, got {len(value)}")
    return [float(v) for v in value]


def noisy_sgd_step(net: Network, grads, lrs, noise_scales, rng_state: NoiseKey,
                   noise: bool = True):
    """One noisy update; returns ``(new_net, next_rng_state)``.

    ``lrs`` and ``noise_scales`` are scalars or sequences aligned with
    ``net.all_layers()`` (hidden layers then head).  ``noise=False`` disables
    the Gaussian term, which reduces the step to :func:`sgd_step`; a zero
    scale disables it for one layer.
    """
    grads = _check_grads(net, grads)
    layers = net.all_layers()
    lrs = _per_layer(lrs, len(layers))
    scales = _per_layer(noise_scales, len(layers))
    seed, counter = rng_state
    new = []
    for k, (layer, g, lr, s) in enumerate(zip(layers, grads, lrs, scales)):
        if not layer.trainable:
            new.append(None)
            continue
        w = layer.weights - lr * np.asarray(g)
        if noise and s != 0:
            if s < 0:
                raise ValueError(f"layer {k}: noise scale must be non-negative")
            w = w + s * keyed_rng(seed, _NOISE_STREAM, counter, k).standard_normal(w.shape)
        new.append(w)
    return net.replace_weights(new), NoiseKey(seed, counter + 1)


# ----------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class NoisySGDConfig:
    batch_size: int
    iterations: int
    schedule: Schedule
    seed: int
    # per hidden layer; ``None`` entries freeze that layer.  Defaults to ``schedule``.
    layer_schedules: Optional[tuple] = None
    noise: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")

    def rates(self, net: Network, t: int) -> tuple:
        """``(lrs, noise_scales)`` aligned with ``net.all_layers()`` at step ``t``."""
        scheds = self.layer_schedules or (self.schedule,) * net.depth
        if len(scheds) != net.depth:
            raise ShapeError("one layer schedule per hidden layer required")
        pairs = [(0.0, 0.0) if s is None else s.at(t) for s in scheds] + [self.schedule.at(t)]
        return [p[0] for p in pairs], [p[1] for p in pairs]


class TraceRecord(NamedTuple):
    t: int
    alpha: float
    sigma: float
    head_grad_sq: float
    budget_increment: float


@dataclass
class TrainTrace:
    """Per-iteration record of a training run.

    ``m_hat`` is the running maximum of the squared norm of the mean
    mini-batch head gradient, used as the second-moment bound ``M^2`` when
    computing each budget increment.
    """

    head_dim: int
    records: list = field(default_factory=list)
    m_hat: float = 0.0

    def append(self, t, alpha, sigma, head_grad_sq) -> TraceRecord:
        self.m_hat = max(self.m_hat, head_grad_sq)
        inc = mi_budget_increment(alpha, sigma, self.head_dim, self.m_hat)
        rec = TraceRecord(t, alpha, sigma, head_grad_sq, inc)
        self.records.append(rec)
        return rec

    def __len__(self):
        return len(self.records)

    @property
    def mi_budget_total(self) -> float:
        return math.fsum(r.budget_increment for r in self.records)

    @property
    def mean_head_grad_sq(self) -> float:
        if not self.records:
            return 0.0
        return math.fsum(r.head_grad_sq for r in self.records) / len(self.records)

    def budget_with(self, grad_moment: Optional[float] = None) -> float:
        """Total budget recomputed with one fixed ``M^2`` (default: final ``m_hat``)."""
        m2 = self.m_hat if grad_moment is None else grad_moment
        return math.fsum(mi_budget_increment(r.alpha, r.sigma, self.head_dim, m2)
                         for r in self.records)

    def ratio_prefix_sums(self) -> np.ndarray:
        """Running ``sum alpha_t^2 / sigma_t^2``."""
        return np.cumsum([(r.alpha / r.sigma) ** 2 for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "alpha", "sigma", "head_grad_sq", "budget_increment", "budget_total"])
        total = 0.0
        for r in self.records:
            total += r.budget_increment
            w.writerow([r.t, repr(r.alpha), repr(r.sigma), repr(r.head_grad_sq),
                        repr(r.budget_increment), repr(total)])
        return buf.getvalue()


def batch_indices(seed: int, t: int, n: int, m: int) -> np.ndarray:
    """Mini-batch for iteration ``t``: ``m`` indices drawn with replacement."""
    return keyed_rng(seed, _BATCH_STREAM, t).integers(0, n, size=m)


def train(net: Network, X, y, config: NoisySGDConfig, loss: LossEvaluator):
    """Run ``config.iterations`` noisy SGD steps; returns ``(net, trace)``."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < config.batch_size:
        raise ValueError(f"dataset of {n} examples is smaller than batch_size {config.batch_size}")
    y = np.asarray(y)
    trace = TrainTrace(head_dim=net.head.weights.size)
    key = NoiseKey(config.seed, 1)
    for t in range(1, config.iterations + 1):
        idx = batch_indices(config.seed, t, n, config.batch_size)
        grads = backward(net, X[idx], y[idx], loss)
        lrs, scales = config.rates(net, t)
        trace.append(t, lrs[-1], scales[-1], float(np.sum(grads.head ** 2)))
        net, key = noisy_sgd_step(net, grads, lrs, scales, key, noise=config.noise)
    return net, trace


def dataset_loss(net: Network, X, y, loss: LossEvaluator) -> float:
    return float(batch_losses(loss, forward(net, X).logits, y).mean())
