"""Monte Carlo estimates of the generalization gap and replace-one stability.

A *learner* turns a training set and a seed into a hypothesis and scores a
hypothesis on a dataset; a *source* draws datasets.  Network training and
tiny-world algorithm maps both fit this shape, so the same estimators run on
either, and the tiny-world versions can be checked against exact values.

Every replication ``r`` derives its train, test, ghost and algorithm seeds
from ``(seed, r)`` alone.  Results do not depend on execution order or on
the number of worker processes.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Optional, Sequence

import numpy as np

from ..bounds import BoundInputs, main_bound, subgaussian_sigma
from ..infotheory import DEFAULT_BINS, InfoChain, replica_chain
from ..net import Layer, LossEvaluator, Network, batch_losses, forward, init_network
from ..optim import NoisySGDConfig, train
from .data import Dataset, DatasetSpec, gen_dataset
from .tinyworld import TinyWorld

_TRAIN, _TEST, _GHOST, _ALGO, _INDEX = 1, 2, 3, 4, 5


def replication_seed(seed: int, r: int, purpose: int) -> int:
    ss = np.random.SeedSequence([seed & (2**64 - 1), 0x3C, r, purpose])
    return int(ss.generate_state(1, np.uint64)[0])


# ----------------------------------------------------------------------------
# learners and sources


@dataclass(frozen=True)
class NetworkLearner:
    """Noisy-SGD training from a fixed initial network."""

    template: Network
    config: NoisySGDConfig
    loss: LossEvaluator
    eval_loss: Optional[LossEvaluator] = None

    @property
    def scoring_loss(self) -> LossEvaluator:
        return self.eval_loss or self.loss

    def fit(self, data: Dataset, seed: int):
        net, trace = train(self.template, data.X, data.y, replace(self.config, seed=seed), self.loss)
        return net, trace

    def hypothesis(self, fitted):
        return fitted[0]

    def losses(self, W: Network, data: Dataset) -> np.ndarray:
        return batch_losses(self.scoring_loss, forward(W, data.X).logits, data.y)


@dataclass(frozen=True)
class SpecSource:
    """i.i.d. draws from the fixed distribution named by ``spec``.

    ``spec.seed`` pins the distribution (blob centroids among others); the
    per-draw seed only selects the sampling stream.
    """

    spec: DatasetSpec

    def draw(self, n: int, seed: int) -> Dataset:
        return gen_dataset(replace(self.spec, n=n), "train", replication=seed)


@dataclass(frozen=True)
class WorldLearner:
    """Samples a hypothesis from the world's algorithm row for the training sample."""

    world: TinyWorld

    def fit(self, data: np.ndarray, seed: int):
        row = self.world.algorithm[self.world.sample_index(data)]
        u = np.random.default_rng(seed).random()
        return int(min(np.searchsorted(np.cumsum(row), u, side="right"), len(row) - 1))

    def hypothesis(self, fitted):
        return fitted

    def losses(self, W: int, data: np.ndarray) -> np.ndarray:
        return self.world.loss_table[W, np.asarray(data)]


@dataclass(frozen=True)
class WorldSource:
    world: TinyWorld

    def draw(self, n: int, seed: int) -> np.ndarray:
        return np.random.default_rng(seed).choice(self.world.num_instances, size=n, p=self.world.probs)


# ----------------------------------------------------------------------------
# estimates


def _mean_and_stderr(values: np.ndarray) -> tuple:
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    if len(values) < 2:
        return mean, float("nan")
    return mean, float(values.std(ddof=1) / math.sqrt(len(values)))


@dataclass(frozen=True)
class GapEstimate:
    mean_gap: float
    std_error: float
    replications: int
    records: tuple = field(default=(), repr=False)
    models: tuple = field(default=(), repr=False)

    @property
    def std_error_defined(self) -> bool:
        return not math.isnan(self.std_error)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replication", "gap"])
        for r, g in enumerate(self.records):
            w.writerow([r, repr(float(g))])
        w.writerow(["summary", repr(self.mean_gap)])
        w.writerow(["stderr", "" if math.isnan(self.std_error) else repr(self.std_error)])
        return buf.getvalue()


@dataclass(frozen=True)
class StabilityEstimate:
    beta_hat: float
    std_error: float
    replications: int
    records: tuple = field(default=(), repr=False)

    @property
    def std_error_defined(self) -> bool:
        return not math.isnan(self.std_error)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replication", "loss_difference"])
        for r, g in enumerate(self.records):
            w.writerow([r, repr(float(g))])
        w.writerow(["summary", repr(self.beta_hat)])
        w.writerow(["stderr", "" if math.isnan(self.std_error) else repr(self.std_error)])
        return buf.getvalue()


def _gap_one(learner, source, n, n_test, seed, keep_model, r):
    train_set = source.draw(n, replication_seed(seed, r, _TRAIN))
    test_set = source.draw(n_test, replication_seed(seed, r, _TEST))
    fitted = learner.fit(train_set, replication_seed(seed, r, _ALGO))
    W = learner.hypothesis(fitted)
    gap = float(learner.losses(W, test_set).mean() - learner.losses(W, train_set).mean())
    return gap, (fitted if keep_model else None)


def _stability_one(learner, source, n, seed, r):
    S = source.draw(n, replication_seed(seed, r, _TRAIN))
    ghost = source.draw(1, replication_seed(seed, r, _GHOST))
    i = int(np.random.default_rng(replication_seed(seed, r, _INDEX)).integers(n))
    Si = _replace_one(S, i, ghost)
    algo_seed = replication_seed(seed, r, _ALGO)
    W = learner.hypothesis(learner.fit(S, algo_seed))
    Wi = learner.hypothesis(learner.fit(Si, algo_seed))
    return float(learner.losses(W, ghost)[0] - learner.losses(Wi, ghost)[0])


def _replace_one(S, i, ghost):
    if isinstance(S, Dataset):
        X, y = S.X.copy(), S.y.copy()
        X[i], y[i] = ghost.X[0], ghost.y[0]
        return Dataset(X, y)
    S = np.array(S, copy=True)
    S[i] = ghost[0]
    return S


def _run(fn, replications: int, threads: int) -> list:
    if threads <= 1 or replications < 2:
        return [fn(r) for r in range(replications)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(replications), chunksize=max(1, replications // (4 * threads))))


def gap_estimate(learner, source, n: int, replications: int, seed: int,
                 n_test: Optional[int] = None, keep_models: bool = False,
                 threads: int = 1) -> GapEstimate:
    """Mean of ``R_test(W) - R_S(W)`` over independent replications."""
    if replications < 1:
        raise ValueError("replications must be at least 1")
    n_test = n_test or max(1000, 10 * n)
    out = _run(partial(_gap_one, learner, source, n, n_test, seed, keep_models),
               replications, threads)
    gaps = np.array([g for g, _ in out])
    mean, se = _mean_and_stderr(gaps)
    models = tuple(m for _, m in out) if keep_models else ()
    return GapEstimate(mean, se, replications, tuple(gaps), models)


def stability_estimate(learner, source, n: int, replications: int, seed: int,
                       threads: int = 1) -> StabilityEstimate:
    """Replace-one average ``l(W, Z'_i) - l(W^i, Z'_i)``.

    ``W`` and ``W^i`` share the algorithm seed, so with noisy SGD they see
    the same mini-batch indices and noise draws; only the replaced example
    differs.
    """
    if replications < 1:
        raise ValueError("replications must be at least 1")
    diffs = np.array(_run(partial(_stability_one, learner, source, n, seed), replications, threads))
    mean, se = _mean_and_stderr(diffs)
    return StabilityEstimate(mean, se, replications, tuple(diffs))


def measure_gap(net_template: Network, dataset_spec: DatasetSpec, train_config: NoisySGDConfig,
                loss: LossEvaluator, replications: int, eval_loss: Optional[LossEvaluator] = None,
                n_test: Optional[int] = None, keep_models: bool = False,
                threads: int = 1) -> GapEstimate:
    learner = NetworkLearner(net_template, train_config, loss, eval_loss)
    return gap_estimate(learner, SpecSource(dataset_spec), dataset_spec.n, replications,
                        dataset_spec.seed, n_test, keep_models, threads)


def replace_one_stability(net_template: Network, dataset_spec: DatasetSpec,
                          train_config: NoisySGDConfig, loss: LossEvaluator, replications: int,
                          eval_loss: Optional[LossEvaluator] = None,
                          threads: int = 1) -> StabilityEstimate:
    learner = NetworkLearner(net_template, train_config, loss, eval_loss)
    return stability_estimate(learner, SpecSource(dataset_spec), dataset_spec.n, replications,
                              dataset_spec.seed, threads)


# ----------------------------------------------------------------------------
# depth sweep


@dataclass(frozen=True)
class SweepConfig:
    dataset: DatasetSpec
    train: NoisySGDConfig
    loss: LossEvaluator = LossEvaluator.clipped_cross_entropy()
    eval_loss: LossEvaluator = LossEvaluator.zero_one()
    architecture: str = "halving"  # or "identity"
    activation: str = "tanh"
    bins: int = DEFAULT_BINS
    n_test: int = 1000
    init_seed: int = 0

    def network(self, L: int) -> Network:
        d = self.dataset.feature_dim
        k = self.dataset.num_classes
        if self.architecture == "halving":
            widths = [d]
            for _ in range(L):
                widths.append(widths[-1] // 2)
            if widths[-1] < 1:
                raise ValueError(f"cannot halve {d} features {L} times")
            return init_network(widths, k, self.init_seed, self.activation)
        if self.architecture == "identity":
            base = init_network([d], k, self.init_seed, self.activation)
            eye = [Layer("dense", np.eye(d), "identity", d, d) for _ in range(L)]
            return Network(tuple(eye), base.head)
        raise ValueError(f"unknown architecture {self.architecture!r}")


@dataclass(frozen=True)
class SweepRow:
    L: int
    mean_gap: float
    stderr: float
    chain: InfoChain
    mi_budget: float
    bound: float

    @property
    def mi_last(self) -> float:
        return float(self.chain.mi_per_layer[-1])

    @property
    def eta_geo(self) -> float:
        return self.chain.eta_geo_mean


SWEEP_HEADER = ["L", "mean_gap", "stderr", "mi_last", "eta_geo", "main_bound"]


def depth_sweep(base_config: SweepConfig, L_values: Sequence[int], replications: int,
                threads: int = 1) -> list:
    """One row per depth: measured gap, information chain and main bound.

    The bound uses the replica-averaged chain factor as ``eta`` (capped at 1
    and recorded as such when the estimate exceeds it), the mean
    noisy-SGD information budget as ``I(S, W)``, and ``sigma`` from the
    scoring loss range.
    """
    if not L_values:
        raise ValueError("L_values must be nonempty")
    cfg = base_config
    freeze = cfg.architecture == "identity"
    rows = []
    for L in L_values:
        net = cfg.network(L)
        train_cfg = cfg.train
        if freeze and L:
            train_cfg = replace(train_cfg, layer_schedules=(None,) * L)
        est = measure_gap(net, cfg.dataset, train_cfg, cfg.loss, replications,
                          cfg.eval_loss, cfg.n_test, keep_models=True, threads=threads)
        probe = gen_dataset(replace(cfg.dataset, n=cfg.n_test), "probe")
        chain = replica_chain([m[0] for m in est.models], probe.X, cfg.bins)
        budget = float(np.mean([m[1].mi_budget_total for m in est.models]))
        eta = chain.eta_geo_mean
        eta_used = 1.0 if (math.isnan(eta) or eta > 1.0 or eta <= 0.0) else eta
        bound = main_bound(BoundInputs(L=L, eta=eta_used, sigma=subgaussian_sigma(cfg.eval_loss.range),
                                       n=cfg.dataset.n, mi_nats=budget,
                                       provenance={"eta": "infochain", "mi": "sgd_budget"})).value
        rows.append(SweepRow(L, est.mean_gap, est.std_error, chain, budget, bound))
    return rows


def sweep_rows_table(rows) -> list:
    return [[r.L, r.mean_gap, r.stderr, r.mi_last, r.eta_geo, r.bound] for r in rows]
