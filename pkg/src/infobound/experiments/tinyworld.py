"""Exact enumeration oracle for small learning problems.

A :class:`TinyWorld` lists every instance ``z`` with its probability, every
hypothesis ``w``, the loss of each hypothesis on each instance, and the
randomized learning algorithm as a row-stochastic matrix with one row per
possible training sample.  Samples are ordered tuples ``(z_1, ..., z_n)``
indexed in mixed radix with ``z_1`` most significant.

With that, every expectation over ``P_{W,S} = D^n x P_{W|S}`` is a finite sum:
the mutual information ``I(S; W)``, the expected generalization gap, the
replace-one stability average, and the layer-wise chain ``I(T_k; W)`` when
the hypotheses are heads on a fixed stack of hidden layers.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..bounds import BoundInputs, main_bound, subgaussian_sigma
from ..infotheory import ETA_FLOOR, InfoChain, plugin_mi
from ..net import (Layer, LossEvaluator, Network, batch_losses, forward,
                   layer_from_dict, layer_to_dict)

DEFAULT_BUDGET = 10**7
SOUNDNESS_ATOL = 1e-12


class BudgetExceeded(RuntimeError):
    pass


def _code_points(values: np.ndarray, decimals: int = 12) -> np.ndarray:
    """Integer ids for rows of ``values``; equal rows (after rounding) share an id."""
    v = np.round(np.asarray(values, dtype=np.float64), decimals) + 0.0
    _, ids = np.unique(v.reshape(len(v), -1), axis=0, return_inverse=True)
    return ids.ravel()


@dataclass
class TinyWorld:
    """A fully enumerable learning problem.

    Attributes
    ----------
    probs : (Z,) instance distribution ``D``
    n : sample size
    algorithm : (Z**n, W) row-stochastic ``P_{W|S}``
    loss_table : (W, Z) loss of hypothesis ``w`` on instance ``z``
    loss_range : declared ``(a, b)`` containing every loss value
    stage_codes : optional (L+1, Z) ids of ``(T_k(x_z), y_z)``; row 0 is the
        identity.  ``None`` means no hidden layers.
    """

    probs: np.ndarray
    n: int
    algorithm: np.ndarray
    loss_table: np.ndarray
    loss_range: tuple = (0.0, 1.0)
    stage_codes: Optional[np.ndarray] = None
    name: str = ""
    meta: dict = field(default_factory=dict)
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.algorithm = np.asarray(self.algorithm, dtype=np.float64)
        self.loss_table = np.asarray(self.loss_table, dtype=np.float64)
        z, w = self.num_instances, self.num_hypotheses
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError("instance probabilities must form a PMF")
        if self.n < 1:
            raise ValueError("sample size must be positive")
        if self.algorithm.shape != (z**self.n, w):
            raise ValueError(f"algorithm map must have shape {(z**self.n, w)}, got {self.algorithm.shape}")
        if np.any(self.algorithm < 0) or np.any(np.abs(self.algorithm.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("every algorithm row must be a PMF")
        if self.loss_table.shape != (w, z):
            raise ValueError(f"loss table must have shape {(w, z)}")
        a, b = self.loss_range
        if np.any(self.loss_table < a) or np.any(self.loss_table > b):
            raise ValueError("loss table leaves the declared loss range")
        if self.stage_codes is None:
            self.stage_codes = np.arange(z)[None, :]
        self.stage_codes = np.asarray(self.stage_codes, dtype=np.int64)
        if self.stage_codes.ndim != 2 or self.stage_codes.shape[1] != z:
            raise ValueError("stage codes need one id per instance per stage")

    @property
    def num_instances(self) -> int:
        return len(self.probs)

    @property
    def num_hypotheses(self) -> int:
        return self.loss_table.shape[0]

    @property
    def depth(self) -> int:
        return self.stage_codes.shape[0] - 1

    @property
    def num_samples(self) -> int:
        return self.num_instances**self.n

    def samples(self) -> np.ndarray:
        """All ``Z**n`` samples as rows of instance indices, in algorithm-row order."""
        z = self.num_instances
        idx = np.arange(z**self.n)
        radix = z ** np.arange(self.n - 1, -1, -1)
        return (idx[:, None] // radix[None, :]) % z

    def sample_index(self, sample) -> int:
        idx = 0
        for v in sample:
            idx = idx * self.num_instances + int(v)
        return idx

    def check_budget(self):
        states = self.num_samples * self.num_hypotheses
        if states > self.budget:
            raise BudgetExceeded(f"{states} joint states exceed the budget of {self.budget}")

    # ------------------------------------------------------------------
    # constructors

    @classmethod
    def constant(cls, probs, n: int, loss_table, hypothesis: int = 0, **kw) -> "TinyWorld":
        """Algorithm that ignores its input and always returns ``hypothesis``."""
        loss_table = np.asarray(loss_table, dtype=np.float64)
        A = np.zeros((len(probs) ** n, loss_table.shape[0]))
        A[:, hypothesis] = 1.0
        return cls(np.asarray(probs, dtype=np.float64), n, A, loss_table, **kw)

    @classmethod
    def from_network(cls, X, y, probs, n: int, layers: Sequence[Layer], heads: Sequence[Layer],
                     algorithm="erm", temperature: float = 4.0, name: str = "",
                     budget: int = DEFAULT_BUDGET) -> "TinyWorld":
        """World whose hypotheses are heads on fixed hidden layers.

        ``algorithm`` is ``"erm"`` (uniform over empirical 0-1 risk
        minimizers), ``"gibbs"`` (``P(w|S) ~ exp(-temperature * n * R_S(w))``)
        or an explicit ``(Z**n, W)`` matrix.
        """
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        layers = tuple(layers)
        loss = LossEvaluator.zero_one()
        chain = forward(Network(layers, heads[0]), X)
        codes = [np.arange(len(X))]
        for stage in chain.stages[1:]:
            codes.append(_code_points(np.column_stack([stage, y])))
        table = np.array([batch_losses(loss, Network(layers, h).head.apply(chain.stages[-1]), y)
                          for h in heads])
        world = cls(np.asarray(probs, dtype=np.float64), n,
                    np.full((len(X) ** n, len(heads)), 1.0 / len(heads)), table,
                    (0.0, 1.0), np.array(codes), name=name, budget=budget,
                    meta={"X": X.tolist(), "y": y.tolist(),
                          "layers": [layer_to_dict(l) for l in layers],
                          "heads": [layer_to_dict(h) for h in heads],
                          "algorithm": algorithm if isinstance(algorithm, str) else "matrix",
                          "temperature": temperature})
        if isinstance(algorithm, str):
            world.algorithm = risk_algorithm(world, algorithm, temperature)
        else:
            world.algorithm = np.asarray(algorithm, dtype=np.float64)
        world.__post_init__()
        return world

    # ------------------------------------------------------------------
    # serialization

    def to_dict(self) -> dict:
        if self.meta.get("layers") is not None and self.meta.get("algorithm") != "matrix":
            return {"name": self.name, "points": self.meta["X"], "labels": self.meta["y"],
                    "probs": self.probs.tolist(), "n": self.n, "layers": self.meta["layers"],
                    "heads": self.meta["heads"], "algorithm": self.meta["algorithm"],
                    "temperature": self.meta["temperature"]}
        d = {"name": self.name, "probs": self.probs.tolist(), "n": self.n,
             "algorithm": self.algorithm.tolist(), "loss_table": self.loss_table.tolist(),
             "loss_range": list(self.loss_range)}
        if self.depth:
            d["stage_codes"] = self.stage_codes.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TinyWorld":
        budget = int(d.get("budget", DEFAULT_BUDGET))
        if "heads" in d:
            algo = d.get("algorithm", "erm")
            return cls.from_network(d["points"], d["labels"], d["probs"], int(d["n"]),
                                    [layer_from_dict(l) for l in d.get("layers", [])],
                                    [layer_from_dict(h) for h in d["heads"]],
                                    algo if isinstance(algo, str) else np.asarray(algo),
                                    float(d.get("temperature", 4.0)), d.get("name", ""), budget)
        if d.get("algorithm") == "constant":
            return cls.constant(d["probs"], int(d["n"]), d["loss_table"], int(d.get("hypothesis", 0)),
                                loss_range=tuple(d.get("loss_range", (0.0, 1.0))),
                                name=d.get("name", ""), budget=budget)
        return cls(np.asarray(d["probs"], dtype=np.float64), int(d["n"]),
                   np.asarray(d["algorithm"], dtype=np.float64),
                   np.asarray(d["loss_table"], dtype=np.float64),
                   tuple(d.get("loss_range", (0.0, 1.0))),
                   None if d.get("stage_codes") is None else np.asarray(d["stage_codes"]),
                   d.get("name", ""), budget=budget)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def empirical_risks(world: TinyWorld) -> np.ndarray:
    """``R_S(w)`` for every sample (rows) and hypothesis (columns)."""
    S = world.samples()
    return world.loss_table[:, S].mean(axis=2).T


def risk_algorithm(world: TinyWorld, kind: str, temperature: float = 4.0) -> np.ndarray:
    rs = empirical_risks(world)
    if kind == "erm":
        best = np.isclose(rs, rs.min(axis=1, keepdims=True), rtol=0, atol=1e-12)
        return best / best.sum(axis=1, keepdims=True)
    if kind == "gibbs":
        logits = -temperature * world.n * rs
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        return w / w.sum(axis=1, keepdims=True)
    raise ValueError(f"unknown algorithm {kind!r}")


# ----------------------------------------------------------------------------
# exact quantities


@dataclass(frozen=True)
class TinyWorldResult:
    mi_S_W: float
    exact_gap: float
    exact_beta: float
    mi_chain: InfoChain
    eta_exact: float
    population_risks: np.ndarray
    best_risk: float

    def to_dict(self) -> dict:
        eta = None if math.isnan(self.eta_exact) else self.eta_exact
        return {"mi_S_W": self.mi_S_W, "exact_gap": self.exact_gap, "exact_beta": self.exact_beta,
                "mi_chain": [float(v) for v in self.mi_chain.mi_per_layer], "eta_exact": eta,
                "best_risk": self.best_risk, "units": "nats"}


def _joint(world: TinyWorld) -> np.ndarray:
    S = world.samples()
    ps = np.prod(world.probs[S], axis=1)
    return ps[:, None] * world.algorithm


def stage_information(world: TinyWorld, joint: Optional[np.ndarray] = None) -> np.ndarray:
    """Exact ``I(T_k; W)`` for every stage ``k``, with ``T_0 = S``."""
    joint = _joint(world) if joint is None else joint
    S = world.samples()
    mi = []
    for codes in world.stage_codes:
        _, group = np.unique(codes[S], axis=0, return_inverse=True)
        group = group.ravel()
        table = np.zeros((group.max() + 1, joint.shape[1]))
        np.add.at(table, group, joint)
        mi.append(plugin_mi(table))
    return np.array(mi)


def exact_replace_one(world: TinyWorld) -> float:
    """Signed replace-one average ``(1/n) sum_i E[l(W, Z'_i) - l(W^i, Z'_i)]``.

    Evaluated by direct enumeration over ``(S, i, Z'_i)`` with ``W`` and
    ``W^i`` drawn independently from their algorithm rows.
    """
    S = world.samples()
    z = world.num_instances
    ps = np.prod(world.probs[S], axis=1)
    expected_loss = world.algorithm @ world.loss_table  # (samples, Z)
    rows = np.arange(len(S))
    total = 0.0
    for i in range(world.n):
        place = z ** (world.n - 1 - i)
        base = rows - S[:, i] * place
        for zp in range(z):
            swapped = base + zp * place
            diff = expected_loss[rows, zp] - expected_loss[swapped, zp]
            total += world.probs[zp] * float(np.dot(ps, diff))
    return float(total / world.n)


def tiny_world_exact(world: TinyWorld) -> TinyWorldResult:
    """Every oracle quantity of ``world`` by exhaustive summation."""
    world.check_budget()
    joint = _joint(world)
    risks = world.loss_table @ world.probs
    gap = float(np.sum(joint * (risks[None, :] - empirical_risks(world))))
    mi = stage_information(world, joint)
    chain = InfoChain.from_mi(mi, "exact")
    L = world.depth
    if L == 0 or mi[0] <= ETA_FLOOR:
        eta = float("nan")
    else:
        eta = float((mi[-1] / mi[0]) ** (1.0 / L))
    return TinyWorldResult(float(mi[0]), gap, exact_replace_one(world), chain, eta,
                           risks, float(risks.min()))


@dataclass(frozen=True)
class SoundnessReport:
    gap: float
    mi_last: float
    lemma4_rhs: float
    theorem2_rhs: float
    sigma: float

    @property
    def lemma4_slack(self) -> float:
        return self.lemma4_rhs - abs(self.gap)

    @property
    def theorem2_slack(self) -> float:
        return self.theorem2_rhs - abs(self.gap)

    @property
    def holds(self) -> bool:
        return self.lemma4_slack >= -SOUNDNESS_ATOL and self.theorem2_slack >= -SOUNDNESS_ATOL

    def to_dict(self) -> dict:
        return {"gap": self.gap, "mi_last": self.mi_last, "lemma4_rhs": self.lemma4_rhs,
                "lemma4_slack": self.lemma4_slack, "theorem2_rhs": self.theorem2_rhs,
                "theorem2_slack": self.theorem2_slack, "sigma": self.sigma, "holds": self.holds}


def lemma4_soundness_check(world: TinyWorld) -> SoundnessReport:
    """Compare the exact gap with the layer-conditional and depth-factor bounds.

    ``|gap| <= sqrt(2 sigma^2 I(T_L; h) / n)`` and
    ``|gap| <= eta^(L/2) sqrt(2 sigma^2 I(S; W) / n)`` with the exact ``eta``
    of the world's information chain and ``sigma = (b - a) / 2``.
    """
    res = tiny_world_exact(world)
    sigma = subgaussian_sigma(world.loss_range)
    mi = res.mi_chain.mi_per_layer
    lemma = math.sqrt(2.0 * sigma**2 * mi[-1] / world.n)
    eta = res.eta_exact
    if math.isnan(eta):
        eta = 1.0
    if eta > 1.0 + 1e-9:
        raise ValueError(f"exact chain increases (eta = {eta}); enumeration is inconsistent")
    if eta <= 0.0:
        theorem = 0.0
    else:
        theorem = main_bound(BoundInputs(L=world.depth, eta=min(eta, 1.0), sigma=sigma,
                                         n=world.n, mi_nats=res.mi_S_W)).value
    return SoundnessReport(res.exact_gap, float(mi[-1]), lemma, theorem, sigma)


# ----------------------------------------------------------------------------
# random corpus


def random_world(seed: int, max_n: int = 3, max_instances: int = 4,
                 max_hypotheses: int = 16) -> TinyWorld:
    """Draw one small world; roughly half are network worlds with hidden layers."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7172]))
    n = int(rng.integers(1, max_n + 1))
    z = int(rng.integers(2, max_instances + 1))
    w = int(rng.integers(2, max_hypotheses + 1))
    probs = rng.dirichlet(np.ones(z))
    style = rng.integers(0, 4)
    if style == 0:
        algo = rng.dirichlet(np.full(w, 0.3), size=z**n)
        table = rng.random((w, z))
        if rng.random() < 0.5:
            table = np.round(table)
        return TinyWorld(probs, n, algo, table, (0.0, 1.0), name=f"random-{seed}")
    d = int(rng.integers(2, 4))
    X = rng.integers(-2, 3, size=(z, d)).astype(np.float64)
    y = rng.integers(0, 2, size=z)
    layers = []
    width = d
    for _ in range(int(rng.integers(1, 3))):
        out = int(rng.integers(1, width + 1))
        W = rng.normal(size=(out, width))
        if rng.random() < 0.5 and out > 1:
            W[-1] = W[0] * rng.normal()  # rank deficient
        layers.append(Layer("dense", W, str(rng.choice(["relu", "tanh", "identity"])), width, out))
        width = out
    heads = [Layer("dense", rng.normal(size=(2, width)), "identity", width, 2) for _ in range(w)]
    if style == 1:
        algorithm = "erm"
    elif style == 2:
        algorithm = "gibbs"
    else:
        # random rule that sees the raw sample, not only the last stage
        algorithm = rng.dirichlet(np.full(w, 0.5), size=z**n)
    return TinyWorld.from_network(X, y, probs, n, layers, heads, algorithm,
                                  float(rng.uniform(0.5, 8.0)), name=f"net-{seed}")
