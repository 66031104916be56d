"""Closed-form generalization, stability and excess-risk bounds.

Every bound has the shape ``exp(-(L/2) log(1/eta)) * sqrt(...)``: a depth
factor that decays with the number of contraction layers ``L`` times an
information term.  Information is in nats; ``sigma`` is the sub-Gaussian
constant of the loss, see :func:`subgaussian_sigma`.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

from .infotheory import log_sauer_growth_bound
from .optim import Schedule

KINDS = ("main", "stability", "noisy_sgd", "binary", "excess", "high_prob")


@dataclass(frozen=True)
class BoundInputs:
    L: int
    eta: float
    sigma: float
    n: int
    mi_nats: float = 0.0
    M: Optional[float] = None
    schedule: Optional[Schedule] = None
    T: Optional[float] = None
    vc_dim: Optional[int] = None
    delta: Optional[float] = None
    mi_cond: Optional[float] = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.L < 0:
            raise ValueError("L must be non-negative")
        if not 0 < self.eta <= 1:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.mi_nats < 0 or (self.mi_cond is not None and self.mi_cond < 0):
            raise ValueError("mutual information must be non-negative")
        if self.delta is not None and not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")

    def echo(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v is not None and k != "provenance"}
        if self.schedule is not None:
            d["schedule"] = {k: v for k, v in asdict(self.schedule).items() if v is not None}
        if self.T is not None and math.isinf(self.T):
            d["T"] = "inf"
        return d


@dataclass(frozen=True)
class BoundReport:
    kind: str
    value: float
    exp_factor: float
    sqrt_factor: float
    inputs: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value, "units": "nats",
                "factors": {"exp_factor": self.exp_factor, "sqrt_factor": self.sqrt_factor},
                "inputs": self.inputs, "provenance": self.provenance}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def depth_factor(L: int, eta: float) -> float:
    """``exp(-(L/2) * log(1/eta))``, i.e. ``eta ** (L/2)``."""
    if not 0 < eta <= 1:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    return math.exp(-(L / 2.0) * math.log(1.0 / eta))


def _report(kind, inp: BoundInputs, sqrt_factor: float) -> BoundReport:
    e = depth_factor(inp.L, inp.eta)
    return BoundReport(kind, e * sqrt_factor, e, sqrt_factor, inp.echo(), dict(inp.provenance))


def main_bound(inp: BoundInputs, conditional: bool = False) -> BoundReport:
    """Exponential bound on the expected generalization error.

    ``eta**(L/2) * sqrt(2 sigma^2 I(S, W) / n)``.  With ``conditional=True``
    the conditional information slot ``mi_cond`` replaces ``I(S, W)``.
    """
    mi = inp.mi_nats
    if conditional:
        if inp.mi_cond is None:
            raise ValueError("conditional bound needs mi_cond")
        mi = inp.mi_cond
    return _report("main", inp, math.sqrt(2.0 * inp.sigma**2 * mi / inp.n))


def stability_rate(inp: BoundInputs) -> BoundReport:
    """Average replace-one hypothesis stability rate; same value as the main bound."""
    r = main_bound(inp)
    return BoundReport("stability", r.value, r.exp_factor, r.sqrt_factor, r.inputs, r.provenance)


def noisy_sgd_bound(inp: BoundInputs, alphas=None, noise_scales=None) -> BoundReport:
    """Bound for noisy SGD with bounded head-gradient second moment ``M``.

    ``eta**(L/2) * sqrt((sigma^2/n) * sum_i M^2 alpha_i^2 / sigma_i^2)``.
    The sum comes from ``inp.schedule`` over ``inp.T`` steps (``T`` may be
    ``math.inf`` for ``inverse_square``) or from explicit per-step
    ``alphas``/``noise_scales``, e.g. a recorded training trace.
    """
    if inp.M is None or not inp.M > 0:
        raise ValueError("noisy_sgd_bound needs M > 0")
    if alphas is not None:
        ratio = math.fsum((a / s) ** 2 for a, s in zip(alphas, noise_scales, strict=True))
    else:
        if inp.schedule is None or inp.T is None:
            raise ValueError("noisy_sgd_bound needs a schedule and T")
        ratio = inp.schedule.ratio_sum(inp.T) if inp.T else 0.0
    return _report("noisy_sgd", inp, math.sqrt(inp.sigma**2 / inp.n * inp.M**2 * ratio))


def binary_bound(inp: BoundInputs) -> BoundReport:
    """Binary classification bound through the growth function of the head class."""
    d = inp.vc_dim
    if d is None or d < 1:
        raise ValueError("binary_bound needs vc_dim >= 1")
    base = 2.0 * inp.sigma**2 * d / inp.n
    if inp.n > d:
        base *= math.log(math.e * inp.n / d)
    return _report("binary", inp, math.sqrt(base))


def binary_bound_from_growth(inp: BoundInputs) -> float:
    """``eta**(L/2) * sqrt(2 sigma^2 log Pi(n) / n)`` with Sauer's bound for ``Pi``.

    Tighter than :func:`binary_bound` below the VC dimension, where
    ``log Pi(n) <= n log 2`` rather than ``d``.
    """
    return depth_factor(inp.L, inp.eta) * math.sqrt(
        2.0 * inp.sigma**2 * log_sauer_growth_bound(inp.n, inp.vc_dim) / inp.n)


def excess_risk_bound(report: BoundReport) -> float:
    """Bound on ``E[R(W)] - R*``; numerically the generalization bound itself."""
    if report.kind not in ("main", "noisy_sgd", "binary"):
        raise ValueError(f"no excess-risk form for a {report.kind!r} report")
    return report.value


def high_prob_bound(report: BoundReport, delta: float) -> float:
    """Markov-inequality lift: holds with probability at least ``1 - delta``."""
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    return report.value / delta


def subgaussian_sigma(loss_range) -> float:
    a, b = loss_range
    if not b > a:
        raise ValueError("loss range must satisfy b > a")
    return (b - a) / 2.0


# ----------------------------------------------------------------------------
# documents


def inputs_from_dict(doc: dict) -> BoundInputs:
    sched = doc.get("schedule")
    if isinstance(sched, dict):
        c = sched.get("C", sched.get("c"))
        sched = Schedule(sched["kind"], float(c),
                         None if sched.get("noise") is None else float(sched["noise"]))
    T = doc.get("T")
    if T is not None:
        T = math.inf if str(T).lower() in ("inf", "infinity") else int(T)
    opt = lambda k, f: None if doc.get(k) is None else f(doc[k])  # noqa: E731
    return BoundInputs(
        L=int(doc.get("L", 0)), eta=float(doc.get("eta", 1.0)), sigma=float(doc["sigma"]),
        n=int(doc["n"]), mi_nats=float(doc.get("mi", doc.get("mi_nats", 0.0))),
        M=opt("M", float), schedule=sched, T=T, vc_dim=opt("vc_dim", int),
        delta=opt("delta", float), mi_cond=opt("mi_cond", float),
        provenance=dict(doc.get("provenance", {})))


_CALCULATORS = {"main": main_bound, "stability": stability_rate,
                "noisy_sgd": noisy_sgd_bound, "binary": binary_bound}


def evaluate(doc: dict) -> BoundReport:
    """Evaluate one JSON bound document (``kind`` defaults to ``main``).

    ``excess`` and ``high_prob`` documents name the underlying calculator in
    ``base``; ``high_prob`` also needs ``delta``.
    """
    kind = doc.get("kind", "main")
    inp = inputs_from_dict(doc)
    if kind in _CALCULATORS:
        return _CALCULATORS[kind](inp)
    if kind not in ("excess", "high_prob"):
        raise ValueError(f"unknown bound kind {kind!r}")
    base = _CALCULATORS[doc.get("base", "main")](inp)
    if kind == "excess":
        value = excess_risk_bound(base)
        return BoundReport("excess", value, base.exp_factor, base.sqrt_factor, inp.echo(), base.provenance)
    if inp.delta is None:
        raise ValueError("high_prob needs delta")
    value = high_prob_bound(base, inp.delta)
    return BoundReport("high_prob", value, base.exp_factor, base.sqrt_factor / inp.delta,
                       inp.echo(), base.provenance)


def batch_csv(docs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "L", "eta", "sigma", "n", "mi", "value"])
    for doc in docs:
        r = evaluate(doc)
        i = r.inputs
        w.writerow([r.kind, i["L"], repr(i["eta"]), repr(i["sigma"]), i["n"],
                    repr(i["mi_nats"]), repr(r.value)])
    return buf.getvalue()
