"""Entropy, mutual information and related estimators.

Everything is in nats.  The plug-in estimators work on contingency tables of
discrete codes; continuous layer activations are discretized first with
:func:`bin_features`.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .net import Network, forward

ETA_FLOOR = 1e-9
DEFAULT_BINS = 8


# ----------------------------------------------------------------------------
# discrete distributions


def as_pmf(p, atol: float = 1e-12) -> np.ndarray:
    """Validate a probability vector."""
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("a PMF needs non-negative finite entries")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"PMF sums to {p.sum()!r}, not 1")
    return p


def discrete_entropy(p) -> float:
    """Shannon entropy ``-sum p log p`` with ``0 log 0 = 0``."""
    p = as_pmf(p)
    nz = p[p > 0]
    return float(max(0.0, -np.sum(nz * np.log(nz))))


def entropy_from_counts(counts) -> float:
    c = np.asarray(counts, dtype=np.float64).ravel()
    return discrete_entropy(c / c.sum())


@dataclass(frozen=True)
class JointCounts:
    """Contingency table of co-occurrence counts over (x-bin, y-bin)."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table)
        if t.ndim != 2 or np.any(t < 0) or t.sum() <= 0:
            raise ValueError("joint counts need a non-negative 2-D table with a nonzero cell")
        object.__setattr__(self, "table", t)

    @property
    def total(self):
        return self.table.sum()

    @classmethod
    def from_codes(cls, x_codes, y_codes) -> "JointCounts":
        x = np.asarray(x_codes).ravel()
        y = np.asarray(y_codes).ravel()
        if x.shape != y.shape:
            raise ValueError("code arrays differ in length")
        _, xi = np.unique(x, return_inverse=True)
        _, yi = np.unique(y, return_inverse=True)
        table = np.zeros((xi.max() + 1, yi.max() + 1), dtype=np.int64)
        np.add.at(table, (xi, yi), 1)
        return cls(table)


def plugin_mi(counts) -> float:
    """Plug-in mutual information of a joint table (counts or probabilities).

    Examples
    --------
    >>> round(plugin_mi([[2, 1], [1, 2]]), 6)
    0.056633
    """
    t = counts.table if isinstance(counts, JointCounts) else np.asarray(counts)
    p = np.asarray(t, dtype=np.float64)
    if p.ndim != 2 or np.any(p < 0) or p.sum() <= 0:
        raise ValueError("need a non-negative 2-D table with positive mass")
    p = p / p.sum()
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    nz = p > 0
    terms = p[nz] * (np.log(p[nz]) - np.log((px * py)[nz]))
    return float(max(0.0, math.fsum(terms)))


def mi_from_codes(x_codes, y_codes) -> float:
    return plugin_mi(JointCounts.from_codes(x_codes, y_codes))


# ----------------------------------------------------------------------------
# discretization


def bin_features(stage, bins_per_dim: int = DEFAULT_BINS, range_policy="observed") -> np.ndarray:
    """Equal-width binning of each feature, combined into one code per row.

    Parameters
    ----------
    stage : array_like, shape (n, d)
    bins_per_dim : int
        Number of bins per dimension, at least 2.
    range_policy : "observed" or (low, high)
        ``"observed"`` uses each column's own min/max; a pair fixes the
        range for every column (values outside land in the end bins).

    Returns
    -------
    codes : ndarray of int64, shape (n,)
        Mixed-radix index of the per-dimension bins.  The top bin is closed
        on the right.  A constant column puts every row in bin 0.
    """
    if bins_per_dim < 2:
        raise ValueError("bins_per_dim must be at least 2")
    x = np.asarray(stage, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if isinstance(range_policy, str):
        if range_policy != "observed":
            raise ValueError(f"unknown range policy {range_policy!r}")
        lo = x.min(axis=0) if n else np.zeros(d)
        hi = x.max(axis=0) if n else np.zeros(d)
    else:
        lo_, hi_ = range_policy
        lo = np.full(d, float(lo_))
        hi = np.full(d, float(hi_))
    width = hi - lo
    safe = np.where(width > 0, width, 1.0)
    b = np.floor((x - lo) / safe * bins_per_dim)
    b = np.clip(b, 0, bins_per_dim - 1).astype(np.int64)
    b[:, width <= 0] = 0
    if d * math.log2(bins_per_dim) < 62:
        radix = bins_per_dim ** np.arange(d, dtype=np.int64)
        return b @ radix
    # too many cells for int64: relabel distinct rows in lexicographic order
    _, codes = np.unique(b, axis=0, return_inverse=True)
    return codes.ravel().astype(np.int64)


# ----------------------------------------------------------------------------
# layer-wise chain


@dataclass(frozen=True)
class InfoChain:
    """Mutual information between each stage and the head, with ratio factors.

    ``eta_per_layer[k-1] = mi[k] / mi[k-1]``, left undefined (NaN) when the
    denominator is at or below ``ETA_FLOOR``.  ``eta_geo_mean`` is the
    geometric mean of the defined factors (NaN if none are defined).
    """

    mi_per_layer: np.ndarray
    eta_per_layer: np.ndarray
    eta_geo_mean: float
    realization: str = "empirical"

    @classmethod
    def from_mi(cls, mi, realization: str = "empirical", eta_geo_mean: Optional[float] = None):
        mi = np.asarray(mi, dtype=np.float64)
        if np.any(mi < 0):
            raise ValueError("mutual information must be non-negative")
        eta = np.full(max(len(mi) - 1, 0), np.nan)
        for k in range(1, len(mi)):
            if mi[k - 1] > ETA_FLOOR:
                eta[k - 1] = mi[k] / mi[k - 1]
        if eta_geo_mean is None:
            eta_geo_mean = geometric_mean(eta)
        mi.setflags(write=False)
        eta.setflags(write=False)
        return cls(mi, eta, float(eta_geo_mean), realization)

    @property
    def depth(self) -> int:
        return len(self.mi_per_layer) - 1

    @property
    def eta_defined(self) -> np.ndarray:
        return ~np.isnan(self.eta_per_layer)

    def eta_violations(self, eps: float) -> list:
        """Layers whose factor exceeds ``1 + eps``."""
        return [k + 1 for k, e in enumerate(self.eta_per_layer) if not np.isnan(e) and e > 1 + eps]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "mi_nats", "eta_k"])
        for k, mi in enumerate(self.mi_per_layer):
            eta = "" if k == 0 or np.isnan(self.eta_per_layer[k - 1]) else repr(float(self.eta_per_layer[k - 1]))
            w.writerow([k, repr(float(mi)), eta])
        return buf.getvalue()

    def summary_json(self, tolerance: float = 0.02) -> str:
        geo = None if math.isnan(self.eta_geo_mean) else self.eta_geo_mean
        return json.dumps({"eta_geo_mean": geo, "realization": self.realization,
                           "violations": dpi_check(self, tolerance)}, sort_keys=True)


def geometric_mean(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    v = v[~np.isnan(v)]
    if v.size == 0:
        return float("nan")
    if np.any(v == 0):
        return 0.0
    return float(np.exp(np.mean(np.log(v))))


def _refine(codes: np.ndarray, finer: np.ndarray) -> np.ndarray:
    _, ids = np.unique(np.column_stack([codes, finer]), axis=0, return_inverse=True)
    return ids.ravel()


def stage_codes(net: Network, X, bins: int = DEFAULT_BINS, range_policy="observed",
                nested: bool = True) -> list:
    """Discrete codes for every stage ``T_0..T_L`` plus the binned head logits.

    With ``nested=True`` each stage's bins are refined by the bins of every
    later stage.  Later stages are functions of earlier ones, so each refined
    code is still a quantization of its own stage, and the codes form a
    Markov chain: stage ``k+1``'s code is a function of stage ``k``'s.
    Plain per-stage binning (``nested=False``) lacks that property, and its
    plug-in chain can rise from one stage to the next.
    """
    chain = forward(net, X)
    proxy = bin_features(chain.logits, bins, range_policy)
    codes = [bin_features(s, bins, range_policy) for s in chain.stages]
    if nested:
        for k in range(len(codes) - 2, -1, -1):
            codes[k] = _refine(codes[k], codes[k + 1])
    return codes, proxy


def layer_mi_chain(net: Network, X, bins: int = DEFAULT_BINS, range_policy="observed",
                   nested: bool = True) -> InfoChain:
    """Plug-in ``I(T_k; head proxy)`` for every stage ``k = 0..L``.

    The head proxy is the binned head-logit vector of each example.  See
    :func:`stage_codes` for the ``nested`` quantization.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    codes, proxy = stage_codes(net, X, bins, range_policy, nested)
    return InfoChain.from_mi([mi_from_codes(c, proxy) for c in codes])


def replica_chain(nets: Sequence[Network], X, bins: int = DEFAULT_BINS,
                  range_policy="observed", nested: bool = True) -> InfoChain:
    """Average chain over trained replicas.

    MI values are averaged per stage; the overall factor is
    ``(mean over replicas of prod_k eta_k) ** (1/L)`` using replicas whose
    factors are all defined.
    """
    chains = [layer_mi_chain(n, X, bins, range_policy, nested) for n in nets]
    if not chains:
        raise ValueError("need at least one replica")
    L = chains[0].depth
    mi = np.mean([c.mi_per_layer for c in chains], axis=0)
    prods = [float(np.prod(c.eta_per_layer)) for c in chains if np.all(c.eta_defined)]
    geo = float(np.mean(prods)) ** (1.0 / L) if L and prods else float("nan")
    return InfoChain.from_mi(mi, "empirical", geo)


def dpi_check(chain, tolerance: float = 0.02) -> list:
    """Indices ``k`` where ``mi[k] > mi[k-1] + tolerance``."""
    mi = chain.mi_per_layer if isinstance(chain, InfoChain) else np.asarray(chain, dtype=np.float64)
    return [k for k in range(1, len(mi)) if mi[k] > mi[k - 1] + tolerance]


# ----------------------------------------------------------------------------
# variational KL bound


def dv_lower_bound(samples_P, samples_Q, family: Iterable[Callable],
                   weights_P=None, weights_Q=None) -> float:
    """Best Donsker-Varadhan objective ``E_P[F] - log E_Q[exp F]`` over ``family``.

    Each member of ``family`` maps an array of samples to an array of values.
    Optional weights turn the sample means into exact expectations over a
    finite support.  The log-mean-exp is evaluated with a max shift.
    """
    sp = np.asarray(samples_P)
    sq = np.asarray(samples_Q)
    if len(sp) == 0 or len(sq) == 0:
        raise ValueError("both sample sets must be nonempty")
    wp = None if weights_P is None else as_pmf(weights_P, atol=1e-9)
    wq = None if weights_Q is None else as_pmf(weights_Q, atol=1e-9)
    best = -np.inf
    for F in family:
        fp = np.asarray(F(sp), dtype=np.float64)
        fq = np.asarray(F(sq), dtype=np.float64)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fq))):
            raise ValueError("test function is not finite on the samples")
        mean_p = float(np.mean(fp)) if wp is None else float(np.dot(wp, fp))
        if wq is None:
            log_mq = float(logsumexp(fq) - math.log(len(fq)))
        else:
            log_mq = float(logsumexp(fq, b=wq))
        best = max(best, mean_p - log_mq)
    if best == -np.inf:
        raise ValueError("empty test-function family")
    return best


def kl_divergence(p, q) -> float:
    """Exact ``D(p || q)`` for PMFs on a common finite alphabet."""
    p, q = as_pmf(p, 1e-9), as_pmf(q, 1e-9)
    nz = p > 0
    if np.any(q[nz] == 0):
        return float("inf")
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


# ----------------------------------------------------------------------------
# growth function


def log_sauer_growth_bound(n: int, vc_dim: int) -> float:
    if n < 0 or vc_dim < 1:
        raise ValueError("need n >= 0 and vc_dim >= 1")
    if n <= vc_dim:
        return n * math.log(2.0)
    return vc_dim * (1.0 + math.log(n / vc_dim))


def sauer_growth_bound(n: int, vc_dim: int) -> float:
    """Sauer's bound on the growth function: ``2**n`` up to the VC dimension,
    ``(e n / d)**d`` beyond it."""
    if n < 0 or vc_dim < 1:
        raise ValueError("need n >= 0 and vc_dim >= 1")
    if n <= vc_dim:
        return float(2**n)
    return (math.e * n / vc_dim) ** vc_dim


def dichotomies(points, hypotheses: Iterable[Callable]) -> set:
    return {tuple(int(h(x)) for x in points) for h in hypotheses}


def exact_dichotomy_count(points, hypotheses: Iterable[Callable]) -> int:
    """Number of distinct labelings the hypotheses realize on ``points``."""
    return len(dichotomies(points, hypotheses))


def vc_dimension(points, hypotheses: Sequence[Callable]) -> int:
    """Largest subset size of ``points`` shattered by ``hypotheses`` (brute force)."""
    hyps = list(hypotheses)
    best = 0
    for size in range(1, len(points) + 1):
        if any(exact_dichotomy_count(sub, hyps) == 2**size for sub in combinations(points, size)):
            best = size
        else:
            break
    return best
