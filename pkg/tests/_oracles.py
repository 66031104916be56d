"""Independent reference computations used by several test modules."""
import itertools
import math
from fractions import Fraction

import numpy as np

from infobound.net import Network, dense, mean_loss

FD_ACTIVATIONS = ("tanh", "sigmoid", "identity")


def random_case(rng, max_depth=3, max_width=6, max_batch=8):
    """Random dense net, batch and labels with moderate logits."""
    depth = int(rng.integers(0, max_depth + 1))
    widths = [int(rng.integers(1, max_width + 1)) for _ in range(depth + 1)]
    k = int(rng.integers(2, 5))
    layers = []
    for a, b in zip(widths[:-1], widths[1:]):
        bias = bool(rng.integers(0, 2))
        w = rng.normal(scale=1.0 / math.sqrt(a), size=(b, a + bias))
        layers.append(dense(w, str(rng.choice(FD_ACTIVATIONS)), bias))
    bias = bool(rng.integers(0, 2))
    head = dense(rng.normal(scale=0.5 / math.sqrt(widths[-1]), size=(k, widths[-1] + bias)),
                 "identity", bias)
    m = int(rng.integers(1, max_batch + 1))
    X = rng.normal(size=(m, widths[0]))
    y = rng.integers(0, k, size=m)
    return Network(tuple(layers), head), X, y


def fd_gradients(net, X, y, loss, h=1e-6):
    """Central differences of the mean batch loss for every trainable weight."""
    layers = net.all_layers()
    out = []
    for k, layer in enumerate(layers):
        if not layer.trainable:
            out.append(None)
            continue
        g = np.zeros_like(layer.weights)
        for idx in np.ndindex(layer.weights.shape):
            vals = []
            for s in (h, -h):
                w = layer.weights.copy()
                w[idx] += s
                ws = [l.weights if l.trainable else None for l in layers]
                ws[k] = w
                vals.append(mean_loss(net.replace_weights(ws), X, y, loss))
            g[idx] = (vals[0] - vals[1]) / (2 * h)
        out.append(g)
    return out


def relative_error(a, b):
    a = np.concatenate([np.ravel(x) for x in a])
    b = np.concatenate([np.ravel(x) for x in b])
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def exact_mi_fraction(table):
    """I(X;Y) of a count table using exact fractions for the probabilities."""
    total = sum(sum(r) for r in table)
    p = [[Fraction(c, total) for c in r] for r in table]
    px = [sum(r) for r in p]
    py = [sum(col) for col in zip(*p)]
    return math.fsum(float(v) * math.log(v / (px[i] * py[j]))
                     for i, r in enumerate(p) for j, v in enumerate(r) if v)


def brute_force_world(probs, n, algorithm, loss_table):
    """Expected gap and I(S;W) by looping over every sample tuple."""
    Z = len(probs)
    W = len(loss_table)
    risk = [math.fsum(probs[z] * loss_table[w][z] for z in range(Z)) for w in range(W)]
    gap = 0.0
    joint = {}
    for idx, S in enumerate(itertools.product(range(Z), repeat=n)):
        ps = math.prod(probs[z] for z in S)
        for w in range(W):
            pw = ps * algorithm[idx][w]
            if pw == 0:
                continue
            emp = sum(loss_table[w][z] for z in S) / n
            gap += pw * (risk[w] - emp)
            joint[(idx, w)] = joint.get((idx, w), 0.0) + pw
    p_s, p_w = {}, {}
    for (s, w), v in joint.items():
        p_s[s] = p_s.get(s, 0.0) + v
        p_w[w] = p_w.get(w, 0.0) + v
    mi = math.fsum(v * math.log(v / (p_s[s] * p_w[w])) for (s, w), v in joint.items())
    return gap, mi
