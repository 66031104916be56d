"""Minimal feed-forward network engine.

Layers are immutable value objects; a :class:`Network` is an ordered stack of
hidden layers followed by a dense classifier head.  Every hidden stage of the
forward pass is kept so the layer-wise chain ``T_0 -> T_1 -> ... -> T_L`` can
be inspected, and gradients are computed by hand-written backpropagation.

Biases are folded into the weight matrices: a layer built with ``bias=True``
carries one extra trailing weight column that multiplies a constant 1 appended
to its input.  All arithmetic is float64.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

KINDS = ("dense", "conv2d", "maxpool", "avgpool")
ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")
LOSS_KINDS = ("zero_one", "clipped_cross_entropy", "squared_error")

DEFAULT_RANK_TOL = 1e-10


class ShapeError(ValueError):
    """Raised when an array does not fit the layer it is fed to."""


class NonDifferentiableError(ValueError):
    pass


class InapplicableLayerError(ValueError):
    pass


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


# ----------------------------------------------------------------------------
# activations


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        # split form avoids overflow in exp for large |z|
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    raise ValueError(f"unknown activation {name!r}")


# ----------------------------------------------------------------------------
# layers


def _patch_index(in_shape, kernel, stride):
    """Flat input indices gathered by every output position.

    Returns an int array of shape ``(positions, C*kernel*kernel)`` for a
    channel-mixing window, plus the output spatial size.
    """
    c, h, w = in_shape
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"kernel {kernel} larger than input {in_shape}")
    ch, ky, kx = np.meshgrid(np.arange(c), np.arange(kernel), np.arange(kernel), indexing="ij")
    ch, ky, kx = ch.ravel(), ky.ravel(), kx.ravel()
    oy, ox = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    oy, ox = oy.ravel(), ox.ravel()
    rows = oy[:, None] * stride + ky[None, :]
    cols = ox[:, None] * stride + kx[None, :]
    return ch[None, :] * h * w + rows * w + cols, (oh, ow)


def _pool_index(in_shape, kernel, stride):
    """Per-channel pooling windows, shape ``(C*positions, kernel*kernel)``."""
    c, h, w = in_shape
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"pool kernel {kernel} larger than input {in_shape}")
    ky, kx = np.meshgrid(np.arange(kernel), np.arange(kernel), indexing="ij")
    ky, kx = ky.ravel(), kx.ravel()
    ch, oy, ox = np.meshgrid(np.arange(c), np.arange(oh), np.arange(ow), indexing="ij")
    ch, oy, ox = ch.ravel(), oy.ravel(), ox.ravel()
    rows = oy[:, None] * stride + ky[None, :]
    cols = ox[:, None] * stride + kx[None, :]
    return ch[:, None] * h * w + rows * w + cols, (oh, ow)


@dataclass(frozen=True)
class Layer:
    """One hidden layer (or the head).

    ``weights`` is a 2-D matrix for every trainable kind.  Dense layers use
    shape ``(out_dim, in_dim + bias)``; conv2d layers store the kernel bank as
    ``(out_channels, in_channels*kernel*kernel + bias)``.  Pooling layers hold
    an empty ``(0, 0)`` array.
    """

    kind: str
    weights: np.ndarray
    activation: str
    in_dim: int
    out_dim: int
    bias: bool = False
    in_shape: Optional[tuple] = None
    kernel: int = 0
    stride: int = 1
    _index: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "weights", _frozen(self.weights))
        if self.in_dim < 1 or self.out_dim < 1:
            raise ShapeError("layer dimensions must be positive")
        if self.kind == "dense":
            expected = (self.out_dim, self.in_dim + int(self.bias))
            if self.weights.shape != expected:
                raise ShapeError(f"dense weights {self.weights.shape} != {expected}")
            return
        if self.in_shape is None or self.kernel < 1 or self.stride < 1:
            raise ShapeError(f"{self.kind} needs in_shape, kernel and stride")
        in_shape = tuple(int(s) for s in self.in_shape)
        object.__setattr__(self, "in_shape", in_shape)
        if int(np.prod(in_shape)) != self.in_dim:
            raise ShapeError(f"in_shape {in_shape} does not flatten to in_dim {self.in_dim}")
        if self.kind == "conv2d":
            idx, (oh, ow) = _patch_index(in_shape, self.kernel, self.stride)
            out_ch = self.weights.shape[0]
            expected = (out_ch, in_shape[0] * self.kernel**2 + int(self.bias))
            if self.weights.ndim != 2 or self.weights.shape != expected:
                raise ShapeError(f"conv2d weights {self.weights.shape} != {expected}")
            if out_ch * oh * ow != self.out_dim:
                raise ShapeError(f"conv2d output {out_ch}x{oh}x{ow} != out_dim {self.out_dim}")
        else:
            if self.weights.size:
                raise ShapeError("pooling layers have no weights")
            if self.bias:
                raise ShapeError("pooling layers have no bias")
            idx, (oh, ow) = _pool_index(in_shape, self.kernel, self.stride)
            if in_shape[0] * oh * ow != self.out_dim:
                raise ShapeError(f"pool output size != out_dim {self.out_dim}")
        idx.setflags(write=False)
        object.__setattr__(self, "_index", idx)

    @property
    def trainable(self) -> bool:
        return self.kind in ("dense", "conv2d")

    @property
    def out_shape(self) -> Optional[tuple]:
        if self.kind == "dense":
            return None
        c, h, w = self.in_shape
        oh = (h - self.kernel) // self.stride + 1
        ow = (w - self.kernel) // self.stride + 1
        ch = self.weights.shape[0] if self.kind == "conv2d" else c
        return (ch, oh, ow)

    def with_weights(self, weights) -> "Layer":
        return Layer(self.kind, weights, self.activation, self.in_dim, self.out_dim,
                     self.bias, self.in_shape, self.kernel, self.stride)

    def linear_part(self) -> np.ndarray:
        """Weight columns acting on the input (bias column dropped)."""
        return self.weights[:, :-1] if self.bias else self.weights

    def operator_matrix(self) -> np.ndarray:
        """The ``(out_dim, in_dim)`` linear operator of the layer, bias excluded."""
        if self.kind == "dense":
            return np.array(self.linear_part())
        if self.kind == "conv2d":
            kern = self.linear_part()
            out_ch = kern.shape[0]
            positions = self._index.shape[0]
            op = np.zeros((out_ch, positions, self.in_dim))
            for p in range(positions):
                op[:, p, self._index[p]] = kern
            return op.reshape(out_ch * positions, self.in_dim)
        raise InapplicableLayerError(f"{self.kind} layer has no weight matrix")

    def pre_activation(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        if self.kind == "dense":
            z = x @ self.linear_part().T
            if self.bias:
                z = z + self.weights[:, -1]
            return z
        if self.kind == "conv2d":
            patches = x[:, self._index]  # (n, P, C*k*k)
            z = patches @ self.linear_part().T  # (n, P, out_ch)
            if self.bias:
                z = z + self.weights[:, -1]
            return z.transpose(0, 2, 1).reshape(n, self.out_dim)
        windows = x[:, self._index]  # (n, C*P, k*k)
        if self.kind == "maxpool":
            return windows.max(axis=2)
        return windows.mean(axis=2)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return _activate(self.activation, self.pre_activation(x))

    # backprop through the linear part; ``delta`` is dLoss/d(pre-activation)
    def _backprop(self, x: np.ndarray, delta: np.ndarray):
        n = x.shape[0]
        if self.kind == "dense":
            gw = delta.T @ x
            if self.bias:
                gw = np.hstack([gw, delta.sum(axis=0)[:, None]])
            return gw, delta @ self.linear_part()
        if self.kind == "conv2d":
            out_ch = self.weights.shape[0]
            positions = self._index.shape[0]
            d = delta.reshape(n, out_ch, positions).transpose(0, 2, 1)  # (n, P, out_ch)
            patches = x[:, self._index]
            gw = np.einsum("npo,npi->oi", d, patches)
            if self.bias:
                gw = np.hstack([gw, d.sum(axis=(0, 1))[:, None]])
            dpatch = d @ self.linear_part()  # (n, P, C*k*k)
            dx = np.zeros_like(x)
            np.add.at(dx, (np.arange(n)[:, None, None], self._index[None]), dpatch)
            return gw, dx
        windows = x[:, self._index]
        dx = np.zeros_like(x)
        rows = np.arange(n)[:, None]
        if self.kind == "maxpool":
            arg = windows.argmax(axis=2)  # lowest index on ties
            src = np.take_along_axis(np.broadcast_to(self._index, windows.shape), arg[..., None], 2)[..., 0]
            np.add.at(dx, (rows, src), delta)
        else:
            share = delta / self._index.shape[1]
            np.add.at(dx, (rows[:, :, None], self._index[None]), share[:, :, None])
        return None, dx


def dense(weights, activation: str = "identity", bias: bool = False) -> Layer:
    w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    return Layer("dense", w, activation, w.shape[1] - int(bias), w.shape[0], bias)


def conv2d(kernels, in_shape, kernel: int, stride: int = 1,
           activation: str = "identity", bias: bool = False) -> Layer:
    k = np.asarray(kernels, dtype=np.float64)
    if k.ndim == 4:
        k = k.reshape(k.shape[0], -1)
        if bias:
            k = np.hstack([k, np.zeros((k.shape[0], 1))])
    c, h, w = in_shape
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    return Layer("conv2d", k, activation, c * h * w, k.shape[0] * oh * ow, bias,
                 tuple(in_shape), kernel, stride)


def pool(kind: str, in_shape, kernel: int, stride: Optional[int] = None,
         activation: str = "identity") -> Layer:
    stride = kernel if stride is None else stride
    c, h, w = in_shape
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    return Layer(kind, np.zeros((0, 0)), activation, c * h * w, c * oh * ow, False,
                 tuple(in_shape), kernel, stride)


# ----------------------------------------------------------------------------
# network


@dataclass(frozen=True)
class Network:
    layers: tuple
    head: Layer

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.head.kind != "dense":
            raise ShapeError("the head must be a dense layer")
        dims = [l.in_dim for l in self.layers] + [self.head.in_dim]
        outs = [l.out_dim for l in self.layers]
        for k, (o, i) in enumerate(zip(outs, dims[1:])):
            if o != i:
                raise ShapeError(f"layer {k} out_dim {o} does not match next in_dim {i}")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim if self.layers else self.head.in_dim

    @property
    def num_outputs(self) -> int:
        return self.head.out_dim

    def all_layers(self) -> tuple:
        return self.layers + (self.head,)

    def replace_weights(self, weights: Sequence) -> "Network":
        """New network with ``weights`` aligned to ``all_layers()``."""
        new = [l.with_weights(w) if l.trainable else l
               for l, w in zip(self.all_layers(), weights)]
        return Network(tuple(new[:-1]), new[-1])


class ActivationChain(NamedTuple):
    """Stages ``T_0..T_L`` (``stages[0]`` is the input batch) plus head logits."""

    stages: tuple
    logits: np.ndarray


class Gradients(NamedTuple):
    layers: tuple  # one entry per hidden layer, ``None`` for pooling layers
    head: np.ndarray

    def as_list(self) -> list:
        return list(self.layers) + [self.head]


def _check_batch(net: Network, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ShapeError(f"batch must be 2-D, got shape {x.shape}")
    if x.shape[1] != net.in_dim:
        where = "layer 0" if net.layers else "head"
        raise ShapeError(f"{where}: expected {net.in_dim} input features, got {x.shape[1]}")
    return x


def forward(net: Network, batch) -> ActivationChain:
    """Run the network, keeping every hidden stage.

    Parameters
    ----------
    net : Network
    batch : array_like, shape (n, in_dim) or (in_dim,)

    Returns
    -------
    ActivationChain
        ``stages`` has ``L + 1`` entries, ``stages[0]`` is the input itself.
    """
    x = _check_batch(net, batch)
    stages = [x]
    for layer in net.layers:
        x = layer.apply(x)
        stages.append(x)
    return ActivationChain(tuple(stages), net.head.apply(x))


# ----------------------------------------------------------------------------
# losses


@dataclass(frozen=True)
class LossEvaluator:
    """A bounded per-example loss with declared range ``[low, high]``.

    ``zero_one`` is for evaluation only.  ``clipped_cross_entropy`` clips the
    softmax cross-entropy into the range; ``squared_error`` (real-valued
    targets) is clipped the same way.
    """

    kind: str
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not self.high > self.low:
            raise ValueError("loss range must satisfy high > low")
        if self.kind == "zero_one" and (self.low, self.high) != (0.0, 1.0):
            raise ValueError("zero_one loss has range [0, 1]")

    @property
    def range(self) -> tuple:
        return (self.low, self.high)

    @property
    def differentiable(self) -> bool:
        return self.kind != "zero_one"

    @classmethod
    def zero_one(cls) -> "LossEvaluator":
        return cls("zero_one", 0.0, 1.0)

    @classmethod
    def clipped_cross_entropy(cls, high: float = 4.0, low: float = 0.0) -> "LossEvaluator":
        return cls("clipped_cross_entropy", low, high)

    @classmethod
    def squared_error(cls, high: float = 1e6, low: float = 0.0) -> "LossEvaluator":
        return cls("squared_error", low, high)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def _raw_losses(loss: LossEvaluator, logits: np.ndarray, labels) -> np.ndarray:
    if loss.kind == "zero_one":
        labels = np.asarray(labels, dtype=np.int64)
        return (logits.argmax(axis=1) != labels).astype(np.float64)
    if loss.kind == "clipped_cross_entropy":
        labels = np.asarray(labels, dtype=np.int64)
        return -_log_softmax(logits)[np.arange(len(labels)), labels]
    target = np.asarray(labels, dtype=np.float64).reshape(logits.shape)
    return ((logits - target) ** 2).sum(axis=1)


def batch_losses(loss: LossEvaluator, logits, labels) -> np.ndarray:
    """Per-example losses for a batch of head outputs, each within ``loss.range``."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(labels) if loss.kind != "squared_error" else labels
    if loss.kind != "squared_error" and len(labels) != logits.shape[0]:
        raise ShapeError("one label per example required")
    return np.clip(_raw_losses(loss, logits, labels), loss.low, loss.high)


def evaluate_loss(loss: LossEvaluator, head_output, label) -> float:
    """Loss of a single head output against its label."""
    out = np.asarray(head_output, dtype=np.float64).reshape(1, -1)
    lab = [label] if loss.kind != "squared_error" else np.reshape(label, (1, -1))
    if loss.kind != "squared_error" and not 0 <= int(label) < out.shape[1]:
        raise ShapeError(f"label {label} outside {out.shape[1]} head outputs")
    return float(batch_losses(loss, out, lab)[0])


def mean_loss(net: Network, batch, labels, loss: LossEvaluator) -> float:
    return float(batch_losses(loss, forward(net, batch).logits, labels).mean())


def _loss_logit_grad(loss: LossEvaluator, logits: np.ndarray, labels) -> np.ndarray:
    n = logits.shape[0]
    raw = _raw_losses(loss, logits, labels)
    active = ((raw > loss.low) & (raw < loss.high)).astype(np.float64)[:, None]
    if loss.kind == "clipped_cross_entropy":
        labels = np.asarray(labels, dtype=np.int64)
        g = np.exp(_log_softmax(logits))
        g[np.arange(n), labels] -= 1.0
    else:
        g = 2.0 * (logits - np.asarray(labels, dtype=np.float64).reshape(logits.shape))
    return g * active / n


def backward(net: Network, batch, labels, loss: LossEvaluator) -> Gradients:
    """Gradients of the mean batch loss with respect to every weight matrix."""
    if not loss.differentiable:
        raise NonDifferentiableError("zero_one loss is for evaluation only")
    x = _check_batch(net, batch)
    if x.shape[0] == 0:
        raise ShapeError("empty batch")
    inputs, pres, outs = [], [], []
    for layer in net.all_layers():
        inputs.append(x)
        z = layer.pre_activation(x)
        x = _activate(layer.activation, z)
        pres.append(z)
        outs.append(x)
    delta = _loss_logit_grad(loss, outs[-1], labels)
    grads = []
    for layer, xin, z, a in zip(reversed(net.all_layers()), reversed(inputs),
                                reversed(pres), reversed(outs)):
        delta = delta * _activation_grad(layer.activation, z, a)
        gw, delta = layer._backprop(xin, delta)
        grads.append(gw)
    grads.reverse()
    return Gradients(tuple(grads[:-1]), grads[-1])


# ----------------------------------------------------------------------------
# rank analysis


def weight_rank(layer: Layer, tol: float = DEFAULT_RANK_TOL) -> tuple:
    """Numerical rank of the layer operator and whether it is rank-deficient.

    Counts singular values above ``tol`` times the largest one.  The layer is
    flagged as a contraction when the rank is below the input dimension.
    Pooling layers raise :class:`InapplicableLayerError`; they are
    contractions by construction and have no matrix to test.
    """
    if not layer.trainable:
        raise InapplicableLayerError(f"{layer.kind} layers are contractions without a rank test")
    if tol <= 0:
        raise ValueError("tol must be positive")
    s = np.linalg.svd(layer.operator_matrix(), compute_uv=False)
    rank = 0 if s.size == 0 or s[0] == 0.0 else int(np.sum(s > tol * s[0]))
    return rank, rank < layer.in_dim


def is_contraction(layer: Layer, tol: float = DEFAULT_RANK_TOL) -> bool:
    if layer.kind in ("maxpool", "avgpool"):
        return True
    return weight_rank(layer, tol)[1]


def collision_witness(layer: Layer, x, tol: float = 1e-8,
                      rank_tol: float = DEFAULT_RANK_TOL) -> Optional[np.ndarray]:
    """Second input ``x' != x`` that the layer maps to the same output.

    The shift is a unit vector from the numerical right null space of the
    weight matrix.  Returns ``None`` when the weights have full column rank.
    """
    if layer.kind != "dense":
        raise InapplicableLayerError("collision witnesses are built for dense layers")
    x = np.asarray(x, dtype=np.float64).ravel()
    w = layer.linear_part()
    _, s, vt = np.linalg.svd(w, full_matrices=True)
    rank = 0 if s.size == 0 or s[0] == 0.0 else int(np.sum(s > rank_tol * s[0]))
    if rank >= layer.in_dim:
        return None
    alpha = vt[rank]
    x2 = x + alpha * max(1.0, float(np.abs(x).max(initial=0.0)))
    out1, out2 = layer.apply(x[None]), layer.apply(x2[None])
    if not np.allclose(out1, out2, rtol=0.0, atol=tol):
        return None
    return x2


# ----------------------------------------------------------------------------
# construction and serialization


def init_network(widths: Sequence[int], num_classes: int, seed: int,
                 activation: str = "tanh", bias: bool = True) -> Network:
    """Dense network with hidden widths ``widths[1:]`` on ``widths[0]`` inputs.

    Weights are i.i.d. ``N(0, 1/fan_in)``.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1A17]))
    layers = []
    dims = list(widths)
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        w = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_out, d_in + int(bias)))
        layers.append(Layer("dense", w, activation, d_in, d_out, bias))
    d_in = dims[-1]
    w = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(num_classes, d_in + int(bias)))
    return Network(tuple(layers), Layer("dense", w, "identity", d_in, num_classes, bias))


def layer_to_dict(layer: Layer) -> dict:
    d = {
        "kind": layer.kind,
        "in_dim": layer.in_dim,
        "out_dim": layer.out_dim,
        "activation": layer.activation,
        "weights": [float(v) for v in layer.weights.ravel()],
    }
    if layer.bias:
        d["bias"] = True
    if layer.kind != "dense":
        d["in_shape"] = list(layer.in_shape)
        d["kernel"] = layer.kernel
        d["stride"] = layer.stride
    if layer.kind == "conv2d":
        d["out_channels"] = int(layer.weights.shape[0])
    return d


def layer_from_dict(d: dict) -> Layer:
    kind = d["kind"]
    bias = bool(d.get("bias", False))
    flat = np.asarray(d.get("weights", []), dtype=np.float64)
    in_dim, out_dim = int(d["in_dim"]), int(d["out_dim"])
    if kind == "dense":
        w = flat.reshape(out_dim, in_dim + int(bias))
    elif kind == "conv2d":
        out_ch = int(d["out_channels"])
        w = flat.reshape(out_ch, -1)
    else:
        w = np.zeros((0, 0))
    return Layer(kind, w, d.get("activation", "identity"), in_dim, out_dim, bias,
                 tuple(d["in_shape"]) if "in_shape" in d else None,
                 int(d.get("kernel", 0)), int(d.get("stride", 1)))


def network_to_dict(net: Network) -> dict:
    return {"layers": [layer_to_dict(l) for l in net.layers], "head": layer_to_dict(net.head)}


def network_from_dict(d: dict) -> Network:
    return Network(tuple(layer_from_dict(l) for l in d["layers"]), layer_from_dict(d["head"]))


def dumps_network(net: Network) -> str:
    return json.dumps(network_to_dict(net), sort_keys=True)


def loads_network(text: str) -> Network:
    return network_from_dict(json.loads(text))
