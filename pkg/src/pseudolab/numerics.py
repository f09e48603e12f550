"""Dense float64 tensors with reverse-mode autodiff, plus the optimizer stack.

The op set is deliberately minimal: matmul, broadcast add, elementwise
arithmetic, relu, row-wise logsumexp, softmax cross-entropy, row gathering
and reductions. That is everything the training loop needs, and it keeps
every gradient small enough to check against central finite differences.
All storage is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "relu",
    "logsumexp_rows",
    "gather_rows",
    "sum_all",
    "mean_all",
    "cross_entropy",
    "one_hot",
    "backward",
    "MlpParams",
    "init_mlp",
    "mlp_forward",
    "forward_logits",
    "zero_grad",
    "OptState",
    "init_opt_state",
    "cosine_lr",
    "current_lr",
    "sgd_step",
    "EmaParams",
    "init_ema",
    "ema_update",
    "save_params",
    "load_params",
]


class Tensor:
    """A dense float64 array that can participate in a computation graph.

    Leaf tensors (parameters, inputs) are validated to be finite on
    construction; interior nodes inherit finiteness from their inputs and
    the stability of the ops below.
    """

    __slots__ = ("data", "grad", "_parents", "_grad_fn", "_backward_ran")

    def __init__(self, data, _parents=()):
        arr = np.asarray(data, dtype=np.float64)
        if not _parents and not np.all(np.isfinite(arr)):
            raise ValueError("tensor data must be finite")
        self.data = arr
        self.grad = None
        self._parents = tuple(_parents)
        self._grad_fn = None
        self._backward_ran = False

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, leaf={not self._parents})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, _parents=(a, b))

    def grad_fn(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    out._grad_fn = grad_fn
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, _parents=(a, b))

    def grad_fn(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    out._grad_fn = grad_fn
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, _parents=(a, b))

    def grad_fn(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    out._grad_fn = grad_fn
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data, _parents=(a,))

    def grad_fn(g):
        _accum(a, -g)

    out._grad_fn = grad_fn
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(
            f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}"
        )
    out = Tensor(a.data @ b.data, _parents=(a, b))

    def grad_fn(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    out._grad_fn = grad_fn
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), _parents=(a,))

    def grad_fn(g):
        _accum(a, g * (a.data > 0.0))

    out._grad_fn = grad_fn
    return out


def logsumexp_rows(a) -> Tensor:
    """Row-wise log(sum(exp(x))), max-shifted so huge logits stay finite."""
    a = as_tensor(a)
    z = a.data
    m = z.max(axis=1, keepdims=True)
    ez = np.exp(z - m)
    s = ez.sum(axis=1, keepdims=True)
    out = Tensor((m + np.log(s)).ravel(), _parents=(a,))

    def grad_fn(g):
        _accum(a, (ez / s) * g[:, None])

    out._grad_fn = grad_fn
    return out


def gather_rows(a, idx) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    out = Tensor(a.data[idx], _parents=(a,))

    def grad_fn(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, idx, g)

    out._grad_fn = grad_fn
    return out


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.array(a.data.sum()), _parents=(a,))

    def grad_fn(g):
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    out._grad_fn = grad_fn
    return out


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    out = Tensor(np.array(a.data.sum() / n), _parents=(a,))

    def grad_fn(g):
        _accum(a, np.broadcast_to(g / n, a.data.shape).copy())

    out._grad_fn = grad_fn
    return out


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels out of range [0, {num_classes})")
    out = np.zeros((labels.shape[0], num_classes), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def cross_entropy(logits, target) -> Tensor:
    """Mean over the batch of -log softmax(logits)[target class].

    `target` must be exactly one-hot per row. Stabilized by max subtraction,
    so logits up to |1e4| stay finite.
    """
    logits = as_tensor(logits)
    y = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if y.shape != logits.data.shape:
        raise ValueError(f"target shape {y.shape} != logits shape {logits.data.shape}")
    if y.shape[0] == 0:
        raise ValueError("cross_entropy on an empty batch")
    nonzero = np.count_nonzero(y, axis=1)
    if not (np.all(nonzero == 1) and np.all(y.sum(axis=1) == 1.0)):
        raise ValueError("target rows must be one-hot: exactly one nonzero entry summing to 1")

    z = logits.data
    batch = z.shape[0]
    m = z.max(axis=1, keepdims=True)
    ez = np.exp(z - m)
    denom = ez.sum(axis=1, keepdims=True)
    log_probs = (z - m) - np.log(denom)
    loss = -(y * log_probs).sum() / batch
    out = Tensor(np.array(loss), _parents=(logits,))

    def grad_fn(g):
        _accum(logits, (ez / denom - y) * (g / batch))

    out._grad_fn = grad_fn
    return out


def _topo_order(root: Tensor):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate .grad on every tensor reachable from `loss`.

    One backward pass per forward graph: a second call on the same loss node
    raises, because grads would silently double-accumulate.
    """
    if loss.data.size != 1:
        raise ValueError("backward expects a scalar loss")
    if loss._backward_ran:
        raise RuntimeError(
            "backward already ran on this graph; rebuild the forward pass before differentiating again"
        )
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._grad_fn is not None:
            node._grad_fn(node.grad)
    loss._backward_ran = True


# ---------------------------------------------------------------------------
# MLP parameters
# ---------------------------------------------------------------------------


@dataclass
class MlpParams:
    """Fully-connected rectifier network: relu between layers, identity at
    the output. layers[i] is a (weight [fan_in, fan_out], bias [fan_out])
    pair; consecutive fan dims must chain."""

    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ValueError("MlpParams needs at least one layer")
        for i, (w, b) in enumerate(self.layers):
            if w.data.ndim != 2 or b.data.ndim != 1:
                raise ValueError(f"layer {i}: weight must be 2-d and bias 1-d")
            if b.data.shape[0] != w.data.shape[1]:
                raise ValueError(
                    f"layer {i}: bias length {b.data.shape[0]} != fan-out {w.data.shape[1]}"
                )
            if i > 0 and w.data.shape[0] != self.layers[i - 1][0].data.shape[1]:
                raise ValueError(
                    f"layer {i}: fan-in {w.data.shape[0]} does not chain with "
                    f"previous fan-out {self.layers[i - 1][0].data.shape[1]}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].data.shape[0]

    @property
    def num_classes(self) -> int:
        return self.layers[-1][0].data.shape[1]

    def tensors(self):
        for w, b in self.layers:
            yield w
            yield b


def init_mlp(dims, rng) -> MlpParams:
    """Glorot-uniform weights (bounds +-sqrt(6/(fan_in+fan_out))), zero biases."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    if len(dims) < 2:
        raise ValueError("need at least input and output dims")
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        b = Tensor(np.zeros(fan_out))
        layers.append((w, b))
    return MlpParams(layers)


def mlp_forward(params: MlpParams, x) -> Tensor:
    """Forward pass returning raw logits, graph retained for backward."""
    x = as_tensor(x)
    if x.data.ndim != 2 or x.data.shape[1] != params.in_dim:
        raise ValueError(
            f"layer 0 expects input dim {params.in_dim}, got {x.data.shape}"
        )
    h = x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        h = add(matmul(h, w), b)
        if i != last:
            h = relu(h)
    return h


def _layer_arrays(params):
    """Normalize MlpParams or a list of (weight, bias) ndarray pairs."""
    if isinstance(params, MlpParams):
        return [(w.data, b.data) for w, b in params.layers]
    if isinstance(params, EmaParams):
        return params.shadow
    return list(params)


def forward_logits(params, x: np.ndarray) -> np.ndarray:
    """Inference-only forward pass: plain numpy, no graph, no gradients."""
    h = np.asarray(x, dtype=np.float64)
    pairs = _layer_arrays(params)
    for i, (w, b) in enumerate(pairs):
        h = h @ w + b
        if i != len(pairs) - 1:
            h = np.maximum(h, 0.0)
    return h


def zero_grad(params: MlpParams) -> None:
    for t in params.tensors():
        t.grad = None


# ---------------------------------------------------------------------------
# SGD with momentum, cosine schedule, EMA
# ---------------------------------------------------------------------------


@dataclass
class OptState:
    lr0: float
    momentum: float
    weight_decay: float
    velocity: list  # (vw, vb) ndarray pairs shaped like the parameters
    total_iters: int
    iter: int = 0
    schedule: str = "cosine"

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.total_iters <= 0:
            raise ValueError("total_iters must be positive")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


def init_opt_state(params: MlpParams, lr0, momentum, weight_decay, total_iters,
                   schedule="cosine") -> OptState:
    velocity = [(np.zeros_like(w.data), np.zeros_like(b.data)) for w, b in params.layers]
    return OptState(lr0=lr0, momentum=momentum, weight_decay=weight_decay,
                    velocity=velocity, total_iters=total_iters, schedule=schedule)


def cosine_lr(state: OptState) -> float:
    """lr0 * cos(7*pi*iter / (16*total_iters)): a 7/16-cycle cosine decay."""
    return state.lr0 * math.cos(7.0 * math.pi * state.iter / (16.0 * state.total_iters))


def current_lr(state: OptState) -> float:
    if state.schedule == "constant":
        return state.lr0
    return cosine_lr(state)


def sgd_step(params: MlpParams, state: OptState) -> None:
    """v <- momentum*v + grad + wd*param; param <- param - lr(iter)*v."""
    if state.iter >= state.total_iters:
        raise RuntimeError("optimizer already ran for total_iters steps")
    lr = current_lr(state)
    for i, ((w, b), (vw, vb)) in enumerate(zip(params.layers, state.velocity)):
        if w.grad is None or b.grad is None:
            raise RuntimeError(f"sgd_step before backward: layer {i} has no gradient")
        vw *= state.momentum
        vw += w.grad + state.weight_decay * w.data
        w.data -= lr * vw
        vb *= state.momentum
        vb += b.grad + state.weight_decay * b.data
        b.data -= lr * vb
    state.iter += 1


@dataclass
class EmaParams:
    """Shadow copy of the parameters, moved toward the live values each step."""

    shadow: list  # (w, b) ndarray pairs
    momentum: float

    def __post_init__(self):
        if not (0.0 <= self.momentum <= 1.0):
            raise ValueError("ema momentum must be in [0, 1]")


def init_ema(params: MlpParams, momentum: float) -> EmaParams:
    shadow = [(w.data.copy(), b.data.copy()) for w, b in params.layers]
    return EmaParams(shadow=shadow, momentum=momentum)


def ema_update(ema: EmaParams, live: MlpParams) -> None:
    """shadow <- m*shadow + (1-m)*live, elementwise."""
    if len(ema.shadow) != len(live.layers):
        raise ValueError("ema shadow does not match live parameter count")
    m = ema.momentum
    for (sw, sb), (w, b) in zip(ema.shadow, live.layers):
        if sw.shape != w.data.shape or sb.shape != b.data.shape:
            raise ValueError("ema shadow shape mismatch")
        sw *= m
        sw += (1.0 - m) * w.data
        sb *= m
        sb += (1.0 - m) * b.data


# ---------------------------------------------------------------------------
# Parameter dump (final-parameter checkpoints only)
# ---------------------------------------------------------------------------

_FMT = "%.17g"


def save_params(params, path) -> None:
    pairs = _layer_arrays(params)
    with open(path, "w") as fh:
        fh.write(f"mlp {len(pairs)}\n")
        for w, b in pairs:
            fh.write(f"layer {w.shape[0]} {w.shape[1]}\n")
            for row in w:
                fh.write(" ".join(_FMT % v for v in row) + "\n")
            fh.write(" ".join(_FMT % v for v in b) + "\n")


def load_params(path) -> MlpParams:
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 2 or head[0] != "mlp":
            raise ValueError(f"{path}: not a parameter dump")
        layers = []
        for _ in range(int(head[1])):
            tag, fan_in, fan_out = fh.readline().split()
            if tag != "layer":
                raise ValueError(f"{path}: malformed layer header")
            fan_in, fan_out = int(fan_in), int(fan_out)
            w = np.array([[float(v) for v in fh.readline().split()] for _ in range(fan_in)])
            b = np.array([float(v) for v in fh.readline().split()])
            layers.append((Tensor(w), Tensor(b)))
    return MlpParams(layers)
