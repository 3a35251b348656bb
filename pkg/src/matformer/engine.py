"""Minimal dense f64 array engine with reverse-mode gradients.

Just enough operator coverage for edge-wise attention message passing:
linear maps, concatenation, Hadamard products, the sigmoid/SiLU family,
layer/batch normalization, plain and segment softmax, and index
gather/scatter for neighborhood aggregation.  Every differentiable op is
validated against central finite differences in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

CHECK_FINITE = True


def _finite(values: np.ndarray, op: str) -> np.ndarray:
    if CHECK_FINITE and not np.isfinite(values).all():
        raise FloatingPointError(f"non-finite values produced by {op}")
    return values


class Tensor:
    """Dense f64 array node in a computation graph."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward_fn", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.asarray(values, dtype=float)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.values.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(values, parents, backward_fn, op: str) -> Tensor:
    out = Tensor(_finite(np.asarray(values, dtype=float), op))
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(node) into ``grad`` of every reachable node."""
    if root.values.size != 1:
        raise ValueError(f"backward requires a scalar root, got shape {root.values.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    root.accumulate(np.ones_like(root.values))
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.values.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.values.shape))

    return _node(a.values + b.values, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.values.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.values.shape))

    return _node(a.values - b.values, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    """Hadamard product with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.values, a.values.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.values, b.values.shape))

    return _node(a.values * b.values, (a, b), bw, "mul")


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * c)

    return _node(a.values * c, (a,), bw, "scale")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g @ b.values.T)
        if b.requires_grad:
            b.accumulate(a.values.T @ g)

    return _node(a.values @ b.values, (a, b), bw, "matmul")


def concat(parts, axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    sizes = [p.values.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            if p.requires_grad:
                p.accumulate(piece)

    return _node(np.concatenate([p.values for p in parts], axis=axis), parts, bw, "concat")


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.values))

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * s * (1.0 - s))

    return _node(s, (a,), bw, "sigmoid")


def silu(a) -> Tensor:
    """x * sigmoid(x); smooth, with silu(0) = 0."""
    a = _as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.values))

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * (s + a.values * s * (1.0 - s)))

    return _node(a.values * s, (a,), bw, "silu")


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    out = np.logaddexp(0.0, a.values)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g / (1.0 + np.exp(-a.values)))

    return _node(out, (a,), bw, "softplus")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.values)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * out)

    return _node(out, (a,), bw, "exp")


ACTIVATIONS = {"silu": silu, "softplus": softplus, "sigmoid": sigmoid}


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        if a.requires_grad:
            a.accumulate(s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _node(s, (a,), bw, "softmax")


def _segment_sum_np(x: np.ndarray, segments: np.ndarray, num_segments: int) -> np.ndarray:
    out = np.zeros((num_segments,) + x.shape[1:])
    np.add.at(out, segments, x)
    return out


def segment_softmax(a, segments, num_segments: int) -> Tensor:
    """Softmax over rows sharing a segment id, columnwise."""
    a = _as_tensor(a)
    segments = np.asarray(segments, dtype=int)
    seg_max = np.full((num_segments,) + a.values.shape[1:], -np.inf)
    np.maximum.at(seg_max, segments, a.values)
    e = np.exp(a.values - seg_max[segments])
    denom = _segment_sum_np(e, segments, num_segments)
    s = e / denom[segments]

    def bw(g):
        if a.requires_grad:
            inner = _segment_sum_np(g * s, segments, num_segments)
            a.accumulate(s * (g - inner[segments]))

    return _node(s, (a,), bw, "segment_softmax")


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply elementwise affine."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    dim = a.values.shape[-1]
    if dim < 2:
        raise ValueError("layer_norm over a length-1 axis is undefined")
    mean = a.values.mean(axis=-1, keepdims=True)
    var = a.values.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.values - mean) * inv

    def bw(g):
        if gain.requires_grad:
            gain.accumulate(_unbroadcast(g * xhat, gain.values.shape))
        if bias.requires_grad:
            bias.accumulate(_unbroadcast(g, bias.values.shape))
        if a.requires_grad:
            gh = g * gain.values
            term = gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            a.accumulate(term * inv)

    return _node(xhat * gain.values + bias.values, (a, gain, bias), bw, "layer_norm")


@dataclass
class BatchNormState:
    """Running statistics for one batch_norm site."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    num_batches: int = 0

    @classmethod
    def create(cls, dim: int, momentum: float = 0.1) -> "BatchNormState":
        return cls(np.zeros(dim), np.ones(dim), momentum)

    def to_dict(self) -> dict:
        return {
            "running_mean": self.running_mean.tolist(),
            "running_var": self.running_var.tolist(),
            "momentum": self.momentum,
            "num_batches": self.num_batches,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BatchNormState":
        return cls(
            np.asarray(d["running_mean"], dtype=float),
            np.asarray(d["running_var"], dtype=float),
            float(d["momentum"]),
            int(d["num_batches"]),
        )


def batch_norm(a, gamma, beta, state: BatchNormState, training: bool, eps: float = 1e-5) -> Tensor:
    """Column-wise batch normalization over axis 0.

    Training mode normalizes with batch statistics and updates the running
    statistics in ``state``; eval mode normalizes with the stored running
    statistics, making the output a pure function of the input.
    """
    a, gamma, beta = _as_tensor(a), _as_tensor(gamma), _as_tensor(beta)
    x = a.values
    if x.ndim != 2:
        raise ValueError(f"batch_norm expects a 2D input, got shape {x.shape}")
    if training:
        n = x.shape[0]
        if n < 2:
            raise ValueError("batch_norm training mode needs at least 2 rows")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean) * inv
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mean
        state.running_var = (1.0 - m) * state.running_var + m * var * n / (n - 1)
        state.num_batches += 1

        def bw(g):
            if gamma.requires_grad:
                gamma.accumulate((g * xhat).sum(axis=0))
            if beta.requires_grad:
                beta.accumulate(g.sum(axis=0))
            if a.requires_grad:
                gh = g * gamma.values
                term = gh - gh.mean(axis=0) - xhat * (gh * xhat).mean(axis=0)
                a.accumulate(term * inv)

    else:
        inv = 1.0 / np.sqrt(state.running_var + eps)
        xhat = (x - state.running_mean) * inv

        def bw(g):
            if gamma.requires_grad:
                gamma.accumulate((g * xhat).sum(axis=0))
            if beta.requires_grad:
                beta.accumulate(g.sum(axis=0))
            if a.requires_grad:
                a.accumulate(g * gamma.values * inv)

    return _node(xhat * gamma.values + beta.values, (a, gamma, beta), bw, "batch_norm")


def mean(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    out = a.values.mean(axis=axis)
    count = a.values.size if axis is None else a.values.shape[axis]

    def bw(g):
        if a.requires_grad:
            if axis is None:
                a.accumulate(np.full_like(a.values, float(g) / count))
            else:
                a.accumulate(np.broadcast_to(np.expand_dims(g, axis), a.values.shape) / count)

    return _node(out, (a,), bw, "mean")


def tensor_sum(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    out = a.values.sum(axis=axis)

    def bw(g):
        if a.requires_grad:
            if axis is None:
                a.accumulate(np.full_like(a.values, float(g)))
            else:
                a.accumulate(np.broadcast_to(np.expand_dims(g, axis), a.values.shape).copy())

    return _node(out, (a,), bw, "sum")


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    orig = a.values.shape

    def bw(g):
        if a.requires_grad:
            a.accumulate(g.reshape(orig))

    return _node(a.values.reshape(shape), (a,), bw, "reshape")


def gather_rows(a, index) -> Tensor:
    """Select rows by index; gradient scatter-adds back."""
    a = _as_tensor(a)
    index = np.asarray(index, dtype=int)

    def bw(g):
        if a.requires_grad:
            acc = np.zeros_like(a.values)
            np.add.at(acc, index, g)
            a.accumulate(acc)

    return _node(a.values[index], (a,), bw, "gather_rows")


def scatter_sum(a, index, num_rows: int) -> Tensor:
    """Sum rows of ``a`` into ``num_rows`` buckets given by ``index``.

    Accumulation follows the order of the input rows, which graph
    construction canonicalizes, so results are reproducible.
    """
    a = _as_tensor(a)
    index = np.asarray(index, dtype=int)
    out = np.zeros((num_rows,) + a.values.shape[1:])
    np.add.at(out, index, a.values)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g[index])

    return _node(out, (a,), bw, "scatter_sum")


def segment_mean(a, index, num_rows: int) -> Tensor:
    """Mean of rows per bucket; buckets must be non-empty."""
    index = np.asarray(index, dtype=int)
    counts = np.bincount(index, minlength=num_rows).astype(float)
    if np.any(counts == 0):
        raise ValueError("segment_mean requires every bucket to be non-empty")
    total = scatter_sum(a, index, num_rows)
    return mul(total, 1.0 / counts[:, None])


def linear(x, weight, bias=None) -> Tensor:
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


# --- parameter checkpointing -------------------------------------------------


def parameters_to_dict(params: dict[str, Tensor]) -> dict:
    """Name -> {shape, row-major values}; floats survive JSON exactly."""
    return {
        name: {"shape": list(t.values.shape), "values": t.values.ravel().tolist()}
        for name, t in params.items()
    }


def parameters_from_dict(data: dict) -> dict[str, Tensor]:
    out = {}
    for name, entry in data.items():
        arr = np.asarray(entry["values"], dtype=float).reshape(entry["shape"])
        out[name] = Tensor(arr, requires_grad=True, name=name)
    return out


def load_parameter_values(params: dict[str, Tensor], data: dict) -> None:
    """Load checkpoint values into an existing parameter dict, strictly."""
    missing = set(params) - set(data)
    extra = set(data) - set(params)
    if missing or extra:
        raise ValueError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for name, entry in data.items():
        arr = np.asarray(entry["values"], dtype=float).reshape(entry["shape"])
        if arr.shape != params[name].values.shape:
            raise ValueError(f"shape mismatch for {name}")
        params[name].values = arr


def dumps_parameters(params: dict[str, Tensor]) -> str:
    return json.dumps(parameters_to_dict(params))


def loads_parameters(text: str) -> dict[str, Tensor]:
    return parameters_from_dict(json.loads(text))


# --- finite differences ------------------------------------------------------


def finite_difference_gradients(build, params: dict[str, Tensor], h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central-difference gradient of ``build()`` (scalar) per parameter."""
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p.values)
        for idx in np.ndindex(p.values.shape):
            orig = p.values[idx]
            p.values[idx] = orig + h
            hi = float(build().values)
            p.values[idx] = orig - h
            lo = float(build().values)
            p.values[idx] = orig
            g[idx] = (hi - lo) / (2.0 * h)
        grads[name] = g
    return grads


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    return float((np.abs(analytic - numeric) / (np.abs(numeric) + floor)).max())
