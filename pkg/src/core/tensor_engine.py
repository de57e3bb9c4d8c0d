# src/core/tensor_engine.py
"""
Minimal reverse-mode differentiation over numpy arrays.

Every op builds an output Tensor that remembers its parents (`_prev`) and a
`_backward` closure pushing the output gradient into them. `Tensor.backward`
runs the closures in reverse topological order.

Parameters and activations are float32; a graph is promoted to float64 by
casting the parameters (see gradcheck).
"""
from __future__ import annotations

import logging
from collections import OrderedDict
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src import constants as C
from src.exceptions import EmptyAxis, NoGradient, ShapeMismatch

logger = logging.getLogger(__name__)

MAX_NDIM = 4
PARAM_DTYPE = np.float32

ArrayLike = Union[np.ndarray, float, int, "Tensor"]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "_op", "name")

    def __init__(self, data, requires_grad: bool = False, _prev: Tuple["Tensor", ...] = (),
                 _op: str = "", name: str = ""):
        arr = np.asarray(data)
        if arr.ndim > MAX_NDIM:
            raise ShapeMismatch(f"tensors have at most {MAX_NDIM} dimensions, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(PARAM_DTYPE)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._prev = _prev
        self._backward: Optional[Callable[[], None]] = None
        self._op = _op
        self.name = name

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.data.dtype}, op={self._op or 'leaf'})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # --------- gradient plumbing ---------

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = np.asarray(g, dtype=self.data.dtype)
        if g.shape != self.data.shape:
            g = _unbroadcast(g, self.data.shape)
        self.grad = g.copy() if self.grad is None else self.grad + g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeMismatch(f"backward needs a scalar loss, got shape {self.shape}")

        topo: List[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._prev):
                if id(parent) not in visited:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # --------- operators ---------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def as_tensor(x: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else PARAM_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _prev=tuple(parents) if needs else (), _op=op)


# -------------------------
# Elementwise arithmetic
# -------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    out = _make(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def _backward():
            a._accumulate(out.grad)
            b._accumulate(out.grad)
        out._backward = _backward
    return out


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    out = _make(a.data - b.data, (a, b), "sub")
    if out.requires_grad:
        def _backward():
            a._accumulate(out.grad)
            b._accumulate(-out.grad)
        out._backward = _backward
    return out


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    out = _make(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def _backward():
            a._accumulate(out.grad * b.data)
            b._accumulate(out.grad * a.data)
        out._backward = _backward
    return out


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    out = _make(a.data / b.data, (a, b), "div")
    if out.requires_grad:
        def _backward():
            a._accumulate(out.grad / b.data)
            b._accumulate(-out.grad * a.data / (b.data * b.data))
        out._backward = _backward
    return out


def neg(a: Tensor) -> Tensor:
    out = _make(-a.data, (a,), "neg")
    if out.requires_grad:
        def _backward():
            a._accumulate(-out.grad)
        out._backward = _backward
    return out


def power(a: Tensor, exponent: float) -> Tensor:
    out = _make(a.data ** exponent, (a,), "pow")
    if out.requires_grad:
        def _backward():
            a._accumulate(out.grad * exponent * a.data ** (exponent - 1))
        out._backward = _backward
    return out


def sqrt(a: Tensor) -> Tensor:
    """Square root whose gradient is 0 at 0 (distances between identical vectors)."""
    value = np.sqrt(a.data)
    out = _make(value, (a,), "sqrt")
    if out.requires_grad:
        def _backward():
            safe = np.where(value > 0, value, 1)
            a._accumulate(np.where(value > 0, out.grad * 0.5 / safe, 0))
        out._backward = _backward
    return out


def _pair(a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# -------------------------
# Reductions and shape ops
# -------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), "sum")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            elif axis is None and not keepdims:
                g = np.reshape(g, (1,) * a.ndim)
            a._accumulate(np.broadcast_to(g, a.shape))
        out._backward = _backward
    return out


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    if count == 0:
        raise EmptyAxis("cannot average over an empty axis")
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    out = _make(a.data.reshape(shape), (a,), "reshape")
    if out.requires_grad:
        def _backward():
            a._accumulate(out.grad.reshape(a.shape))
        out._backward = _backward
    return out


def take(a: Tensor, idx: np.ndarray) -> Tensor:
    """Rows of `a` selected along axis 0; repeated indices accumulate."""
    idx = np.asarray(idx, dtype=np.int64)
    out = _make(a.data[idx], (a,), "take")
    if out.requires_grad:
        def _backward():
            g = np.zeros_like(a.data)
            np.add.at(g, idx, out.grad)
            a._accumulate(g)
        out._backward = _backward
    return out


def gather_points(x: Tensor, idx: np.ndarray) -> Tensor:
    """x: [B, N, C], idx: [B, ...] -> [B, ..., C] with out[b, ...] = x[b, idx[b, ...]]."""
    idx = np.asarray(idx, dtype=np.int64)
    if x.ndim != 3 or idx.shape[0] != x.shape[0]:
        raise ShapeMismatch(f"gather_points expects x [B,N,C] and idx [B,...], got {x.shape} and {idx.shape}")
    bidx = np.arange(x.shape[0]).reshape((-1,) + (1,) * (idx.ndim - 1))
    out = _make(x.data[bidx, idx], (x,), "gather")
    if out.requires_grad:
        def _backward():
            g = np.zeros_like(x.data)
            np.add.at(g, (np.broadcast_to(bidx, idx.shape), idx), out.grad)
            x._accumulate(g)
        out._backward = _backward
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat")
    if out.requires_grad:
        sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

        def _backward():
            for t, g in zip(tensors, np.split(out.grad, sizes, axis=axis)):
                t._accumulate(g)
        out._backward = _backward
    return out


# -------------------------
# Layers
# -------------------------

def dense(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """y = x W + b over the last axis."""
    c_in, c_out = W.shape
    if x.shape[-1] != c_in or b.shape != (c_out,):
        raise ShapeMismatch(
            f"dense: input channels {x.shape[-1]} vs weight {W.shape}, bias {b.shape}"
        )
    out = _make(x.data @ W.data + b.data, (x, W, b), "dense")
    if out.requires_grad:
        def _backward():
            g = out.grad
            x._accumulate(g @ W.data.T)
            W._accumulate(x.data.reshape(-1, c_in).T @ g.reshape(-1, c_out))
            b._accumulate(g.reshape(-1, c_out).sum(axis=0))
        out._backward = _backward
    return out


def relu(x: Tensor) -> Tensor:
    out = _make(np.maximum(x.data, 0), (x,), "relu")
    if out.requires_grad:
        def _backward():
            x._accumulate(out.grad * (x.data > 0))
        out._backward = _backward
    return out


def max_pool_points(x: Tensor) -> Tensor:
    """Per-channel max over the point axis: [..., P, C] -> [..., C]; ties go to the first point."""
    if x.ndim < 2 or x.shape[-2] == 0:
        raise EmptyAxis(f"max_pool_points needs a non-empty point axis, got shape {x.shape}")
    arg = np.argmax(x.data, axis=-2)
    value = np.take_along_axis(x.data, arg[..., None, :], axis=-2)[..., 0, :]
    out = _make(value, (x,), "max_pool")
    if out.requires_grad:
        def _backward():
            g = np.zeros_like(x.data)
            np.put_along_axis(g, arg[..., None, :], out.grad[..., None, :], axis=-2)
            x._accumulate(g)
        out._backward = _backward
    return out


def l2_normalize(x: Tensor, eps: float = C.L2_EPS) -> Tensor:
    norm = np.sqrt(np.sum(x.data * x.data, axis=-1, keepdims=True))
    clipped = norm >= eps
    denom = np.where(clipped, norm, eps)
    y = x.data / denom
    out = _make(y, (x,), "l2_normalize")
    if out.requires_grad:
        def _backward():
            g = out.grad
            projected = (g - y * np.sum(g * y, axis=-1, keepdims=True)) / denom
            x._accumulate(np.where(clipped, projected, g / eps))
        out._backward = _backward
    return out


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must satisfy 0 <= p < 1, got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) * (1.0 / (1.0 - p))
    out = _make(x.data * keep, (x,), "dropout")
    if out.requires_grad:
        def _backward():
            x._accumulate(out.grad * keep)
        out._backward = _backward
    return out


# -------------------------
# Rotations
# -------------------------

def quat_to_rotmat(q: Tensor) -> Tensor:
    """Unit quaternions [..., 4] (w, x, y, z) -> rotation matrices [..., 3, 3]."""
    if q.shape[-1] != 4:
        raise ShapeMismatch(f"quaternions need a trailing axis of 4, got {q.shape}")
    w, x, y, z = (q.data[..., i] for i in range(4))
    R = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1).reshape(q.shape[:-1] + (3, 3))
    out = _make(R, (q,), "quat_to_rotmat")
    if out.requires_grad:
        def _backward():
            G = out.grad
            g = [[G[..., i, j] for j in range(3)] for i in range(3)]
            dw = 2 * (-g[0][1] * z + g[0][2] * y + g[1][0] * z - g[1][2] * x - g[2][0] * y + g[2][1] * x)
            dx = 2 * (g[0][1] * y + g[0][2] * z + g[1][0] * y - 2 * g[1][1] * x
                      - g[1][2] * w + g[2][0] * z + g[2][1] * w - 2 * g[2][2] * x)
            dy = 2 * (-2 * g[0][0] * y + g[0][1] * x + g[0][2] * w + g[1][0] * x
                      + g[1][2] * z - g[2][0] * w + g[2][1] * z - 2 * g[2][2] * y)
            dz = 2 * (-2 * g[0][0] * z - g[0][1] * w + g[0][2] * x + g[1][0] * w
                      - 2 * g[1][1] * z + g[1][2] * y + g[2][0] * x + g[2][1] * y)
            q._accumulate(np.stack([dw, dx, dy, dz], axis=-1))
        out._backward = _backward
    return out


def rotate_points(points: Tensor, R: Tensor) -> Tensor:
    """points [B, N, 3], R [B, 3, 3] -> points @ R^T per batch entry."""
    if points.ndim != 3 or R.shape != (points.shape[0], 3, 3):
        raise ShapeMismatch(f"rotate_points: points {points.shape} vs rotations {R.shape}")
    out = _make(np.einsum("bnj,bij->bni", points.data, R.data), (points, R), "rotate")
    if out.requires_grad:
        def _backward():
            points._accumulate(np.einsum("bni,bij->bnj", out.grad, R.data))
            R._accumulate(np.einsum("bni,bnj->bij", out.grad, points.data))
        out._backward = _backward
    return out


# -------------------------
# Parameters
# -------------------------

class ParamStore:
    """Named parameter tensors Θ; names are unique and shapes fixed after creation."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=PARAM_DTYPE), requires_grad=True, name=name)
        self._params[name] = t
        return t

    @property
    def dtype(self):
        first = next(iter(self._params.values()), None)
        return first.data.dtype if first is not None else np.dtype(PARAM_DTYPE)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def astype(self, dtype) -> None:
        for p in self._params.values():
            p.data = p.data.astype(dtype)
            if p.grad is not None:
                p.grad = p.grad.astype(dtype)

    def gradients(self) -> Dict[str, np.ndarray]:
        missing = [n for n, p in self._params.items() if p.grad is None]
        if missing:
            raise NoGradient(f"parameters without gradient: {', '.join(missing)}")
        return {n: p.grad for n, p in self._params.items()}

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self._params.items())

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        unknown = set(state) - set(self._params)
        missing = set(self._params) - set(state)
        if unknown or missing:
            raise ShapeMismatch(
                f"parameter names differ: missing {sorted(missing)}, unexpected {sorted(unknown)}"
            )
        for name, value in state.items():
            p = self._params[name]
            if tuple(value.shape) != p.shape:
                raise ShapeMismatch(f"{name}: expected shape {p.shape}, got {tuple(value.shape)}")
            p.data = np.array(value, dtype=p.data.dtype)

    def num_values(self) -> int:
        return int(sum(p.data.size for p in self._params.values()))


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(PARAM_DTYPE)
