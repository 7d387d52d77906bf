"""Minimal reverse-mode autodiff over numpy arrays, plus Adam and checkpoints.

A :class:`Tensor` wraps an ``ndarray`` and remembers how it was produced;
``loss.backward()`` walks the graph in reverse topological order and
accumulates ``.grad`` on every tensor that requires it.  Broadcasting
follows numpy; gradients are summed back onto the broadcast operand.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, NonFiniteGradient, ShapeMismatch

DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    """Switch newly created tensors to ``float32`` or ``float64``."""
    global DTYPE
    DTYPE = np.dtype(dtype).type


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 _prev: tuple = (), _backward: Optional[Callable] = None):
        self.data = np.asarray(data, dtype=DTYPE) if not isinstance(data, np.ndarray) \
            or data.dtype.kind != "f" else data
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._prev = _prev
        self._backward = _backward
        self.name = name

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data) if grad is None else grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._prev:
                    # interior gradients are not needed after propagation
                    node.grad = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DTYPE))


def parameter(data, name: Optional[str] = None) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


def _node(data, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, req, None, tuple(parents) if req else (), backward if req else None)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_check(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(op, a.shape, b.shape) from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))
    return _node(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))
    return _node(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))
    return _node(a.data * b.data, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    flat = b.ndim == 2 and a.ndim > 2
    if flat:
        # one GEMM over all leading axes instead of a loop of small ones
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))
    else:
        try:
            out = np.matmul(a.data, b.data)
        except ValueError:
            raise ShapeMismatch("matmul", a.shape, b.shape) from None

    def backward(g):
        if flat:
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                a._accum((g2 @ b.data.T).reshape(a.shape))
            if b.requires_grad:
                b._accum(a2.T @ g2)
            return
        if a.requires_grad:
            a._accum(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))
    return _node(out, (a, b), backward)


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch("reshape", a.shape, tuple(shape)) from None

    def backward(g):
        a._accum(g.reshape(a.shape))
    return _node(out, (a,), backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        a._accum(np.transpose(g, inv))
    return _node(out, (a,), backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape))
    return _node(out, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[x] for x in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeMismatch("concat", *[t.shape for t in ts]) from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def backward(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])
    return _node(out, ts, backward)


def index(a: Tensor, key) -> Tensor:
    """``a[key]`` for basic or advanced indexing; repeated indices accumulate."""
    a = as_tensor(a)
    out = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        a._accum(full)
    return _node(np.array(out, copy=True), (a,), backward)


def gather(a: Tensor, idx, axis: int = 0) -> Tensor:
    """Select slices of ``a`` along ``axis`` (embedding lookup for axis 0)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < -a.shape[axis] or idx.max() >= a.shape[axis]):
        raise ShapeMismatch("gather", a.shape, idx.shape)
    out = np.take(a.data, idx, axis=axis)

    def backward(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        gm = np.moveaxis(g, list(range(axis, axis + idx.ndim)), list(range(idx.ndim)))
        np.add.at(moved, idx, gm)
        a._accum(full)
    return _node(out, (a,), backward)


def scatter_add(src: Tensor, idx, size: int) -> Tensor:
    """``out[idx[k]] += src[k]`` along axis 0 into ``size`` rows."""
    src = as_tensor(src)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != src.shape[:1]:
        raise ShapeMismatch("scatter_add", src.shape, idx.shape)
    out = np.zeros((size,) + src.shape[1:], dtype=src.data.dtype)
    np.add.at(out, idx, src.data)

    def backward(g):
        src._accum(g[idx])
    return _node(out, (src,), backward)


def rel_logits(q: Tensor, table: Tensor, rel_idx) -> Tensor:
    """``out[..., i, j] = q[..., i, :] . table[rel_idx[i, j]]`` for relative attention.

    ``q`` is (..., N, dh), ``table`` is (R, dh) and ``rel_idx`` an (N, N)
    integer matrix; the products are batched over the query position.
    """
    q, table = as_tensor(q), as_tensor(table)
    rel_idx = np.asarray(rel_idx, dtype=np.int64)
    n, dh = q.shape[-2], q.shape[-1]
    if rel_idx.shape != (n, n) or table.shape[-1] != dh:
        raise ShapeMismatch("rel_logits", q.shape, table.shape, rel_idx.shape)
    lead = q.shape[:-2]
    rg = table.data[rel_idx]                                   # (N, N, dh)
    qi = np.moveaxis(q.data.reshape((-1, n, dh)), 1, 0)        # (N, M, dh)
    out = np.matmul(qi, np.swapaxes(rg, 1, 2))                 # (N, M, N)
    out = np.moveaxis(out, 0, 1).reshape(lead + (n, n))

    def backward(g):
        gi = np.moveaxis(g.reshape((-1, n, n)), 1, 0)          # (N, M, N)
        if q.requires_grad:
            dq = np.matmul(gi, rg)                             # (N, M, dh)
            q._accum(np.moveaxis(dq, 0, 1).reshape(q.shape))
        if table.requires_grad:
            drg = np.matmul(np.swapaxes(gi, 1, 2), qi)         # (N, N, dh)
            full = np.zeros_like(table.data)
            np.add.at(full, rel_idx.ravel(), drg.reshape(-1, dh))
            table._accum(full)
    return _node(out, (q, table), backward)


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def backward(g):
        a._accum(g * mask)
    return _node(a.data * mask, (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh approximation of GELU."""
    a = as_tensor(a)
    x = a.data
    x2 = x * x
    inner = _GELU_C * x * (1.0 + 0.044715 * x2)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        a._accum(g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th ** 2) * dinner))
    return _node(out, (a,), backward)


def gelu_or_relu(a: Tensor, kind: str = "relu") -> Tensor:
    if kind == "relu":
        return relu(a)
    if kind == "gelu":
        return gelu(a)
    raise ConfigError(f"unknown nonlinearity {kind!r}")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeMismatch("softmax", a.shape, (axis,))
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        a._accum(out * (g - (g * out).sum(axis=axis, keepdims=True)))
    return _node(out, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        a._accum(g - p * g.sum(axis=axis, keepdims=True))
    return _node(out, (a,), backward)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    if gamma.shape != a.shape[-1:] or beta.shape != a.shape[-1:]:
        raise ShapeMismatch("layer_norm", a.shape, gamma.shape, beta.shape)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accum((g * xhat).reshape(-1, x.shape[-1]).sum(axis=0))
        if beta.requires_grad:
            beta._accum(g.reshape(-1, x.shape[-1]).sum(axis=0))
        if a.requires_grad:
            gx = g * gamma.data
            n = x.shape[-1]
            a._accum(inv / n * (n * gx - gx.sum(axis=-1, keepdims=True)
                                - xhat * (gx * xhat).sum(axis=-1, keepdims=True)))
    return _node(out, (a, gamma, beta), backward)


def dropout(a: Tensor, p: float, seed, training: bool = True) -> Tensor:
    """Inverted dropout; ``seed`` may be an int or a tuple counter key."""
    a = as_tensor(a)
    if not training or p <= 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    key = list(seed) if isinstance(seed, (tuple, list)) else [seed]
    rng = np.random.default_rng([int(k) & 0xFFFFFFFFFFFFFFFF for k in key])
    mask = (rng.random(a.shape, dtype=np.float32) >= p) * (1.0 / (1.0 - p))

    def backward(g):
        a._accum(g * mask)
    return _node(a.data * mask, (a,), backward)


def cross_entropy(logits: Tensor, target, reduction: str = "mean", weight=None) -> Tensor:
    """Negative log-likelihood of softmax(logits) over the last axis.

    ``target`` is either integer class ids (shape ``logits.shape[:-1]``) or a
    boolean mask of the same shape as ``logits``; a mask marginalizes over
    every marked class.  ``weight`` scales the per-row losses.
    """
    logits = as_tensor(logits)
    x = logits.data
    target = np.asarray(target)
    if target.dtype == bool:
        if target.shape != x.shape:
            raise ShapeMismatch("cross_entropy", x.shape, target.shape)
        mask = target
    else:
        if target.shape != x.shape[:-1]:
            raise ShapeMismatch("cross_entropy", x.shape, target.shape)
        mask = np.zeros(x.shape, dtype=bool)
        np.put_along_axis(mask, target[..., None].astype(np.int64), True, axis=-1)
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    z = e.sum(axis=-1, keepdims=True)
    et = np.where(mask, e, 0.0)
    zt = et.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        rows = (np.log(z) - np.log(zt))[..., 0]
    w = np.ones(rows.shape) if weight is None else np.asarray(weight, dtype=x.dtype)
    if reduction == "mean":
        scale = w / rows.size
        out = np.sum(rows * w) / rows.size
    elif reduction == "sum":
        scale = w
        out = np.sum(rows * w)
    elif reduction == "none":
        scale = None
        out = rows * w
    else:
        raise ValueError(f"unknown reduction {reduction!r}")

    def backward(g):
        s = (g * w) if scale is None else (g * scale)
        s = np.asarray(s)[..., None]
        with np.errstate(invalid="ignore", divide="ignore"):
            qt = np.where(mask, e / np.where(zt > 0, zt, 1.0), 0.0)
        logits._accum(s * (e / z - qt))
    return _node(np.asarray(out, dtype=x.dtype), (logits,), backward)


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    lr: float = 1e-4
    warmup_steps: int = 800
    clip_norm: float = 1.0
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def effective_lr(self, step: Optional[int] = None) -> float:
        step = self.step if step is None else step
        if self.warmup_steps <= 0:
            return self.lr
        return self.lr * min(1.0, step / self.warmup_steps)


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads))


def adam_step(params: dict, grads: dict, state: AdamState) -> dict:
    """One AdamW update, in place on ``params`` (name -> Tensor or ndarray).

    Gradients are clipped to ``clip_norm`` by global norm; the learning rate
    ramps linearly over ``warmup_steps``; weight decay is decoupled and only
    touches parameters with two or more axes.
    """
    for name in params:
        g = grads.get(name)
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
    names = [n for n in params if grads.get(n) is not None]
    norm = global_norm(grads[n] for n in names)
    scale = 1.0
    if state.clip_norm and norm > state.clip_norm:
        scale = state.clip_norm / norm
    state.step += 1
    lr = state.effective_lr()
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name in names:
        p = params[name]
        data = p.data if isinstance(p, Tensor) else p
        g = grads[name] * scale
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(data)
            state.v[name] = np.zeros_like(data)
        elif m.shape != data.shape:
            raise ShapeMismatch("adam_step", m.shape, data.shape)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay and data.ndim >= 2:
            data -= lr * state.weight_decay * data
        data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return {"lr": lr, "grad_norm": norm, "clip_scale": scale}


# ---------------------------------------------------------------------------
# checkpoint container

_MAGIC = b"RLTCKPT\x00"
CONTAINER_VERSION = 1


def save_arrays(path, arrays: dict, config: dict) -> None:
    """Write named float64 arrays plus a JSON header into one file."""
    entries, offset, blobs = [], 0, []
    for name in arrays:
        # ascontiguousarray would promote 0-d arrays to 1-d
        arr = np.array(arrays[name], dtype="<f8", order="C")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"version": CONTAINER_VERSION, "config": config,
                         "arrays": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_arrays(path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != _MAGIC:
        raise ConfigError(f"{path} is not a checkpoint container")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    if header.get("version") != CONTAINER_VERSION:
        raise ConfigError(f"unsupported checkpoint version {header.get('version')!r}")
    base = 16 + hlen
    arrays = {}
    for ent in header["arrays"]:
        count = int(np.prod(ent["shape"])) if ent["shape"] else 1
        start = base + ent["offset"]
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=start)
        arrays[ent["name"]] = arr.reshape(tuple(ent["shape"])).astype(np.float64)
    return arrays, header["config"]
