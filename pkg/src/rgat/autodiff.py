"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

Every primitive computes its forward value with numpy and, when a tape is
active and at least one input requires a gradient, appends a record holding
the inputs, the output and a closure mapping the output gradient to input
gradients. ``Tape.backward`` replays the records in exact reverse order.

Usage::

    store = ParamStore()
    w = store.add("w", np.array([1.0, 2.0]))
    with Tape() as tape:
        loss = sum_all(mul(w, w))
    backward(tape, loss, store)
    store.grads["w"]  # array([2., 4.])
"""
from __future__ import annotations

import io
import json
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64

_state = threading.local()


class ShapeError(ValueError):
    """Raised when a primitive receives incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """Raised by the debug check when a forward value is NaN or Inf."""


def set_debug(enabled: bool) -> None:
    """Toggle the per-op finiteness check (off by default, it costs a pass per op)."""
    _state.debug = bool(enabled)


def _debug() -> bool:
    return getattr(_state, "debug", False)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    op: str
    inputs: tuple[Tensor, ...]
    out: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered log of executed primitives; use as a context manager."""

    def __init__(self) -> None:
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.tapes.pop()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = {id(rec.out) for rec in self.records}
        leaves: dict[int, Tensor] = {}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key not in produced:
                    leaves[key] = inp
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        if id(loss) not in produced and loss.requires_grad:
            leaves[id(loss)] = loss
        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
            leaf.grad += g


def _current_tape() -> Tape | None:
    stack = getattr(_state, "tapes", None)
    return stack[-1] if stack else None


def _emit(op: str, value: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    if _debug() and not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op} produced a non-finite value")
    out = Tensor(value)
    tape = _current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append(_Record(op, tuple(inputs), out, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _emit("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("elementwise_mul", a, b)
    ad, bd = a.data, b.data
    return _emit("elementwise_mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    tensors = [as_tensor(t) for t in tensors]
    lead = {t.shape[:-1] for t in tensors}
    if len(lead) != 1:
        raise ShapeError(f"concat_last_axis: mismatched leading shapes {[t.shape for t in tensors]}")
    bounds = np.cumsum([0] + [t.shape[-1] for t in tensors])

    def back(g):
        return [g[..., bounds[i]:bounds[i + 1]] for i in range(len(tensors))]

    return _emit("concat_last_axis", np.concatenate([t.data for t in tensors], axis=-1),
                 tensors, back)


def gather_rows(x, index) -> Tensor:
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {x.shape[0]} rows")
    shape = x.shape

    def back(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, index, g)
        return (out,)

    return _emit("gather_rows", x.data[index], (x,), back)


def scatter_add_rows(x, index, num_rows: int) -> Tensor:
    """Sum rows of ``x`` into ``num_rows`` buckets given by ``index``."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    if index.shape != (x.shape[0],):
        raise ShapeError(f"scatter_add_rows: index shape {index.shape} vs rows {x.shape[0]}")
    out = np.zeros((num_rows,) + x.shape[1:], dtype=DTYPE)
    np.add.at(out, index, x.data)
    return _emit("scatter_add_rows", out, (x,), lambda g: (g[index],))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return _emit("leaky_relu", np.where(pos, x.data, slope * x.data), (x,),
                 lambda g: (np.where(pos, g, slope * g),))


def elu(x, alpha: float = 1.0) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    neg = alpha * np.expm1(np.minimum(x.data, 0.0))
    return _emit("elu", np.where(pos, x.data, neg), (x,),
                 lambda g: (np.where(pos, g, g * (neg + alpha)),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return _emit("relu", np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split form avoids overflow in exp for large |x|
    z = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _emit("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def log(x, floor: float | None = None) -> Tensor:
    """Natural log; with ``floor`` the input is clamped from below and gets no gradient there."""
    x = as_tensor(x)
    xd = x.data
    if floor is not None:
        live = xd > floor
        safe = np.where(live, xd, floor)
        return _emit("log", np.log(safe), (x,), lambda g: (np.where(live, g / safe, 0.0),))
    if np.any(xd <= 0):
        raise FloatingPointError("log of a non-positive value")
    return _emit("log", np.log(xd), (x,), lambda g: (g / xd,))


def dropout(x, rate: float, rng: np.random.Generator | int | None = None,
            training: bool = True) -> Tensor:
    """Inverted dropout; the sampled mask is kept on the record so backward is exact."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _emit("dropout", x.data * mask, (x,), lambda g: (g * mask,))


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    return _emit("scale", x.data * c, (x,), lambda g: (g * c,))


def segment_softmax(logits, segments, num_segments: int | None = None) -> Tensor:
    """Softmax over rows sharing a segment id, independently for every column.

    ``logits`` is a vector [E] or a matrix [E, C]; ``segments`` has length E.
    The per-segment maximum is subtracted before exponentiation.
    """
    x = as_tensor(logits)
    seg = np.asarray(segments, dtype=np.intp)
    if x.data.ndim not in (1, 2) or seg.shape != (x.shape[0],):
        raise ShapeError(f"segment_softmax: logits {x.shape} vs segments {seg.shape}")
    n = int(seg.max()) + 1 if num_segments is None and seg.size else (num_segments or 0)
    tail = x.shape[1:]
    mx = np.full((n,) + tail, -np.inf)
    np.maximum.at(mx, seg, x.data)
    ex = np.exp(x.data - mx[seg])
    den = np.zeros((n,) + tail)
    np.add.at(den, seg, ex)
    y = ex / den[seg]

    def back(g):
        gy = g * y
        tot = np.zeros((n,) + tail)
        np.add.at(tot, seg, gy)
        return (gy - y * tot[seg],)

    return _emit("segment_softmax", y, (x,), back)


# structural helpers used to wire the primitives above together


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        value = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} to {tuple(shape)}") from None
    return _emit("reshape", value, (x,), lambda g: (g.reshape(old),))


def transpose(x, axes: Sequence[int] | None = None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(reversed(range(x.data.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _emit("sum", np.asarray(x.data.sum()), (x,),
                 lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(x) -> Tensor:
    x = as_tensor(x)
    return scale(sum_all(x), 1.0 / max(x.data.size, 1))


# ---------------------------------------------------------------------------
# parameters and optimisation


@dataclass
class ParamStore:
    """Named parameters with gradients and Adam moments."""

    params: dict[str, Tensor] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already exists")
        p = Tensor(np.array(value, dtype=DTYPE), requires_grad=True, name=name)
        p.grad = np.zeros_like(p.data)
        self.params[name] = p
        self.m[name] = np.zeros_like(p.data)
        self.v[name] = np.zeros_like(p.data)
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return {k: p.grad for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = np.zeros_like(p.data)

    def count(self, prefix: str = "") -> int:
        return sum(p.data.size for k, p in self.params.items() if k.startswith(prefix))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load(self, values: dict[str, np.ndarray]) -> None:
        for k, arr in values.items():
            p = self.params[k]
            if p.data.shape != arr.shape:
                raise ShapeError(f"parameter {k!r}: stored {arr.shape} vs model {p.data.shape}")
            p.data[...] = arr


def backward(tape: Tape, loss: Tensor, store: ParamStore) -> dict[str, np.ndarray]:
    """Fill ``store`` gradients with d(loss)/d(param); unreachable params get zeros."""
    store.zero_grad()
    tape.backward(loss)
    return store.grads


def adam_step(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    store.t += 1
    c1 = 1.0 - beta1 ** store.t
    c2 = 1.0 - beta2 ** store.t
    for name, p in store.params.items():
        g = p.grad
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    store.zero_grad()


# ---------------------------------------------------------------------------
# checkpoint format
#
#   magic b"RGATCKPT" | version u8 | meta_len u32 | meta (utf-8 JSON)
#   count u32 | count x record
#   record: name_len u16 | name utf-8 | ndim u8 | ndim x u32 dims | float64 LE data

MAGIC = b"RGATCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dump_params(values: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    buf = io.BytesIO()
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<BI", VERSION, len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(values)))
    for name, arr in values.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def load_params(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    view = memoryview(blob)
    if bytes(view[:8]) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, meta_len = struct.unpack_from("<BI", view, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 13
    meta = json.loads(bytes(view[pos:pos + meta_len]).decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", view, pos)
    pos += 4
    values: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos:pos + nlen]).decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", view, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", view, pos)
        pos += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        values[name] = np.frombuffer(view, dtype="<f8", count=size, offset=pos).reshape(shape).astype(DTYPE)
        pos += 8 * size
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last record")
    return values, meta
