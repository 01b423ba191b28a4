"""Dense 2-D tensors with reverse-mode gradients.

Every tensor is a 2-D float array. Operations record their inputs and a
backward closure on the resulting tensor, so the computation graph doubles
as the tape; `backward` walks it once in reverse creation order (a valid
topological order, since operands always exist before their result). Only
the operations the tracking model needs are provided; there is no
broadcasting beyond row-vector addition.
"""

from __future__ import annotations

import itertools
import json
import math

import numpy as np

from . import backend


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class CheckpointError(ValueError):
    """A serialized parameter set does not match the expected schema."""


_seq = itertools.count(1)


class Tensor:
    """2-D array node of the computation graph.

    `grad` is filled by `backward` and accumulates across calls until reset,
    which is what lets a batch sum per-scene gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd", "_seq")

    def __init__(self, data, requires_grad=False, dtype=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype == np.float32 else np.float64
        arr = np.array(data, dtype=dtype)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got ndim={arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite value in tensor data")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._bwd = None
        self._seq = next(_seq) if requires_grad else 0

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Same values, cut out of the gradient graph."""
        return _node(self.data, (), False)

    def accumulate(self, g):
        """Add a gradient contribution the caller still owns."""
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def accumulate_owned(self, g):
        """Add a freshly allocated gradient contribution (no copy)."""
        if self.grad is None:
            self.grad = g
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _node(data, parents, requires) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t.requires_grad = requires
    t._bwd = None
    if requires:
        t._parents = parents
        t._seq = next(_seq)
    else:
        t._parents = ()
        t._seq = 0
    return t


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.data.shape} vs {b.data.shape}")
    req = a.requires_grad or b.requires_grad
    out = _node(a.data @ b.data, (a, b), req)
    if req:
        def bwd(g):
            if a.requires_grad:
                a.accumulate_owned(g @ b.data.T)
            if b.requires_grad:
                b.accumulate_owned(a.data.T @ g)
        out._bwd = bwd
    return out


def transpose(a: Tensor) -> Tensor:
    out = _node(np.ascontiguousarray(a.data.T), (a,), a.requires_grad)
    if a.requires_grad:
        def bwd(g):
            a.accumulate(g.T)
        out._bwd = bwd
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")
    req = a.requires_grad or b.requires_grad
    out = _node(a.data + b.data, (a, b), req)
    if req:
        def bwd(g):
            if a.requires_grad:
                a.accumulate(g)
            if b.requires_grad:
                b.accumulate(g)
        out._bwd = bwd
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub shapes differ: {a.data.shape} vs {b.data.shape}")
    req = a.requires_grad or b.requires_grad
    out = _node(a.data - b.data, (a, b), req)
    if req:
        def bwd(g):
            if a.requires_grad:
                a.accumulate(g)
            if b.requires_grad:
                b.accumulate_owned(-g)
        out._bwd = bwd
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; both operands the same shape."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shapes differ: {a.data.shape} vs {b.data.shape}")
    req = a.requires_grad or b.requires_grad
    out = _node(a.data * b.data, (a, b), req)
    if req:
        def bwd(g):
            if a.requires_grad:
                a.accumulate_owned(g * b.data)
            if b.requires_grad:
                b.accumulate_owned(g * a.data)
        out._bwd = bwd
    return out


def add_row(a: Tensor, row: Tensor) -> Tensor:
    """Add a 1xC row vector to every row of an RxC matrix."""
    if row.data.shape[0] != 1 or row.data.shape[1] != a.data.shape[1]:
        raise ShapeError(f"add_row needs 1x{a.data.shape[1]} row, got {row.data.shape}")
    req = a.requires_grad or row.requires_grad
    out = _node(a.data + row.data, (a, row), req)
    if req:
        def bwd(g):
            if a.requires_grad:
                a.accumulate(g)
            if row.requires_grad:
                row.accumulate_owned(g.sum(axis=0, keepdims=True))
        out._bwd = bwd
    return out


def affine(a: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """scale * a + shift with scalar constants."""
    out = _node(a.data * scale + shift, (a,), a.requires_grad)
    if a.requires_grad:
        def bwd(g):
            a.accumulate_owned(g * scale)
        out._bwd = bwd
    return out


def row_softmax(a: Tensor) -> Tensor:
    """Softmax across each row, max-subtracted for stability."""
    y = backend.softmax_rows(a.data)
    out = _node(y, (a,), a.requires_grad)
    if a.requires_grad:
        def bwd(g):
            a.accumulate_owned(backend.softmax_rows_grad(y, g))
        out._bwd = bwd
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = backend.sigmoid(a.data)
    out = _node(y, (a,), a.requires_grad)
    if a.requires_grad:
        def bwd(g):
            a.accumulate_owned(backend.sigmoid_grad(y, g))
        out._bwd = bwd
    return out


def tanh_op(a: Tensor) -> Tensor:
    y = backend.tanh(a.data)
    out = _node(y, (a,), a.requires_grad)
    if a.requires_grad:
        def bwd(g):
            a.accumulate_owned(backend.tanh_grad(y, g))
        out._bwd = bwd
    return out


def concat_rows(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_rows needs at least one tensor")
    width = parts[0].data.shape[1]
    for p in parts[1:]:
        if p.data.shape[1] != width:
            raise ShapeError(
                f"concat_rows widths differ: {parts[0].data.shape} vs {p.data.shape}"
            )
    req = any(p.requires_grad for p in parts)
    out = _node(np.concatenate([p.data for p in parts], axis=0), tuple(parts), req)
    if req:
        offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])

        def bwd(g):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    p.accumulate(g[lo:hi])
        out._bwd = bwd
    return out


def concat_cols(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_cols needs at least one tensor")
    height = parts[0].data.shape[0]
    for p in parts[1:]:
        if p.data.shape[0] != height:
            raise ShapeError(
                f"concat_cols heights differ: {parts[0].data.shape} vs {p.data.shape}"
            )
    req = any(p.requires_grad for p in parts)
    out = _node(np.concatenate([p.data for p in parts], axis=1), tuple(parts), req)
    if req:
        offsets = np.cumsum([0] + [p.data.shape[1] for p in parts])

        def bwd(g):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    p.accumulate(np.ascontiguousarray(g[:, lo:hi]))
        out._bwd = bwd
    return out


def gather_rows(a: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    out = _node(a.data[idx], (a,), a.requires_grad)
    if a.requires_grad:
        def bwd(g):
            acc = np.zeros_like(a.data)
            np.add.at(acc, idx, g)
            a.accumulate_owned(acc)
        out._bwd = bwd
    return out


def where_rows(mask, a: Tensor, b: Tensor) -> Tensor:
    """Rows of `a` where mask is true, rows of `b` elsewhere.

    The mask is a plain boolean vector, not part of the graph: gradients are
    routed per row to whichever source supplied it.
    """
    m = np.asarray(mask, dtype=bool)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"where_rows shapes differ: {a.data.shape} vs {b.data.shape}")
    if m.shape != (a.data.shape[0],):
        raise ShapeError(f"mask length {m.shape} does not match {a.data.shape[0]} rows")
    req = a.requires_grad or b.requires_grad
    out = _node(np.where(m[:, None], a.data, b.data), (a, b), req)
    if req:
        def bwd(g):
            if a.requires_grad:
                ga = np.zeros_like(a.data)
                ga[m] = g[m]
                a.accumulate_owned(ga)
            if b.requires_grad:
                gb = np.zeros_like(b.data)
                gb[~m] = g[~m]
                b.accumulate_owned(gb)
        out._bwd = bwd
    return out


def reshape(a: Tensor, rows: int, cols: int) -> Tensor:
    if rows * cols != a.data.size:
        raise ShapeError(f"cannot reshape {a.data.shape} to ({rows}, {cols})")
    out = _node(a.data.reshape(rows, cols), (a,), a.requires_grad)
    if a.requires_grad:
        def bwd(g):
            a.accumulate(g.reshape(a.data.shape))
        out._bwd = bwd
    return out


def sum_all(a: Tensor) -> Tensor:
    out = _node(np.array([[a.data.sum()]]), (a,), a.requires_grad)
    if a.requires_grad:
        def bwd(g):
            a.accumulate_owned(np.full_like(a.data, g[0, 0]))
        out._bwd = bwd
    return out


def mean_all(a: Tensor) -> Tensor:
    return affine(sum_all(a), 1.0 / a.data.size)


def backward(loss: Tensor):
    """Propagate d(loss)/d(node) through the recorded graph.

    Gradients accumulate into every reachable tensor with requires_grad set;
    parameters untouched by the loss keep whatever gradient they had (zero
    after a reset).
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

    # Reachable nodes, replayed in reverse creation order.
    nodes = [loss]
    seen = {id(loss)}
    stack = [loss]
    while stack:
        for p in stack.pop()._parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                nodes.append(p)
                stack.append(p)
    nodes.sort(key=lambda n: n._seq, reverse=True)

    loss.accumulate_owned(np.ones_like(loss.data))
    for node in nodes:
        if node._bwd is not None:
            node._bwd(node.grad)


class ParamStore:
    """Named trainable tensors with gradient slots.

    Entry order is insertion order and is preserved by serialization, which
    keeps checkpoint bytes reproducible.
    """

    FORMAT_VERSION = 1

    def __init__(self, dtype=np.float64):
        self._entries: dict[str, Tensor] = {}
        self.dtype = dtype

    def add(self, name: str, values) -> Tensor:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name: {name!r}")
        t = Tensor(values, requires_grad=True, dtype=self.dtype)
        t.grad = np.zeros_like(t.data)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name):
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self):
        return list(self._entries)

    def zero_grads(self):
        for t in self._entries.values():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            else:
                t.grad[:] = 0.0

    def total_count(self) -> int:
        return sum(t.data.size for t in self._entries.values())

    def schema(self) -> dict:
        return {name: list(t.data.shape) for name, t in self._entries.items()}

    def check_finite(self):
        for name, t in self._entries.items():
            if not np.all(np.isfinite(t.data)):
                raise FloatingPointError(f"non-finite values in parameter {name!r}")

    def to_json(self) -> str:
        doc = {"format_version": self.FORMAT_VERSION}
        for name, t in self._entries.items():
            doc[name] = {
                "shape": list(t.data.shape),
                "values": [float(x) for x in t.data.reshape(-1)],
            }
        return json.dumps(doc, separators=(",", ":"))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def from_json(cls, text: str, expected_schema: dict | None = None,
                  dtype=np.float64) -> "ParamStore":
        doc = json.loads(text)
        version = doc.pop("format_version", None)
        if version != cls.FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format_version: {version!r}")
        store = cls(dtype=dtype)
        for name, entry in doc.items():
            shape = tuple(entry["shape"])
            values = np.array([float(x) for x in entry["values"]], dtype=np.float64)
            if values.size != int(np.prod(shape)):
                raise CheckpointError(f"parameter {name!r}: {values.size} values for shape {shape}")
            store.add(name, values.reshape(shape))
        if expected_schema is not None:
            missing = [n for n in expected_schema if n not in store._entries]
            extra = [n for n in store._entries if n not in expected_schema]
            bad = [
                n
                for n in expected_schema
                if n in store._entries and list(store._entries[n].data.shape) != list(expected_schema[n])
            ]
            if missing or extra or bad:
                raise CheckpointError(
                    "checkpoint does not match model schema: "
                    f"missing={missing} unexpected={extra} shape_mismatch={bad}"
                )
        return store

    @classmethod
    def load(cls, path, expected_schema: dict | None = None, dtype=np.float64) -> "ParamStore":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read(), expected_schema, dtype=dtype)


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    """Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def grad_check(loss_fn, params: ParamStore, eps: float = 1e-6) -> float:
    """Central-difference check of every parameter entry.

    `loss_fn` must rebuild the loss from the current parameter values on
    each call. Returns the worst relative error
    max(|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)).
    """
    if not (0.0 < eps <= 1e-3):
        raise ValueError(f"eps must be in (0, 1e-3], got {eps}")
    params.zero_grads()
    backward(loss_fn())
    analytic = {name: t.grad.copy() for name, t in params.items()}

    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            hi = loss_fn().item()
            flat[k] = orig - eps
            lo = loss_fn().item()
            flat[k] = orig
            numeric = (hi - lo) / (2.0 * eps)
            denom = max(abs(a_flat[k]), abs(numeric), 1e-8)
            worst = max(worst, abs(a_flat[k] - numeric) / denom)
    return worst
