"""Reverse-mode differentiation over dense float64 arrays.

Every operation records a node on an append-only :class:`Graph`.  Vector-Jacobian
products are themselves written with graph operations, so calling
:meth:`Graph.backward` with ``create_graph=True`` yields gradients that can be
differentiated again.  With ``create_graph=False`` the very same arithmetic runs
without recording, which keeps first-order values identical in both modes.

Typical use::

    g = Graph()
    x = g.leaf(np.array(3.0))
    y = x * x
    (dx,) = g.backward(y, [x])      # dx.data == 6.0
"""

from __future__ import annotations

import io
import json
import struct
import threading
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64
CHECKPOINT_MAGIC = b"CAMADAPT-CKPT\n"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""


class NonFiniteError(FloatingPointError):
    """A loss or gradient contained NaN or infinity."""


_state = threading.local()


def _recording() -> bool:
    return getattr(_state, "recording", True)


@contextmanager
def recording(enabled: bool):
    prev = _recording()
    _state.recording = enabled
    try:
        yield
    finally:
        _state.recording = prev


def no_grad():
    """Context in which operations return constants instead of graph nodes."""
    return recording(False)


@dataclass
class Node:
    op: str
    inputs: tuple
    value: np.ndarray
    vjp: Callable | None = None


class Graph:
    """Append-only tape.  Node ``i`` only ever depends on nodes ``< i``."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, name: str | None = None) -> "Tensor":
        arr = np.array(value, dtype=DTYPE)
        node = Node("leaf" if name is None else f"leaf:{name}", (), arr)
        self.nodes.append(node)
        return Tensor(arr, self, len(self.nodes) - 1)

    def forward(self, node: int) -> "Tensor":
        if not isinstance(node, (int, np.integer)) or not 0 <= node < len(self.nodes):
            raise KeyError(f"unknown node id {node!r}")
        return Tensor(self.nodes[node].value, self, int(node))

    def backward(
        self,
        output: "Tensor",
        wrt: Sequence["Tensor"],
        create_graph: bool = False,
    ) -> list["Tensor"]:
        """Gradient of the scalar ``output`` with respect to each tensor in ``wrt``.

        A ``wrt`` tensor that ``output`` does not depend on (including constants
        and tensors of other graphs) gets a zero gradient rather than an error.
        """
        if output.data.size != 1:
            raise ShapeError(f"backward: output must be scalar, got shape {output.shape}")
        wrt = list(wrt)
        results = [Tensor(np.zeros_like(w.data)) for w in wrt]
        if output.graph is not self or output.node is None:
            return results
        end = output.node + 1
        targets: dict[int, list[int]] = {}
        for k, w in enumerate(wrt):
            if w.graph is self and w.node is not None and w.node < end:
                targets.setdefault(w.node, []).append(k)
        if not targets:
            return results

        # nodes on some path from a wrt node to the output
        relevant = np.zeros(end, dtype=bool)
        start = min(targets)
        relevant[list(targets)] = True
        nodes = self.nodes
        for i in range(start, end):
            if not relevant[i]:
                for j in nodes[i].inputs:
                    if j is not None and relevant[j]:
                        relevant[i] = True
                        break
        if not relevant[output.node]:
            return results

        grads: dict[int, Tensor] = {output.node: Tensor(np.ones_like(output.data))}
        with recording(create_graph):
            for i in range(end - 1, start - 1, -1):
                g = grads.pop(i, None)
                if g is None:
                    continue
                for k in targets.get(i, ()):
                    results[k] = g
                node = nodes[i]
                if node.vjp is None:
                    continue
                needed = [j is not None and relevant[j] for j in node.inputs]
                if not any(needed):
                    continue
                in_grads = node.vjp(g)
                for j, want, gj in zip(node.inputs, needed, in_grads):
                    if not want or gj is None:
                        continue
                    prev = grads.get(j)
                    grads[j] = gj if prev is None else prev + gj
        return results


def _graph_of(tensors: Iterable["Tensor"]) -> Graph | None:
    graph = None
    for t in tensors:
        if t.graph is not None:
            if graph is None:
                graph = t.graph
            elif t.graph is not graph:
                raise ValueError("operands belong to different graphs")
    return graph


def _make(op: str, parents: Sequence["Tensor"], value: np.ndarray, vjp: Callable) -> "Tensor":
    if not _recording():
        return Tensor(value)
    graph = _graph_of(parents)
    if graph is None:
        return Tensor(value)
    inputs = tuple(p.node if p.graph is graph else None for p in parents)
    graph.nodes.append(Node(op, inputs, value, vjp))
    return Tensor(value, graph, len(graph.nodes) - 1)


def as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DTYPE))


class Tensor:
    """A float64 array, optionally attached to a node of a :class:`Graph`."""

    __slots__ = ("data", "graph", "node")
    __array_priority__ = 100

    def __init__(self, data, graph: Graph | None = None, node: int | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.graph = graph
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = "const" if self.node is None else f"node={self.node}"
        return f"Tensor({self.data!r}, {tag})"

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
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


# ---------------------------------------------------------------------------
# shape plumbing


def _broadcast_shape(op, a, b):
    if a.shape == b.shape:
        return a.shape
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def sum_to(x, shape) -> Tensor:
    """Sum ``x`` down to a shape it was broadcast from."""
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(shape) if n == 1 and x.shape[i + lead] != 1
    )
    value = x.data.sum(axis=axes, keepdims=True)
    if lead:
        value = value.reshape(value.shape[lead:])
    return _make("sum_to", [x], value, lambda g: (broadcast_to(g, x.shape),))


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    try:
        value = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None
    return _make("broadcast_to", [x], value, lambda g: (sum_to(g, x.shape),))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        value = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None
    return _make("reshape", [x], value, lambda g: (reshape(g, x.shape),))


def transpose(x) -> Tensor:
    """Swap the last two axes."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"transpose: need at least 2 dims, got shape {x.shape}")
    value = np.swapaxes(x.data, -1, -2)
    return _make("transpose", [x], value, lambda g: (transpose(g),))


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _make("add", [a, b], a.data + b.data,
                 lambda g: (sum_to(g, a.shape), sum_to(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _make("sub", [a, b], a.data - b.data,
                 lambda g: (sum_to(g, a.shape), sum_to(scale(g, -1.0), b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _make("mul", [a, b], a.data * b.data,
                 lambda g: (sum_to(mul(g, b), a.shape), sum_to(mul(g, a), b.shape)))


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _make("scale", [x], x.data * c, lambda g: (scale(g, c),))


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        value = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    return _make(
        "matmul", [a, b], value,
        lambda g: (sum_to(matmul(g, transpose(b)), a.shape),
                   sum_to(matmul(transpose(a), g), b.shape)),
    )


# ---------------------------------------------------------------------------
# indexing and joining


def getitem(x, key) -> Tensor:
    x = as_tensor(x)
    value = np.array(x.data[key], dtype=DTYPE)
    return _make("slice", [x], value, lambda g: (scatter(g, x.shape, key),))


def _is_basic(key) -> bool:
    """Basic indices never repeat an element, so plain assignment is safe."""
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int, np.integer)) or k is None or k is Ellipsis for k in parts)


def scatter(g, shape, key) -> Tensor:
    """Adjoint of ``getitem``: a zero array of ``shape`` with ``g`` added at ``key``."""
    g = as_tensor(g)
    out = np.zeros(shape, dtype=DTYPE)
    if _is_basic(key):
        out[key] += g.data
    else:
        np.add.at(out, key, g.data)
    return _make("scatter", [g], out, lambda h: (getitem(h, key),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no operands")
    try:
        value = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes} on axis {axis}") from None
    ax = axis % value.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def vjp(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            key = (slice(None),) * ax + (slice(int(lo), int(hi)),)
            out.append(getitem(g, key))
        return tuple(out)

    return _make("concat", tensors, value, vjp)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = []
    for t in tensors:
        ax = axis % (t.ndim + 1)
        expanded.append(reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]))
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------------------
# nonlinearities


def tanh(x) -> Tensor:
    x = as_tensor(x)
    value = np.tanh(x.data)
    out = None

    def vjp(g):
        return (mul(g, 1.0 - mul(out, out)),)

    out = _make("tanh", [x], value, vjp)
    return out


def _sigmoid(v):
    return 0.5 * (np.tanh(0.5 * v) + 1.0)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = None

    def vjp(g):
        return (mul(g, mul(out, 1.0 - out)),)

    out = _make("sigmoid", [x], _sigmoid(x.data), vjp)
    return out


def softplus(x) -> Tensor:
    x = as_tensor(x)
    return _make("softplus", [x], np.logaddexp(0.0, x.data), lambda g: (mul(g, sigmoid(x)),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = None

    def vjp(g):
        return (mul(g, out),)

    out = _make("exp", [x], np.exp(x.data), vjp)
    return out


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise FloatingPointError("log: non-positive input")
    return _make("log", [x], np.log(x.data), lambda g: (mul(g, _reciprocal(x)),))


def _reciprocal(x) -> Tensor:
    x = as_tensor(x)
    out = None

    def vjp(g):
        return (scale(mul(g, mul(out, out)), -1.0),)

    out = _make("reciprocal", [x], 1.0 / x.data, vjp)
    return out


def tabs(x) -> Tensor:
    """Elementwise |x|; the derivative at 0 is taken as 0."""
    x = as_tensor(x)
    sign = Tensor(np.sign(x.data))
    return _make("abs", [x], np.abs(x.data), lambda g: (mul(g, sign),))


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)
    out = None

    def vjp(g):
        inner = tsum(mul(g, out), axis=axis, keepdims=True)
        return (mul(out, sub(g, inner)),)

    out = _make("softmax", [x], value, vjp)
    return out


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x.data - m).sum(axis=axis, keepdims=True))

    def vjp(g):
        return (sub(g, mul(softmax(x, axis), tsum(g, axis=axis, keepdims=True))),)

    return _make("log_softmax", [x], x.data - lse, vjp)


# ---------------------------------------------------------------------------
# reductions


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    value = x.data.sum(axis=axes, keepdims=keepdims)
    kept = tuple(1 if i in axes else n for i, n in enumerate(x.shape))

    def vjp(g):
        return (broadcast_to(reshape(g, kept), x.shape),)

    return _make("sum", [x], np.asarray(value, dtype=DTYPE), vjp)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scale(tsum(x, axis, keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# losses used across modules


def l1_distance(a, b) -> Tensor:
    """Sum of absolute elementwise differences."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"l1_distance: shapes {a.shape} and {b.shape} differ")
    return tsum(tabs(sub(a, b)))


# ---------------------------------------------------------------------------
# parameters and optimizers


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


class ParamSet:
    """Ordered, uniquely named collection of float64 parameter arrays."""

    def __init__(self, items: Iterable[tuple[str, np.ndarray]] = ()):
        self._params: dict[str, np.ndarray] = {}
        self.adam = AdamState()
        for name, value in items:
            self.add(name, value)

    def add(self, name: str, value) -> None:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._params[name] = np.array(value, dtype=DTYPE)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name]

    def __setitem__(self, name: str, value) -> None:
        if name not in self._params:
            raise KeyError(name)
        value = np.asarray(value, dtype=DTYPE)
        if value.shape != self._params[name].shape:
            raise ShapeError(f"{name}: shape {value.shape} != {self._params[name].shape}")
        self._params[name] = value.copy()

    def __contains__(self, name) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def copy(self) -> "ParamSet":
        out = ParamSet((k, v.copy()) for k, v in self._params.items())
        out.adam = AdamState(
            {k: v.copy() for k, v in self.adam.m.items()},
            {k: v.copy() for k, v in self.adam.v.items()},
            self.adam.t,
        )
        return out

    def subset(self, prefix: str, strip: bool = False) -> "ParamSet":
        out = ParamSet()
        for k, v in self._params.items():
            if k.startswith(prefix):
                out.add(k[len(prefix):] if strip else k, v.copy())
        return out

    def prefixed(self, prefix: str) -> "ParamSet":
        return ParamSet((prefix + k, v.copy()) for k, v in self._params.items())

    def merged(self, other: "ParamSet") -> "ParamSet":
        out = self.copy()
        for k, v in other.items():
            out.add(k, v.copy())
        return out

    def attach(self, graph: Graph) -> dict[str, Tensor]:
        """Register every parameter as a leaf of ``graph``."""
        return {k: graph.leaf(v, k) for k, v in self._params.items()}

    def constants(self) -> dict[str, Tensor]:
        return {k: Tensor(v) for k, v in self._params.items()}

    def equal(self, other: "ParamSet") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(self[k], other[k]) for k in self
        )

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for k, v in self._params.items():
            h.update(k.encode())
            h.update(str(v.shape).encode())
            h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return h.hexdigest()

    # -- checkpoint format: magic, manifest length, JSON manifest, raw <f8 arrays

    def to_bytes(self) -> bytes:
        manifest = {
            "format_version": CHECKPOINT_VERSION,
            "params": [
                {"name": k, "shape": list(v.shape), "dtype": "<f8"}
                for k, v in self._params.items()
            ],
        }
        head = json.dumps(manifest, separators=(",", ":")).encode()
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        buf.write(struct.pack("<Q", len(head)))
        buf.write(head)
        for v in self._params.values():
            buf.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ParamSet":
        if not blob.startswith(CHECKPOINT_MAGIC):
            raise ValueError("not a checkpoint file")
        off = len(CHECKPOINT_MAGIC)
        (n,) = struct.unpack_from("<Q", blob, off)
        off += 8
        manifest = json.loads(blob[off:off + n])
        off += n
        if manifest.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(
                f"checkpoint format version {manifest.get('format_version')} "
                f"unsupported (expected {CHECKPOINT_VERSION})"
            )
        out = cls()
        for entry in manifest["params"]:
            if entry["dtype"] != "<f8":
                raise ValueError(f"unsupported dtype {entry['dtype']}")
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape)
            off += 8 * count
            out.add(entry["name"], arr.astype(DTYPE))
        if off != len(blob):
            raise ValueError("checkpoint has trailing bytes")
        return out

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ParamSet":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _check_finite(grads, what="gradient"):
    for g in grads:
        data = g.data if isinstance(g, Tensor) else np.asarray(g)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"non-finite {what}")


def sgd_step_diff(params: dict[str, Tensor], grads: Sequence[Tensor], lr: float) -> dict[str, Tensor]:
    """One differentiable gradient-descent step, ``p - lr * g``.

    Returns new tensors; when ``params`` are graph nodes the result stays
    connected to them (and to ``grads`` if those were built with
    ``create_graph``).
    """
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    grads = list(grads)
    if len(grads) != len(params):
        raise ShapeError(f"sgd_step_diff: {len(params)} params but {len(grads)} grads")
    _check_finite(grads)
    out = {}
    for (name, p), g in zip(params.items(), grads):
        if p.shape != g.shape:
            raise ShapeError(f"sgd_step_diff: {name} shape {p.shape} vs grad {g.shape}")
        out[name] = sub(p, scale(g, lr))
    return out


def adam_step(
    params: ParamSet,
    grads: dict[str, np.ndarray] | Sequence[np.ndarray],
    lr: float | dict,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    names: Sequence[str] | None = None,
) -> bool:
    """In-place Adam update with bias correction.

    ``lr`` is a float or a dict of per-parameter rates.
    ``grads`` is aligned with ``names`` (default: every parameter).  Returns
    False, leaving parameters and state untouched, if any gradient is
    non-finite.
    """
    if isinstance(grads, dict):
        names = list(grads) if names is None else list(names)
        grads = [grads[k] for k in names]
    else:
        names = params.names() if names is None else list(names)
        grads = list(grads)
    if len(grads) != len(names):
        raise ShapeError(f"adam_step: {len(names)} params but {len(grads)} grads")
    arrays = [np.asarray(g.data if isinstance(g, Tensor) else g, dtype=DTYPE) for g in grads]
    if not all(np.all(np.isfinite(g)) for g in arrays):
        warnings.warn("adam_step: non-finite gradient, step skipped", RuntimeWarning)
        return False
    rates = lr if isinstance(lr, dict) else None
    st = params.adam
    st.t += 1
    bc1 = 1.0 - beta1 ** st.t
    bc2 = 1.0 - beta2 ** st.t
    for name, g in zip(names, arrays):
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: {name} shape {p.shape} vs grad {g.shape}")
        m = st.m.get(name)
        v = st.v.get(name)
        m = (1 - beta1) * g if m is None else beta1 * m + (1 - beta1) * g
        v = (1 - beta2) * g * g if v is None else beta2 * v + (1 - beta2) * g * g
        st.m[name], st.v[name] = m, v
        step_lr = lr if rates is None else rates[name]
        params[name] = p - step_lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return True
