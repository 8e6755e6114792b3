"""Recorded computation graphs over dense numpy arrays.

A :class:`Graph` is an append-only tape of operation records.  Leaves are
named tensors bound at evaluation time, so the same graph can be replayed
cheaply against new inputs.  Any scalar node can be differentiated with
respect to any leaf in a single reverse pass, and :func:`finite_diff_check`
provides an independent central-difference oracle for those gradients.

Values are float32 in normal operation; reductions accumulate in float64.
The oracle runs the whole graph in float64 so it measures the formulas, not
rounding noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DTYPE = np.float32


class TensorError(Exception):
    """Base class for graph/tensor failures."""


class ShapeError(TensorError):
    """Operand shapes are inconsistent with the requested operation."""


class GraphError(TensorError):
    """Structural misuse: unbound leaf, foreign node, non-scalar target."""


class NumericError(TensorError):
    """An operation produced NaN or Inf."""


class WeightMatrix:
    """A weight array with its positive and negative parts split out.

    The split satisfies ``values == pos + neg`` exactly (max/min against
    zero are lossless on floats).
    """

    def __init__(self, values):
        v = np.asarray(values)
        if v.dtype not in (np.float32, np.float64):
            v = v.astype(DTYPE)
        self.values = v
        self.pos = np.maximum(v, 0)
        self.neg = np.minimum(v, 0)

    @property
    def shape(self):
        return self.values.shape


# ---------------------------------------------------------------------------
# numpy kernels shared by forward and backward rules


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softmax_last(x):
    z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _pad_hw(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((pad, pad), (pad, pad), (0, 0)))


def _im2col(x, kh, kw, stride):
    # x already padded, (H, W, C) -> (Ho*Wo, kh*kw*C) with (kh, kw, C) patch order
    view = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(0, 1))
    view = view[::stride, ::stride]  # (Ho, Wo, C, kh, kw)
    ho, wo = view.shape[:2]
    cols = view.transpose(0, 1, 3, 4, 2).reshape(ho * wo, kh * kw * x.shape[2])
    return cols, ho, wo


def _conv2d(x, w, stride, pad):
    kh, kw, cin, cout = w.shape
    xp = _pad_hw(x, pad)
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    out = cols @ w.reshape(kh * kw * cin, cout)
    return out.reshape(ho, wo, cout)


def _conv2d_input_grad(dy, w, stride, pad, in_hw):
    # transpose of _conv2d as a linear map in x; also the forward rule of
    # the conv2d_transpose primitive
    kh, kw, cin, cout = w.shape
    h, wd = in_hw
    hp, wp = h + 2 * pad, wd + 2 * pad
    ho, wo = dy.shape[:2]
    dh, dw = (ho - 1) * stride + 1, (wo - 1) * stride + 1
    dil = np.zeros((dh, dw, cout), dtype=dy.dtype)
    dil[::stride, ::stride] = dy
    tail_h = hp - ((ho - 1) * stride + kh)
    tail_w = wp - ((wo - 1) * stride + kw)
    dil = np.pad(dil, ((kh - 1, kh - 1 + tail_h), (kw - 1, kw - 1 + tail_w), (0, 0)))
    wf = w[::-1, ::-1].transpose(0, 1, 3, 2)  # (kh, kw, cout, cin)
    dxp = _conv2d(dil, np.ascontiguousarray(wf), 1, 0)
    if pad == 0:
        return dxp
    return dxp[pad:pad + h, pad:pad + wd]


def _conv2d_weight_grad(x, dy, stride, pad, wshape):
    kh, kw, cin, cout = wshape
    xp = _pad_hw(x, pad)
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    dw = cols.T @ dy.reshape(ho * wo, cout)
    return dw.reshape(kh, kw, cin, cout)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _reduced_shape(shape, axis, keepdims):
    if axis is None:
        return tuple(1 for _ in shape) if keepdims else ()
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    if keepdims:
        return tuple(1 if i in axes else d for i, d in enumerate(shape))
    return tuple(d for i, d in enumerate(shape) if i not in axes)


def _expand_reduced(grad, in_shape, axis, keepdims):
    # reshape a reduction gradient so it broadcasts back over the input
    if axis is None:
        return np.broadcast_to(grad.reshape(tuple(1 for _ in in_shape)), in_shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = sorted(a % len(in_shape) for a in axes)
        shape = list(grad.shape)
        for a in axes:
            shape.insert(a, 1)
        grad = grad.reshape(shape)
    return np.broadcast_to(grad, in_shape)


# ---------------------------------------------------------------------------
# graph


@dataclass(frozen=True)
class _Record:
    kind: str
    args: tuple
    shape: tuple
    params: dict


class Node:
    """Handle to a recorded graph node; supports arithmetic sugar."""

    __slots__ = ("graph", "idx")

    def __init__(self, graph, idx):
        self.graph = graph
        self.idx = idx

    @property
    def shape(self):
        return self.graph.record(self.idx).shape

    def reshape(self, shape):
        return self.graph.reshape(self, shape)

    def __add__(self, other):
        return self.graph.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.graph.subtract(self, other)

    def __rsub__(self, other):
        return self.graph.subtract(other, self)

    def __mul__(self, other):
        return self.graph.multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.graph.divide(self, other)

    def __rtruediv__(self, other):
        return self.graph.divide(other, self)

    def __neg__(self):
        return self.graph.multiply(self, -1.0)

    def __repr__(self):
        rec = self.graph.record(self.idx)
        return f"Node#{self.idx}<{rec.kind}{list(rec.shape)}>"


_ELEMWISE = {"add", "subtract", "multiply", "divide"}


class Graph:
    """Append-only tape of tensor operations.

    Records are immutable once appended and stay topologically ordered by
    construction, so replaying them against the same bindings reproduces
    identical values bit for bit.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._leaves: dict[str, int] = {}
        self._const_cache: dict[tuple[int, str], np.ndarray] = {}
        self._needed_cache: dict[tuple, list[int]] = {}

    # -- construction -------------------------------------------------------

    def record(self, idx) -> _Record:
        return self._records[idx]

    @property
    def n_nodes(self):
        return len(self._records)

    @property
    def leaf_names(self):
        return tuple(self._leaves)

    def _append(self, kind, args, shape, **params) -> Node:
        self._records.append(_Record(kind, tuple(args), tuple(shape), params))
        self._needed_cache.clear()
        return Node(self, len(self._records) - 1)

    def _node(self, x) -> Node:
        if isinstance(x, Node):
            if x.graph is not self:
                raise GraphError("node belongs to a different graph")
            return x
        return self.const(x)

    def leaf(self, name: str, shape) -> Node:
        if name in self._leaves:
            raise GraphError(f"leaf {name!r} already declared")
        shape = tuple(int(d) for d in shape)
        if any(d <= 0 for d in shape):
            raise ShapeError(f"leaf {name!r} has non-positive dimension {shape}")
        node = self._append("leaf", (), shape, name=name)
        self._leaves[name] = node.idx
        return node

    def const(self, value) -> Node:
        v = np.asarray(value, dtype=np.float64)
        return self._append("const", (), v.shape, value=v)

    def _binary(self, kind, a, b) -> Node:
        a, b = self._node(a), self._node(b)
        try:
            shape = np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError(f"{kind}: cannot broadcast {a.shape} with {b.shape}")
        return self._append(kind, (a.idx, b.idx), shape)

    def add(self, a, b) -> Node:
        return self._binary("add", a, b)

    def subtract(self, a, b) -> Node:
        return self._binary("subtract", a, b)

    def multiply(self, a, b) -> Node:
        return self._binary("multiply", a, b)

    def divide(self, a, b) -> Node:
        return self._binary("divide", a, b)

    def matmul(self, a, b) -> Node:
        a, b = self._node(a), self._node(b)
        if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
        return self._append("matmul", (a.idx, b.idx), (a.shape[0], b.shape[1]))

    def conv2d(self, x, w, stride: int = 1, padding: int = 0) -> Node:
        x, w = self._node(x), self._node(w)
        shape = self._conv_shape(x.shape, w.shape, stride, padding)
        return self._append("conv2d", (x.idx, w.idx), shape,
                            stride=int(stride), padding=int(padding))

    def conv2d_transpose(self, y, w, stride: int, padding: int, out_hw) -> Node:
        """Adjoint of conv2d as a forward op: scatters y back through w.

        ``out_hw`` fixes the spatial size of the result; it must be a size
        that a conv2d with this kernel/stride/padding maps onto y's size.
        """
        y, w = self._node(y), self._node(w)
        kh, kw, cin, cout = w.shape
        oh, ow = int(out_hw[0]), int(out_hw[1])
        expect = self._conv_shape((oh, ow, cin), w.shape, stride, padding)
        if expect[:2] != tuple(y.shape[:2]) or y.shape[2] != cout:
            raise ShapeError(
                f"conv2d_transpose: {y.shape} does not match conv output "
                f"{expect} for input {(oh, ow, cin)}")
        return self._append("convT", (y.idx, w.idx), (oh, ow, cin),
                            stride=int(stride), padding=int(padding))

    @staticmethod
    def _conv_shape(xs, ws, stride, padding):
        if len(xs) != 3 or len(ws) != 4:
            raise ShapeError(f"conv2d expects (H,W,C) and (kh,kw,Cin,Cout), got {xs}, {ws}")
        kh, kw, cin, cout = ws
        if xs[2] != cin:
            raise ShapeError(f"conv2d: input channels {xs[2]} != kernel {cin}")
        if stride < 1 or padding < 0:
            raise ShapeError("conv2d: stride must be >=1 and padding >=0")
        h, wd = xs[0] + 2 * padding, xs[1] + 2 * padding
        if h < kh or wd < kw:
            raise ShapeError("conv2d: kernel larger than padded input")
        return ((h - kh) // stride + 1, (wd - kw) // stride + 1, cout)

    def relu(self, x) -> Node:
        x = self._node(x)
        return self._append("relu", (x.idx,), x.shape)

    def sigmoid(self, x) -> Node:
        x = self._node(x)
        return self._append("sigmoid", (x.idx,), x.shape)

    def softmax(self, x) -> Node:
        x = self._node(x)
        if not x.shape:
            raise ShapeError("softmax needs at least one axis")
        return self._append("softmax", (x.idx,), x.shape)

    def log(self, x) -> Node:
        x = self._node(x)
        return self._append("log", (x.idx,), x.shape)

    def _reduce(self, kind, x, axis, keepdims) -> Node:
        x = self._node(x)
        shape = _reduced_shape(x.shape, axis, keepdims)
        return self._append(kind, (x.idx,), shape, axis=axis, keepdims=keepdims)

    def sum(self, x, axis=None, keepdims=False) -> Node:
        return self._reduce("sum", x, axis, keepdims)

    def mean(self, x, axis=None, keepdims=False) -> Node:
        return self._reduce("mean", x, axis, keepdims)

    def amax(self, x, axis=None, keepdims=False) -> Node:
        return self._reduce("amax", x, axis, keepdims)

    def clamp(self, x, lo: float, hi: float) -> Node:
        x = self._node(x)
        if lo > hi:
            raise ShapeError(f"clamp: lo {lo} > hi {hi}")
        return self._append("clamp", (x.idx,), x.shape, lo=float(lo), hi=float(hi))

    def broadcast(self, x, shape) -> Node:
        x = self._node(x)
        shape = tuple(int(d) for d in shape)
        try:
            if np.broadcast_shapes(x.shape, shape) != shape:
                raise ValueError
        except ValueError:
            raise ShapeError(f"cannot broadcast {x.shape} to {shape}")
        return self._append("broadcast", (x.idx,), shape)

    def reshape(self, x, shape) -> Node:
        x = self._node(x)
        shape = tuple(int(d) for d in shape)
        if int(np.prod(shape, dtype=np.int64)) != int(np.prod(x.shape, dtype=np.int64)):
            raise ShapeError(f"cannot reshape {x.shape} to {shape}")
        return self._append("reshape", (x.idx,), shape)

    def concat(self, parts: Sequence, axis: int) -> Node:
        nodes = [self._node(p) for p in parts]
        if not nodes:
            raise ShapeError("concat of zero parts")
        base = list(nodes[0].shape)
        axis = axis % len(base)
        for n in nodes[1:]:
            s = list(n.shape)
            if len(s) != len(base) or any(s[i] != base[i] for i in range(len(base)) if i != axis):
                raise ShapeError(f"concat: incompatible part shapes {nodes[0].shape} vs {n.shape}")
        shape = list(base)
        shape[axis] = sum(n.shape[axis] for n in nodes)
        return self._append("concat", tuple(n.idx for n in nodes), tuple(shape), axis=axis)

    def slice(self, x, begin, size) -> Node:
        x = self._node(x)
        begin = tuple(int(b) for b in begin)
        size = tuple(int(s) for s in size)
        if len(begin) != len(x.shape) or len(size) != len(x.shape):
            raise ShapeError("slice: begin/size rank mismatch")
        for b, s, d in zip(begin, size, x.shape):
            if b < 0 or s < 1 or b + s > d:
                raise ShapeError(f"slice out of range: begin={begin} size={size} shape={x.shape}")
        return self._append("slice", (x.idx,), size, begin=begin)

    # -- evaluation ----------------------------------------------------------

    def _needed(self, targets: tuple) -> list[int]:
        cached = self._needed_cache.get(targets)
        if cached is not None:
            return cached
        seen = set()
        stack = list(targets)
        while stack:
            i = stack.pop()
            if i in seen:
                continue
            seen.add(i)
            stack.extend(self._records[i].args)
        order = sorted(seen)
        self._needed_cache[targets] = order
        return order

    def _const_value(self, idx, dtype):
        key = (idx, np.dtype(dtype).str)
        v = self._const_cache.get(key)
        if v is None:
            v = self._records[idx].params["value"].astype(dtype)
            self._const_cache[key] = v
        return v

    def _forward(self, bindings, targets: tuple, dtype):
        order = self._needed(targets)
        vals: dict[int, np.ndarray] = {}
        for i in order:
            rec = self._records[i]
            kind = rec.kind
            if kind == "leaf":
                name = rec.params["name"]
                if name not in bindings:
                    raise GraphError(f"leaf {name!r} is unbound")
                v = np.asarray(bindings[name], dtype=dtype)
                if v.shape != rec.shape:
                    raise ShapeError(
                        f"binding for {name!r} has shape {v.shape}, expected {rec.shape}")
            elif kind == "const":
                v = self._const_value(i, dtype)
            else:
                a = [vals[j] for j in rec.args]
                with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                    v = self._apply(rec, a, dtype)
            if not np.all(np.isfinite(v)):
                raise NumericError(f"non-finite values produced by {kind} node #{i}")
            vals[i] = v
        return vals

    @staticmethod
    def _apply(rec, a, dtype):
        kind = rec.kind
        if kind == "add":
            return a[0] + a[1]
        if kind == "subtract":
            return a[0] - a[1]
        if kind == "multiply":
            return a[0] * a[1]
        if kind == "divide":
            return a[0] / a[1]
        if kind == "matmul":
            return a[0] @ a[1]
        if kind == "conv2d":
            return _conv2d(a[0], a[1], rec.params["stride"], rec.params["padding"])
        if kind == "convT":
            return _conv2d_input_grad(a[0], a[1], rec.params["stride"],
                                      rec.params["padding"], rec.shape[:2])
        if kind == "relu":
            return np.maximum(a[0], 0)
        if kind == "sigmoid":
            return _sigmoid(a[0])
        if kind == "softmax":
            return _softmax_last(a[0])
        if kind == "log":
            return np.log(a[0])
        if kind == "sum":
            p = rec.params
            return a[0].sum(axis=p["axis"], keepdims=p["keepdims"],
                            dtype=np.float64).astype(dtype)
        if kind == "mean":
            p = rec.params
            return a[0].mean(axis=p["axis"], keepdims=p["keepdims"],
                             dtype=np.float64).astype(dtype)
        if kind == "amax":
            p = rec.params
            return a[0].max(axis=p["axis"], keepdims=p["keepdims"])
        if kind == "clamp":
            return np.clip(a[0], rec.params["lo"], rec.params["hi"])
        if kind == "broadcast":
            return np.broadcast_to(a[0], rec.shape).copy()
        if kind == "reshape":
            return a[0].reshape(rec.shape)
        if kind == "concat":
            return np.concatenate(a, axis=rec.params["axis"])
        if kind == "slice":
            begin = rec.params["begin"]
            sl = tuple(np.s_[b:b + s] for b, s in zip(begin, rec.shape))
            return np.ascontiguousarray(a[0][sl])
        raise GraphError(f"unknown op kind {kind!r}")

    def evaluate(self, bindings: dict, outputs, dtype=DTYPE):
        """Evaluate one node or a list of nodes under the given leaf bindings."""
        single = isinstance(outputs, Node)
        nodes = [outputs] if single else list(outputs)
        for n in nodes:
            self._node(n)
        vals = self._forward(bindings, tuple(n.idx for n in nodes), dtype)
        out = [vals[n.idx] for n in nodes]
        return out[0] if single else out

    # -- reverse mode --------------------------------------------------------

    def _backward(self, rec, a, out, grad):
        kind = rec.kind
        if kind == "add":
            return (_unbroadcast(grad, a[0].shape), _unbroadcast(grad, a[1].shape))
        if kind == "subtract":
            return (_unbroadcast(grad, a[0].shape), _unbroadcast(-grad, a[1].shape))
        if kind == "multiply":
            return (_unbroadcast(grad * a[1], a[0].shape),
                    _unbroadcast(grad * a[0], a[1].shape))
        if kind == "divide":
            return (_unbroadcast(grad / a[1], a[0].shape),
                    _unbroadcast(-grad * a[0] / (a[1] * a[1]), a[1].shape))
        if kind == "matmul":
            return (grad @ a[1].T, a[0].T @ grad)
        if kind == "conv2d":
            s, p = rec.params["stride"], rec.params["padding"]
            return (_conv2d_input_grad(grad, a[1], s, p, a[0].shape[:2]),
                    _conv2d_weight_grad(a[0], grad, s, p, a[1].shape))
        if kind == "convT":
            s, p = rec.params["stride"], rec.params["padding"]
            return (_conv2d(grad, a[1], s, p),
                    _conv2d_weight_grad(grad, a[0], s, p, a[1].shape))
        if kind == "relu":
            return (grad * (a[0] > 0),)
        if kind == "sigmoid":
            return (grad * out * (1.0 - out),)
        if kind == "softmax":
            inner = grad - np.sum(grad * out, axis=-1, keepdims=True)
            return (out * inner,)
        if kind == "log":
            return (grad / a[0],)
        if kind == "sum":
            p = rec.params
            return (_expand_reduced(grad, a[0].shape, p["axis"], p["keepdims"]).copy(),)
        if kind == "mean":
            p = rec.params
            full = _expand_reduced(grad, a[0].shape, p["axis"], p["keepdims"])
            count = a[0].size // max(out.size, 1)
            return (full / count,)
        if kind == "amax":
            p = rec.params
            big = _expand_reduced(out, a[0].shape, p["axis"], p["keepdims"])
            mask = (a[0] == big).astype(a[0].dtype)
            counts = np.asarray(mask.sum(axis=p["axis"], keepdims=p["keepdims"],
                                         dtype=np.float64))
            counts = _expand_reduced(counts, a[0].shape, p["axis"], p["keepdims"])
            g = _expand_reduced(grad, a[0].shape, p["axis"], p["keepdims"])
            return ((g * mask / counts).astype(a[0].dtype),)
        if kind == "clamp":
            inside = (a[0] >= rec.params["lo"]) & (a[0] <= rec.params["hi"])
            return (grad * inside,)
        if kind == "broadcast":
            return (_unbroadcast(grad, a[0].shape),)
        if kind == "reshape":
            return (grad.reshape(a[0].shape),)
        if kind == "concat":
            axis = rec.params["axis"]
            outs = []
            start = 0
            for arr in a:
                n = arr.shape[axis]
                sl = [np.s_[:]] * arr.ndim
                sl[axis] = np.s_[start:start + n]
                outs.append(np.ascontiguousarray(grad[tuple(sl)]))
                start += n
            return tuple(outs)
        if kind == "slice":
            begin = rec.params["begin"]
            full = np.zeros(a[0].shape, dtype=grad.dtype)
            sl = tuple(np.s_[b:b + s] for b, s in zip(begin, rec.shape))
            full[sl] = grad
            return (full,)
        raise GraphError(f"no backward rule for {kind!r}")

    def _check_scalar(self, scalar: Node):
        self._node(scalar)
        if int(np.prod(scalar.shape, dtype=np.int64)) != 1:
            raise GraphError(f"gradient target must be scalar, got shape {scalar.shape}")

    def _resolve_leaf(self, wrt) -> int:
        if isinstance(wrt, str):
            if wrt not in self._leaves:
                raise GraphError(f"unknown leaf {wrt!r}")
            return self._leaves[wrt]
        wrt = self._node(wrt)
        if self._records[wrt.idx].kind != "leaf":
            raise GraphError("gradient target must be a leaf")
        return wrt.idx

    def forward_backward(self, scalar: Node, wrts, bindings: dict, dtype=DTYPE):
        """One forward pass plus one reverse pass.

        Returns ``(scalar_value, [d scalar / d wrt for each wrt])``.  Leaves
        with no path to the scalar get zero gradients.
        """
        self._check_scalar(scalar)
        wrt_idx = [self._resolve_leaf(w) for w in (wrts if isinstance(wrts, (list, tuple)) else [wrts])]
        vals = self._forward(bindings, (scalar.idx,), dtype)
        order = self._needed((scalar.idx,))
        adj: dict[int, np.ndarray] = {
            scalar.idx: np.ones(self._records[scalar.idx].shape, dtype=dtype)}
        for i in reversed(order):
            g = adj.pop(i, None)
            if g is None:
                continue
            rec = self._records[i]
            if rec.kind in ("leaf", "const"):
                adj[i] = g  # keep leaf grads
                continue
            args_vals = [vals[j] for j in rec.args]
            contribs = self._backward(rec, args_vals, vals[i], g)
            for j, c in zip(rec.args, contribs):
                if c is None:
                    continue
                if j in adj:
                    adj[j] = adj[j] + c
                else:
                    adj[j] = c
        grads = []
        for idx in wrt_idx:
            g = adj.get(idx)
            if g is None:
                g = np.zeros(self._records[idx].shape, dtype=dtype)
            else:
                g = np.asarray(g, dtype=dtype)
                if not np.all(np.isfinite(g)):
                    raise NumericError("non-finite gradient")
            grads.append(g)
        value = vals[scalar.idx]
        return value, grads

    def gradient(self, scalar: Node, wrt, bindings: dict, dtype=DTYPE) -> np.ndarray:
        """d(scalar)/d(wrt) for a single leaf, same shape as the leaf."""
        _, grads = self.forward_backward(scalar, [wrt], bindings, dtype)
        return grads[0]

    def gradients(self, scalar: Node, wrts: Iterable, bindings: dict, dtype=DTYPE):
        """Gradients for several leaves from one reverse pass, as a list."""
        _, grads = self.forward_backward(scalar, list(wrts), bindings, dtype)
        return grads


# ---------------------------------------------------------------------------
# finite-difference oracle


@dataclass
class FiniteDiffReport:
    max_rel_error: float
    passed: bool
    checked: int
    skipped: int
    kinks: list

    def __bool__(self):
        return self.passed


def finite_diff_check(graph: Graph, scalar: Node, wrt, bindings: dict,
                      step: float = 1e-3, tol: float = 1e-3,
                      indices=None) -> FiniteDiffReport:
    """Compare the analytic gradient against central differences.

    Runs the graph in float64 so the check measures the differentiation
    rules rather than float32 rounding.  Components where the one-sided
    differences disagree badly (ReLU-style kinks) are excluded from the
    error and reported in ``kinks``; components where both the analytic and
    numeric values are below 1e-6 in magnitude are skipped.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    leaf_idx = graph._resolve_leaf(wrt)
    name = graph.record(leaf_idx).params["name"]
    base = np.asarray(bindings[name], dtype=np.float64)
    analytic = graph.gradient(scalar, wrt, bindings, dtype=np.float64)

    flat = base.reshape(-1)
    if indices is None:
        idxs = range(flat.size)
    else:
        idxs = [int(i) for i in indices]

    def value_at(v):
        b = dict(bindings)
        b[name] = v.reshape(base.shape)
        return float(graph.evaluate(b, scalar, dtype=np.float64).reshape(()))

    max_rel = 0.0
    checked = skipped = 0
    kinks = []
    an_flat = analytic.reshape(-1)
    f_mid = value_at(flat)
    for i in idxs:
        lo, hi = flat.copy(), flat.copy()
        hi[i] += step
        lo[i] -= step
        f_hi, f_lo = value_at(hi), value_at(lo)
        fwd = (f_hi - f_mid) / step
        bwd = (f_mid - f_lo) / step
        central = 0.5 * (fwd + bwd)
        an = float(an_flat[i])
        scale = max(abs(central), abs(an))
        if scale <= 1e-6:
            skipped += 1
            continue
        rel = abs(central - an) / scale
        if rel > tol:
            gap = abs(fwd - bwd) / max(abs(fwd), abs(bwd), 1e-6)
            if gap > 0.3:
                kinks.append(int(i))
                continue
        checked += 1
        max_rel = max(max_rel, rel)
    return FiniteDiffReport(max_rel_error=max_rel, passed=max_rel <= tol,
                            checked=checked, skipped=skipped, kinks=kinks)
