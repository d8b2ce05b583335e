"""Dense float64 tensors with a reverse-mode gradient tape.

Usage::

    with Tape() as tape:
        w = tape.leaf(np.ones((3, 2)))
        x = constant(np.arange(6.0).reshape(2, 3))
        loss = sum_all(sigmoid(matmul(x, w)))
    grads = backward(loss)
    grads[w.node]          # Tensor of shape (3, 2)

Only scalar-with-tensor broadcasting is supported by the pointwise ops. Row
biases go through :func:`add_bias` so every gradient rule stays explicit.
"""

from __future__ import annotations

import threading
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionError, EmptyNeighborhoodError, RankError

_state = threading.local()


class Tensor:
    """Immutable dense array, optionally attached to a tape node."""

    __slots__ = ("values", "node", "tape")

    def __init__(self, values, node: Optional[int] = None, tape: Optional["Tape"] = None):
        arr = np.array(values, dtype=np.float64)
        arr.flags.writeable = False
        self.values = arr
        self.node = node
        self.tape = tape

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def tracked(self) -> bool:
        return self.node is not None

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def __repr__(self):
        tag = f", node={self.node}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

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

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of primitive operations.

    Entries are appended as ops execute, so parents always precede children.
    A tape is confined to the thread that entered it.
    """

    def __init__(self):
        self.parents: List[Tuple[int, ...]] = []
        self.rules: List[Optional[Callable]] = []
        self.shapes: List[Tuple[int, ...]] = []
        self.leaves: List[int] = []

    def __enter__(self):
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def __len__(self):
        return len(self.parents)

    def leaf(self, values) -> Tensor:
        """Register a tracked input (typically a parameter)."""
        t = Tensor(values)
        t.node = self._push((), None, t.shape)
        t.tape = self
        self.leaves.append(t.node)
        return t

    def _push(self, parents, rule, shape) -> int:
        self.parents.append(tuple(parents))
        self.rules.append(rule)
        self.shapes.append(shape)
        return len(self.parents) - 1


def constant(values) -> Tensor:
    return values if isinstance(values, Tensor) else Tensor(values)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: np.ndarray, inputs: Sequence[Tensor], rule: Callable) -> Tensor:
    """Wrap ``out``; record ``rule(grad_out) -> grads per input`` if any input is tracked."""
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("tensors from different tapes cannot be combined")
            tape = t.tape
    result = Tensor.__new__(Tensor)
    out = np.asarray(out, dtype=np.float64)
    out.flags.writeable = False
    result.values, result.node, result.tape = out, None, None
    if tape is None:
        return result
    parents = tuple(t.node if t.tape is not None else -1 for t in inputs)
    result.node = tape._push(parents, rule, result.shape)
    result.tape = tape
    return result


def backward(loss: Tensor) -> Dict[int, Tensor]:
    """Gradients of a scalar ``loss`` for every leaf on its tape.

    Leaves the loss does not depend on receive zero gradients. Returns a map
    from tape node id to gradient tensor.
    """
    if loss.values.size != 1:
        raise RankError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is None:
        raise ValueError("loss is not on an active tape")
    tape = loss.tape
    leaves = set(tape.leaves)
    grads: Dict[int, np.ndarray] = {loss.node: np.ones(loss.shape)}
    for node in range(loss.node, -1, -1):
        g = grads.get(node)
        rule = tape.rules[node]
        if g is None or rule is None:
            continue
        parent_grads = rule(g)
        for parent, pg in zip(tape.parents[node], parent_grads):
            if parent < 0 or pg is None:
                continue
            if parent in grads:
                grads[parent] = grads[parent] + pg
            else:
                grads[parent] = pg
        if node not in leaves:
            del grads[node]
    out = {}
    for leaf in tape.leaves:
        g = grads.get(leaf)
        out[leaf] = Tensor(g if g is not None else np.zeros(tape.shapes[leaf]))
    return out


# ---------------------------------------------------------------------------
# linear algebra and structure


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    av, bv = a.values, b.values

    def rule(g):
        return g @ bv.T, av.T @ g

    return _record(av @ bv, (a, b), rule)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat needs at least one part")
    ndim = parts[0].values.ndim
    ax = axis % ndim
    for p in parts:
        if p.values.ndim != ndim or any(
            p.shape[d] != parts[0].shape[d] for d in range(ndim) if d != ax
        ):
            raise DimensionError(
                f"concat side dimensions differ: {[p.shape for p in parts]} along axis {axis}"
            )
    out = np.concatenate([p.values for p in parts], axis=ax)
    bounds = np.cumsum([0] + [p.shape[ax] for p in parts])

    def rule(g):
        index = [slice(None)] * ndim
        res = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index[ax] = slice(lo, hi)
            res.append(g[tuple(index)])
        return res

    return _record(out, parts, rule)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.shape
    try:
        out = x.values.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {old} to {shape}") from exc
    return _record(out, (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.values.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got {x.shape}")
    return _record(x.values.T, (x,), lambda g: (g.T,))


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    if x.values.ndim != 2 or not 0 <= start <= stop <= x.shape[1]:
        raise DimensionError(f"bad column slice [{start}:{stop}] of {x.shape}")
    shape = x.shape

    def rule(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _record(x.values[:, start:stop], (x,), rule)


def take_rows(x: Tensor, index) -> Tensor:
    """Gather rows ``x[index]``; repeated indices accumulate in the gradient."""
    x = _as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    shape = x.shape

    def rule(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _record(x.values[index], (x,), rule)


def segment_sum(x: Tensor, segments, n_segments: int) -> Tensor:
    """Sum rows of ``x`` into ``n_segments`` buckets given by ``segments``."""
    x = _as_tensor(x)
    segments = np.asarray(segments, dtype=np.intp)
    if segments.shape[0] != x.shape[0]:
        raise DimensionError(f"segment ids {segments.shape} do not match rows {x.shape}")
    out = np.zeros((n_segments,) + x.shape[1:])
    np.add.at(out, segments, x.values)
    return _record(out, (x,), lambda g: (g[segments],))


def sum_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    return _record(np.array(x.values.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    n = x.values.size
    return mul(sum_all(x), 1.0 / n)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-F vector to every row of an [n, F] matrix."""
    x, b = _as_tensor(x), _as_tensor(b)
    if x.values.ndim != 2 or b.values.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias shape mismatch: {x.shape} + {b.shape}")
    return _record(x.values + b.values, (x, b), lambda g: (g, g.sum(axis=0)))


# ---------------------------------------------------------------------------
# pointwise


def _pair(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        return a, b, None
    if a.values.size == 1 and a.values.ndim <= 1:
        return a, b, "a"
    if b.values.size == 1 and b.values.ndim <= 1:
        return a, b, "b"
    raise DimensionError(f"incompatible shapes for pointwise op: {a.shape} and {b.shape}")


def _reduce(g, which, side, shape):
    return g.sum().reshape(shape) if which == side else g


def add(a, b) -> Tensor:
    a, b, s = _pair(a, b)
    sa, sb = a.shape, b.shape
    out = a.values + b.values
    return _record(out, (a, b), lambda g: (_reduce(g, s, "a", sa), _reduce(g, s, "b", sb)))


def sub(a, b) -> Tensor:
    a, b, s = _pair(a, b)
    sa, sb = a.shape, b.shape
    out = a.values - b.values
    return _record(out, (a, b), lambda g: (_reduce(g, s, "a", sa), -_reduce(g, s, "b", sb)))


def mul(a, b) -> Tensor:
    a, b, s = _pair(a, b)
    av, bv = a.values, b.values
    sa, sb = a.shape, b.shape

    def rule(g):
        return _reduce(g * bv, s, "a", sa), _reduce(g * av, s, "b", sb)

    return _record(av * bv, (a, b), rule)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    v = x.values
    # split by sign so exp never overflows
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.values)
    return _record(out, (x,), lambda g: (g * (1.0 - out * out),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    x = _as_tensor(x)
    factor = np.where(x.values > 0, 1.0, slope)
    return _record(x.values * factor, (x,), lambda g: (g * factor,))


def square(x: Tensor) -> Tensor:
    return mul(x, x)


def pointwise(kind: str, *args, slope: float = 0.2) -> Tensor:
    """Dispatch by name: sigmoid, tanh, leaky_relu, add, mul, sub."""
    unary = {"sigmoid": sigmoid, "tanh": tanh}
    binary = {"add": add, "mul": mul, "sub": sub}
    if kind in unary:
        return unary[kind](*args)
    if kind == "leaky_relu":
        return leaky_relu(args[0], slope)
    if kind in binary:
        return binary[kind](*args)
    raise ValueError(f"unknown pointwise op {kind!r}")


# ---------------------------------------------------------------------------
# attention normalisation


def softmax_masked(logits: Tensor, mask) -> Tensor:
    """Softmax over the entries where ``mask`` is true; the rest are exactly 0."""
    logits = _as_tensor(logits)
    mask = np.asarray(mask, dtype=bool)
    if logits.values.ndim != 1 or mask.shape != logits.shape:
        raise DimensionError(f"softmax_masked expects matching 1-D inputs, got {logits.shape}, {mask.shape}")
    if not mask.any():
        raise EmptyNeighborhoodError("softmax over an empty neighborhood")
    v = logits.values
    shifted = np.where(mask, v - v[mask].max(), 0.0)
    e = np.where(mask, np.exp(shifted), 0.0)
    out = e / e.sum()

    def rule(g):
        return (out * (g - (g * out).sum()),)

    return _record(out, (logits,), rule)


def segment_softmax(logits: Tensor, segments, n_segments: int) -> Tensor:
    """Column-wise softmax of [E, K] logits within each destination segment.

    Equivalent to applying :func:`softmax_masked` per segment and column.
    """
    logits = _as_tensor(logits)
    segments = np.asarray(segments, dtype=np.intp)
    v = logits.values
    if v.ndim != 2 or segments.shape[0] != v.shape[0]:
        raise DimensionError(f"segment_softmax expects [E, K] logits, got {v.shape}")
    counts = np.bincount(segments, minlength=n_segments)
    if (counts[:n_segments] == 0).any():
        empty = int(np.flatnonzero(counts[:n_segments] == 0)[0])
        raise EmptyNeighborhoodError(f"node {empty} has no incoming edges")
    peak = np.full((n_segments, v.shape[1]), -np.inf)
    np.maximum.at(peak, segments, v)
    e = np.exp(v - peak[segments])
    denom = np.zeros((n_segments, v.shape[1]))
    np.add.at(denom, segments, e)
    out = e / denom[segments]

    def rule(g):
        dot = np.zeros((n_segments, v.shape[1]))
        np.add.at(dot, segments, g * out)
        return (out * (g - dot[segments]),)

    return _record(out, (logits,), rule)


# ---------------------------------------------------------------------------
# convolution


def _patches(x: np.ndarray, k: int, stride: int, pad: int):
    """[B, C, H, W] -> ([B*Ho*Wo, C*k*k] patch matrix, Ho, Wo)."""
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k)
    return cols, ho, wo


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Batched 2-D cross-correlation: [B, C, H, W] * [O, C, k, k] + [O] -> [B, O, Ho, Wo]."""
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if x.values.ndim != 4 or kernel.values.ndim != 4 or kernel.shape[1] != x.shape[1]:
        raise DimensionError(f"conv2d shape mismatch: input {x.shape}, kernel {kernel.shape}")
    if kernel.shape[2] != kernel.shape[3] or bias.shape != (kernel.shape[0],):
        raise DimensionError(f"conv2d expects square kernels and [O] bias, got {kernel.shape}, {bias.shape}")
    b, c, h, w = x.shape
    o, _, k, _ = kernel.shape
    cols, ho, wo = _patches(x.values, k, stride, pad)
    kmat = kernel.values.reshape(o, c * k * k)
    out = (cols @ kmat.T + bias.values).reshape(b, ho, wo, o).transpose(0, 3, 1, 2)

    def rule(g):
        gm = g.transpose(0, 2, 3, 1).reshape(b * ho * wo, o)
        gk = (gm.T @ cols).reshape(kernel.shape)
        gb = gm.sum(axis=0)
        gcols = (gm @ kmat).reshape(b, ho, wo, c, k, k)
        gx = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
        for di in range(k):
            for dj in range(k):
                gx[:, :, di : di + stride * ho : stride, dj : dj + stride * wo : stride] += gcols[
                    :, :, :, :, di, dj
                ].transpose(0, 3, 1, 2)
        return gx[:, :, pad : pad + h, pad : pad + w], gk, gb

    return _record(out, (x, kernel, bias), rule)
