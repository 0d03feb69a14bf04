"""Dense tensors and reverse-mode differentiation over a per-pass tape.

A :class:`Tape` records every primitive applied to tensors that require a
gradient. ``tape.backward(loss)`` sweeps the recorded ops in reverse and
returns a :class:`GradientMap` keyed by node id. Tapes are single use: once
``backward`` has run the tape is closed and its ops are dropped.

    >>> tape = Tape()
    >>> x = tape.tensor([1], [2.0])
    >>> y = tape.tensor([1], [3.0])
    >>> grads = tape.backward(mul(x, y))
    >>> float(grads[x][0]), float(grads[y][0])
    (3.0, 2.0)
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "ShapeError",
    "TapeError",
    "Tensor",
    "Tape",
    "GradientMap",
    "build_tensor",
    "as_tensor",
    "elementwise",
    "add",
    "mul",
    "scale",
    "add_scalar",
    "relu",
    "sigmoid",
    "matmul",
    "reduce",
    "concat",
    "record_op",
]

MAX_RANK = 3


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class TapeError(RuntimeError):
    """Raised on misuse of a tape (closed tape, mixed tapes, non-scalar loss)."""


class Tensor:
    """Immutable real array of rank 1 to 3 with optional tape linkage."""

    __slots__ = ("values", "requires_grad", "node_id", "tape")

    def __init__(self, values, requires_grad: bool = False, tape: "Tape | None" = None):
        arr = np.array(values, copy=True) if not isinstance(values, np.ndarray) else values.view()
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum of {MAX_RANK}")
        arr.flags.writeable = False
        self.values = arr
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.tape = tape
        if tape is not None:
            self.node_id = tape._register(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def check_finite(self) -> None:
        """Debug assertion: raise if any value is NaN or infinite."""
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError(f"non-finite values in tensor of shape {self.shape}")

    def __repr__(self) -> str:
        tag = f", node={self.node_id}" if self.node_id is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class GradientMap(dict):
    """Mapping node id -> gradient array. Tensors may be used as keys."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            key = key.node_id
        return super().__getitem__(key)

    def __contains__(self, key):
        if isinstance(key, Tensor):
            key = key.node_id
        return super().__contains__(key)


class _Op:
    __slots__ = ("name", "inputs", "output", "backward")

    def __init__(self, name, inputs, output, backward):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of primitive ops for one forward pass."""

    def __init__(self):
        self.ops: list[_Op] = []
        self.leaves: list[Tensor] = []
        self._next_id = 0
        self.closed = False

    def _register(self, t: Tensor) -> int:
        if self.closed:
            raise TapeError("tape already consumed by backward()")
        nid = self._next_id
        self._next_id += 1
        return nid

    def tensor(self, shape: Sequence[int], values, dtype=np.float64) -> Tensor:
        """Build a gradient-tracking leaf on this tape."""
        return build_tensor(shape, values, requires_grad=True, tape=self, dtype=dtype)

    def leaf(self, values) -> Tensor:
        """Wrap an existing array as a leaf (shape taken from the array)."""
        t = Tensor(np.asarray(values), requires_grad=True, tape=self)
        self.leaves.append(t)
        return t

    def backward(self, loss: Tensor) -> GradientMap:
        if loss.tape is not self:
            raise TapeError("loss was not recorded on this tape")
        if loss.values.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self.closed:
            raise TapeError("tape already consumed by backward()")
        grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.values)}
        for op in reversed(self.ops):
            g_out = grads.pop(op.output.node_id, None)
            if g_out is None:
                continue
            in_grads = op.backward(g_out)
            for t, g in zip(op.inputs, in_grads):
                if g is None or t.node_id is None or t.tape is not self:
                    continue
                if g.shape != t.shape:
                    raise ShapeError(f"{op.name}: gradient shape {g.shape} != input shape {t.shape}")
                prev = grads.get(t.node_id)
                grads[t.node_id] = g if prev is None else prev + g
        out = GradientMap()
        for leaf in self.leaves:
            g = grads.get(leaf.node_id)
            out[leaf.node_id] = np.zeros_like(leaf.values) if g is None else g
        self.ops.clear()
        self.closed = True
        return out


def build_tensor(shape: Sequence[int], values, requires_grad: bool = False,
                 tape: Tape | None = None, dtype=np.float64) -> Tensor:
    """Create a tensor from a flat row-major value list.

    With ``requires_grad`` the tensor is registered as a leaf of ``tape``
    (a fresh tape is created when none is given; reach it via ``t.tape``).
    """
    shape = tuple(int(d) for d in shape)
    if not shape or any(d < 1 for d in shape):
        raise ShapeError(f"every dimension must be >= 1, got {shape}")
    flat = np.asarray(values, dtype=dtype).reshape(-1)
    if flat.size != math.prod(shape):
        raise ShapeError(f"length mismatch: shape {shape} needs {math.prod(shape)} values, got {flat.size}")
    arr = flat.reshape(shape).copy()
    if not requires_grad:
        return Tensor(arr)
    tape = tape if tape is not None else Tape()
    return tape.leaf(arr)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _tape_of(inputs: Iterable[Tensor]) -> Tape | None:
    tape = None
    for t in inputs:
        if t.tape is None:
            continue
        if t.tape.closed:
            raise TapeError("input belongs to a tape already consumed by backward()")
        if tape is None:
            tape = t.tape
        elif t.tape is not tape:
            raise TapeError("inputs belong to different tapes")
    return tape


def record_op(name: str, inputs: Sequence[Tensor], values: np.ndarray,
              backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Wrap ``values`` as the output of a primitive, recording it if any input is tracked.

    ``backward`` maps the output gradient to one gradient (or None) per input.
    """
    tape = _tape_of(inputs)
    if tape is None:
        return Tensor(values)
    out = Tensor(values, requires_grad=True, tape=tape)
    tape.ops.append(_Op(name, tuple(inputs), out, backward))
    return out


def _same_shape(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return record_op("add", (a, b), a.values + b.values, lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    av, bv = a.values, b.values
    return record_op("mul", (a, b), av * bv, lambda g: (g * bv, g * av))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return record_op("scale", (a,), a.values * c, lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return record_op("add_scalar", (a,), a.values + c, lambda g: (g,))


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0
    return record_op("relu", (a,), np.where(mask, a.values, 0).astype(a.dtype), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    y = expit(a.values)
    return record_op("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))


_ELEMENTWISE = {"add": add, "mul": mul, "scale_by_const": scale, "relu": relu, "sigmoid": sigmoid}


def elementwise(kind: str, *args) -> Tensor:
    """Dispatch by name: add, mul, scale_by_const, relu, sigmoid."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(*args)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    av, bv = a.values, b.values
    return record_op("matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g))


def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"invalid axis {ax} for rank {ndim}")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise ShapeError(f"repeated axis in {axes}")
    return tuple(sorted(out))


def reduce(kind: str, x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    """Sum or mean over ``axes`` (all axes when None).

    Reduced axes are dropped unless ``keepdims``; reducing every axis of a
    tensor without keepdims yields shape ``(1,)`` since rank 0 is not stored.
    """
    if kind not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {kind!r}")
    axes = _norm_axes(axes, x.values.ndim)
    count = math.prod(x.shape[a] for a in axes)
    out = x.values.sum(axis=axes, keepdims=True)
    if kind == "mean":
        out = out / count
    kept_shape = out.shape
    if not keepdims:
        out = out.reshape([d for i, d in enumerate(x.shape) if i not in axes] or [1])
    factor = 1.0 if kind == "sum" else 1.0 / count
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(g.reshape(kept_shape) * factor, shape).copy(),)

    return record_op(f"reduce_{kind}", (x,), out, backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    ndim = tensors[0].values.ndim
    axis = _norm_axes(axis, ndim)[0]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.values.ndim != ndim or any(d != r for i, (d, r) in enumerate(zip(t.shape, ref)) if i != axis):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} along axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return record_op("concat", tuple(tensors), np.concatenate([t.values for t in tensors], axis=axis), backward)
