"""Dense float64 arrays with a reverse-mode gradient tape.

`NdBuffer` is an immutable dense array: float64, C-order, finite at
construction. Operators live at module level (`add`, `matmul`, ...); each one
returns a fresh buffer and, when a `Tape` is active, appends one record. A
record holds the operation id, the input buffers, the output buffer, and a
backward closure mapping the output gradient to per-input contributions.
`Tape.grad` replays records in reverse, accumulating fan-out contributions
additively, and is O(number of records).

All computation bottoms out in numpy, so repeated runs on the same inputs are
bitwise identical. `debug_checks()` turns on finiteness verification after
every operator (off by default; construction is always checked).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericError

_TAPES: list["Tape"] = []
_OP_COUNTER = 0
_DEBUG_CHECKS = False


@contextlib.contextmanager
def debug_checks():
    """Enable per-operation finiteness checks inside the block."""
    global _DEBUG_CHECKS
    prev = _DEBUG_CHECKS
    _DEBUG_CHECKS = True
    try:
        yield
    finally:
        _DEBUG_CHECKS = prev


def _next_op_id(name: str) -> str:
    global _OP_COUNTER
    _OP_COUNTER += 1
    return f"{name}:{_OP_COUNTER}"


class NdBuffer:
    """Immutable dense float64 array.

    The wrapped ndarray is C-ordered and marked read-only; `array` exposes it
    without copying. Zero-sized extents are rejected, non-finite values are
    rejected at construction.
    """

    __slots__ = ("_array",)

    def __init__(self, values):
        try:
            arr = np.array(values, dtype=np.float64, order="C")
        except (TypeError, ValueError) as exc:
            raise DimensionError(f"cannot build a float64 buffer from {values!r}: {exc}") from None
        if any(n <= 0 for n in arr.shape):
            raise DimensionError(f"extents must be positive, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite value in buffer construction")
        arr.setflags(write=False)
        self._array = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray, op_id: str = "wrap") -> "NdBuffer":
        # Trusted path for operator outputs: no copy, finite check only in debug mode.
        if _DEBUG_CHECKS and not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite value produced by {op_id}")
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        out = object.__new__(cls)
        out._array = arr
        return out

    @property
    def array(self) -> np.ndarray:
        return self._array

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def ndim(self) -> int:
        return self._array.ndim

    @property
    def size(self) -> int:
        return self._array.size

    def item(self) -> float:
        if self._array.size != 1:
            raise DimensionError(f"item() needs a single-element buffer, got shape {self.shape}")
        return float(self._array.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"NdBuffer(shape={self.shape})"


class Tape:
    """Context manager recording operator applications for reverse replay."""

    def __init__(self):
        self._records: list[tuple[str, NdBuffer, tuple[NdBuffer, ...], Callable]] = []
        self._open = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        self._open = True
        return self

    def __exit__(self, exc_type, exc, tb):
        self._open = False
        popped = _TAPES.pop()
        assert popped is self
        return False

    def __len__(self) -> int:
        return len(self._records)

    def _record(self, op_id, out, inputs, backward) -> None:
        self._records.append((op_id, out, inputs, backward))

    def grad(self, output: NdBuffer, wrt: Sequence[NdBuffer]) -> list[np.ndarray]:
        """Gradients of a scalar output with respect to each buffer in wrt.

        Buffers that do not influence the output get zero gradients. Fan-out
        (one buffer feeding several operators) accumulates additively.
        """
        if output.shape != ():
            raise DimensionError(f"grad needs a scalar output, got shape {output.shape}")
        grads: dict[int, np.ndarray] = {id(output): np.ones(())}
        for op_id, out, inputs, backward in reversed(self._records):
            g = grads.get(id(out))
            if g is None:
                continue
            for buf, contrib in backward(g):
                if contrib.shape != buf.shape:
                    raise DimensionError(
                        f"backward of {op_id} produced gradient shape {contrib.shape} "
                        f"for input shape {buf.shape}"
                    )
                prev = grads.get(id(buf))
                grads[id(buf)] = contrib if prev is None else prev + contrib
        out_list = []
        for buf in wrt:
            g = grads.get(id(buf))
            out_list.append(np.zeros(buf.shape) if g is None else np.ascontiguousarray(g))
        return out_list


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _emit(name, out_arr, inputs, backward) -> NdBuffer:
    op_id = _next_op_id(name)
    out = NdBuffer._wrap(out_arr, op_id)
    tape = _active_tape()
    if tape is not None:
        tape._record(op_id, out, inputs, backward)
    return out


def _as_operand(x) -> tuple[np.ndarray, NdBuffer | None]:
    # NdBuffer participates in gradients; bare numbers are constants.
    if isinstance(x, NdBuffer):
        return x.array, x
    if isinstance(x, (int, float)):
        return np.float64(x), None
    raise DimensionError(f"operand must be NdBuffer or number, got {type(x).__name__}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _elementwise_pair(name, a, b, fwd, back_a, back_b) -> NdBuffer:
    arr_a, buf_a = _as_operand(a)
    arr_b, buf_b = _as_operand(b)
    try:
        out = fwd(arr_a, arr_b)
    except ValueError:
        raise DimensionError(f"{name}: shapes {np.shape(arr_a)} and {np.shape(arr_b)} do not broadcast") from None
    inputs = tuple(x for x in (buf_a, buf_b) if x is not None)

    def backward(g):
        contribs = []
        if buf_a is not None:
            contribs.append((buf_a, _unbroadcast(back_a(g, arr_a, arr_b, out), buf_a.shape)))
        if buf_b is not None:
            contribs.append((buf_b, _unbroadcast(back_b(g, arr_a, arr_b, out), buf_b.shape)))
        return contribs

    return _emit(name, out, inputs, backward)


def add(a, b) -> NdBuffer:
    return _elementwise_pair("add", a, b, lambda x, y: x + y,
                             lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b) -> NdBuffer:
    return _elementwise_pair("sub", a, b, lambda x, y: x - y,
                             lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b) -> NdBuffer:
    return _elementwise_pair("mul", a, b, lambda x, y: x * y,
                             lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b) -> NdBuffer:
    return _elementwise_pair("div", a, b, lambda x, y: x / y,
                             lambda g, x, y, o: g / y, lambda g, x, y, o: -g * o / y)


def neg(a) -> NdBuffer:
    return mul(a, -1.0)


def matmul(a: NdBuffer, b: NdBuffer) -> NdBuffer:
    arr_a, buf_a = _as_operand(a)
    arr_b, buf_b = _as_operand(b)
    if arr_a.ndim < 2 or arr_b.ndim < 2:
        raise DimensionError(f"matmul needs ndim >= 2, got shapes {np.shape(arr_a)} and {np.shape(arr_b)}")
    if arr_a.shape[-1] != arr_b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {arr_a.shape} @ {arr_b.shape}")
    try:
        out = arr_a @ arr_b
    except ValueError:
        raise DimensionError(f"matmul batch dimensions do not broadcast: {arr_a.shape} @ {arr_b.shape}") from None

    def backward(g):
        contribs = []
        if buf_a is not None:
            contribs.append((buf_a, _unbroadcast(g @ np.swapaxes(arr_b, -1, -2), buf_a.shape)))
        if buf_b is not None:
            contribs.append((buf_b, _unbroadcast(np.swapaxes(arr_a, -1, -2) @ g, buf_b.shape)))
        return contribs

    return _emit("matmul", out, tuple(x for x in (buf_a, buf_b) if x is not None), backward)


def transpose(a: NdBuffer, axes: Sequence[int]) -> NdBuffer:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose axes {axes} are not a permutation for shape {a.shape}")
    inverse = tuple(int(i) for i in np.argsort(axes))
    out = np.transpose(a.array, axes)

    def backward(g):
        return [(a, np.transpose(g, inverse))]

    return _emit("transpose", out, (a,), backward)


def swap_last2(a: NdBuffer) -> NdBuffer:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def reshape(a: NdBuffer, shape: Sequence[int]) -> NdBuffer:
    shape = tuple(int(n) for n in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}")
    out = a.array.reshape(shape)

    def backward(g):
        return [(a, g.reshape(a.shape))]

    return _emit("reshape", out, (a,), backward)


def concat(parts: Sequence[NdBuffer], axis: int) -> NdBuffer:
    if not parts:
        raise DimensionError("concat needs at least one part")
    try:
        out = np.concatenate([p.array for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat along axis {axis}: {[p.shape for p in parts]}: {exc}") from None
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)
    ax = axis % out.ndim

    def backward(g):
        contribs = []
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(int(lo), int(hi))
            contribs.append((p, g[tuple(sl)]))
        return contribs

    return _emit("concat", out, tuple(parts), backward)


def stack(parts: Sequence[NdBuffer], axis: int) -> NdBuffer:
    if not parts:
        raise DimensionError("stack needs at least one part")
    try:
        out = np.stack([p.array for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack along axis {axis}: {[p.shape for p in parts]}: {exc}") from None
    ax = axis % out.ndim

    def backward(g):
        return [(p, np.take(g, i, axis=ax)) for i, p in enumerate(parts)]

    return _emit("stack", out, tuple(parts), backward)


def take_axis(a: NdBuffer, index: int, axis: int) -> NdBuffer:
    ax = axis % a.ndim
    if not 0 <= index < a.shape[ax]:
        raise DimensionError(f"index {index} out of range for axis {ax} of shape {a.shape}")
    out = np.take(a.array, index, axis=ax)

    def backward(g):
        z = np.zeros(a.shape)
        sl = [slice(None)] * a.ndim
        sl[ax] = index
        z[tuple(sl)] = g
        return [(a, z)]

    return _emit("take_axis", out, (a,), backward)


def slice_axis(a: NdBuffer, axis: int, start: int, stop: int) -> NdBuffer:
    ax = axis % a.ndim
    if not 0 <= start < stop <= a.shape[ax]:
        raise DimensionError(f"slice [{start}:{stop}] invalid for axis {ax} of shape {a.shape}")
    sl = [slice(None)] * a.ndim
    sl[ax] = slice(start, stop)
    out = a.array[tuple(sl)]

    def backward(g):
        z = np.zeros(a.shape)
        z[tuple(sl)] = g
        return [(a, z)]

    return _emit("slice_axis", out, (a,), backward)


def _norm_axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def reduce_sum(a: NdBuffer, axis=None, keepdims: bool = False) -> NdBuffer:
    axes = _norm_axes(axis, a.ndim)
    out = a.array.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return [(a, np.broadcast_to(g, a.shape))]

    return _emit("reduce_sum", out, (a,), backward)


def mean(a: NdBuffer, axis=None, keepdims: bool = False) -> NdBuffer:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes], dtype=np.int64)) if axes else 1
    out = a.array.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return [(a, np.broadcast_to(g / count, a.shape))]

    return _emit("mean", out, (a,), backward)


def square(a: NdBuffer) -> NdBuffer:
    arr = a.array
    return _emit("square", arr * arr, (a,), lambda g: [(a, g * 2.0 * arr)])


def sqrt(a: NdBuffer) -> NdBuffer:
    """Elementwise square root. The backward pass takes the zero subgradient
    at exactly-zero entries (the symmetric-kink choice, which also matches
    central differences there); negative inputs are rejected."""
    op_id = "sqrt"
    if np.any(a.array < 0.0):
        raise NumericError(f"{op_id} of negative value (min {a.array.min()})")
    out = np.sqrt(a.array)

    def backward(g):
        zero = out == 0.0
        denom = np.where(zero, 1.0, out)
        return [(a, np.where(zero, 0.0, g * 0.5 / denom))]

    return _emit(op_id, out, (a,), backward)


def exp(a: NdBuffer) -> NdBuffer:
    out = np.exp(a.array)
    return _emit("exp", out, (a,), lambda g: [(a, g * out)])


def tanh(a: NdBuffer) -> NdBuffer:
    out = np.tanh(a.array)
    return _emit("tanh", out, (a,), lambda g: [(a, g * (1.0 - out * out))])


def softmax_lastdim(a: NdBuffer) -> NdBuffer:
    """Max-shifted softmax over the last axis; rows sum to one exactly in
    float64 up to rounding, stable for large inputs."""
    x = a.array
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return [(a, out * (g - dot))]

    return _emit("softmax_lastdim", out, (a,), backward)


def grad_check(f: Callable[[dict[str, NdBuffer]], NdBuffer],
               params: dict[str, np.ndarray],
               step: float = 1e-5) -> "GradCheckReport":
    """Compare tape gradients of a scalar function against central differences.

    `f` maps a name->NdBuffer dict to a scalar NdBuffer. Every coordinate of
    every parameter is perturbed by +/- step; the relative error is
    |analytic - cd| / max(1, |cd|). The analytic pass runs with per-operation
    finiteness checks enabled.
    """
    names = list(params)
    leaves = {k: NdBuffer(params[k]) for k in names}
    with debug_checks():
        with Tape() as tape:
            out = f(leaves)
        if out.shape != ():
            raise DimensionError(f"grad_check needs a scalar function, got output shape {out.shape}")
        analytic = dict(zip(names, tape.grad(out, [leaves[k] for k in names])))

    def eval_at(perturbed: dict[str, np.ndarray]) -> float:
        # Wrap copies: _wrap freezes its argument and the perturbation loop
        # keeps writing into the base arrays.
        return f({k: NdBuffer._wrap(v.copy()) for k, v in perturbed.items()}).item()

    per_param: dict[str, float] = {}
    worst = (0.0, "", -1, 0.0, 0.0)
    base = {k: np.array(params[k], dtype=np.float64) for k in names}
    for name in names:
        flat = base[name].reshape(-1)
        grads = analytic[name].reshape(-1)
        worst_here = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = eval_at(base)
            flat[i] = orig - step
            lo = eval_at(base)
            flat[i] = orig
            cd = (hi - lo) / (2.0 * step)
            rel = abs(grads[i] - cd) / max(1.0, abs(cd))
            if rel > worst_here:
                worst_here = rel
            if rel > worst[0]:
                worst = (rel, name, i, float(grads[i]), cd)
        per_param[name] = worst_here
    return GradCheckReport(max_rel_err=worst[0], worst_param=worst[1], worst_index=worst[2],
                           analytic_at_worst=worst[3], numeric_at_worst=worst[4],
                           per_param=per_param)


class GradCheckReport:
    """Result of grad_check: the worst coordinate and per-parameter maxima."""

    def __init__(self, max_rel_err, worst_param, worst_index, analytic_at_worst,
                 numeric_at_worst, per_param):
        self.max_rel_err = max_rel_err
        self.worst_param = worst_param
        self.worst_index = worst_index
        self.analytic_at_worst = analytic_at_worst
        self.numeric_at_worst = numeric_at_worst
        self.per_param = per_param

    def __repr__(self) -> str:
        return (f"GradCheckReport(max_rel_err={self.max_rel_err:.3e}, "
                f"worst={self.worst_param}[{self.worst_index}])")
