"""Reverse-mode automatic differentiation on numpy arrays.

A `Tape` records every primitive operation executed while it is active.
Walking the records backwards yields gradients. The backward functions are
themselves written with taped primitives, so running a backward pass while
an *outer* tape is still active records the derivative computation too:
differentiating the result again gives exact second-order gradients. That
nesting is the whole reason this module exists; the lookahead agents
differentiate through a co-player's gradient step.

Everything is float64. Tensors are immutable value holders; graph edges
live in tape records, not on the tensors, so the same forward pass can be
observed by any number of enclosing tapes.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

_TAPE_STACK: list["Tape"] = []


class Tensor:
    """A numpy array participating in taped computation."""

    __slots__ = ("value",)

    def __init__(self, value) -> None:
        self.value = np.asarray(value, dtype=np.float64)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Tensor({self.value!r})"

    # Arithmetic operators delegate to the primitive ops below.
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)


class Node:
    """One recorded primitive: output, parents, and the local backward."""

    __slots__ = ("out", "parents", "vjp")

    def __init__(self, out: Tensor, parents: tuple[Tensor, ...], vjp: Callable) -> None:
        self.out = out
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Recording context; also the handle for running backward passes."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"

    def gradient(self, output: Tensor, sources: Sequence[Tensor]) -> list[Tensor]:
        """Gradients of a scalar output with respect to `sources`.

        The returned tensors are ordinary taped values: if another tape is
        active when this runs, the backward computation is recorded on it
        and the results can be differentiated again.
        """
        if output.value.size != 1:
            raise ValueError(f"backward requires a scalar output, got shape {output.shape}")
        grads: dict[int, Tensor] = {id(output): Tensor(np.ones_like(output.value))}
        # Records are appended in execution order, so reversed order is a
        # valid topological order of the subgraph this tape observed.
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None:
                    continue
                existing = grads.get(id(parent))
                grads[id(parent)] = pg if existing is None else add(existing, pg)
        return [grads.get(id(s), Tensor(np.zeros_like(s.value))) for s in sources]


def backward(tape: Tape, output: Tensor, sources: Sequence[Tensor]) -> list[Tensor]:
    """Module-level alias for :meth:`Tape.gradient`."""
    return tape.gradient(output, sources)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, parents: tuple[Tensor, ...], vjp: Callable) -> None:
    node = Node(out, parents, vjp)
    for tape in _TAPE_STACK:
        tape.nodes.append(node)


def _recording() -> bool:
    return bool(_TAPE_STACK)


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce a gradient back to the shape numpy broadcast it from."""
    if g.shape == shape:
        return g
    # Sum away prepended axes, then axes the parent held at size 1.
    extra = g.value.ndim - len(shape)
    for _ in range(extra):
        g = tsum(g, axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = tsum(g, axis=axis, keepdims=True)
    if g.shape != shape:
        g = reshape(g, shape)
    return g


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value + b.value)
    if _recording():
        _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value - b.value)
    if _recording():
        _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value * b.value)
    if _recording():
        _record(
            out,
            (a, b),
            lambda g: (_unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape)),
        )
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value / b.value)
    if _recording():
        _record(
            out,
            (a, b),
            lambda g: (
                _unbroadcast(div(g, b), a.shape),
                _unbroadcast(neg(div(mul(g, out), b)), b.shape),
            ),
        )
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.value)
    if _recording():
        _record(out, (a,), lambda g: (neg(g),))
    return out


def power(a, exponent: float) -> Tensor:
    """Elementwise a**c for a constant exponent."""
    a = as_tensor(a)
    c = float(exponent)
    out = Tensor(a.value**c)
    if _recording():
        _record(out, (a,), lambda g: (mul(g, mul(c, power(a, c - 1.0))),))
    return out


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.value))
    if _recording():
        _record(out, (a,), lambda g: (mul(g, out),))
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.value))
    if _recording():
        _record(out, (a,), lambda g: (div(g, a),))
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.tanh(a.value))
    if _recording():
        _record(out, (a,), lambda g: (mul(g, sub(1.0, mul(out, out))),))
    return out


def sigmoid(a) -> Tensor:
    """Logistic function, computed via tanh for stability at large |x|."""
    a = as_tensor(a)
    out = Tensor(0.5 * (1.0 + np.tanh(0.5 * a.value)))
    if _recording():
        _record(out, (a,), lambda g: (mul(g, mul(out, sub(1.0, out))),))
    return out


# ---------------------------------------------------------------------------
# Reductions and shape ops
# ---------------------------------------------------------------------------


def tsum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.sum(a.value, axis=axis, keepdims=keepdims))
    if _recording():
        shape = a.shape

        def vjp(g):
            gv = g
            if axis is not None and not keepdims:
                kd = list(out.shape)
                kd.insert(axis if axis >= 0 else len(shape) + axis, 1)
                gv = reshape(gv, tuple(kd))
            return (mul(gv, Tensor(np.ones(shape))),)

        _record(out, (a,), vjp)
    return out


def tmean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.value.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.value.reshape(shape))
    if _recording():
        orig = a.shape
        _record(out, (a,), lambda g: (reshape(g, orig),))
    return out


def detach(a) -> Tensor:
    """Value with the gradient path severed (stop-gradient)."""
    a = as_tensor(a)
    return Tensor(a.value)


stop_gradient = detach


# ---------------------------------------------------------------------------
# Piecewise-linear ops (masks captured as constants at the forward point)
# ---------------------------------------------------------------------------


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(np.maximum(a.value, b.value))
    if _recording():
        mask = Tensor((a.value >= b.value).astype(np.float64))

        def vjp(g):
            return (
                _unbroadcast(mul(g, mask), a.shape),
                _unbroadcast(mul(g, sub(1.0, mask)), b.shape),
            )

        _record(out, (a, b), vjp)
    return out


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(np.minimum(a.value, b.value))
    if _recording():
        mask = Tensor((a.value <= b.value).astype(np.float64))

        def vjp(g):
            return (
                _unbroadcast(mul(g, mask), a.shape),
                _unbroadcast(mul(g, sub(1.0, mask)), b.shape),
            )

        _record(out, (a, b), vjp)
    return out


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.clip(a.value, lo, hi))
    if _recording():
        mask = Tensor(((a.value >= lo) & (a.value <= hi)).astype(np.float64))
        _record(out, (a,), lambda g: (mul(g, mask),))
    return out


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value @ b.value)
    if _recording():
        _record(
            out,
            (a, b),
            lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)),
        )
    return out


def transpose(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.value.T)
    if _recording():
        _record(out, (a,), lambda g: (transpose(g),))
    return out


def bmm(x, w) -> Tensor:
    """Per-batch-element linear map: (B, I) x (Bp, I, O) -> (B, O).

    `Bp` is either B (independent weights per batch element) or 1 (one set
    of weights shared across the batch; its gradient sums over the batch).
    """
    x, w = as_tensor(x), as_tensor(w)
    shared = w.shape[0] == 1
    if shared:
        out = Tensor(x.value @ w.value[0])
    else:
        out = Tensor(np.einsum("bi,bio->bo", x.value, w.value))
    if _recording():
        _record(
            out,
            (x, w),
            lambda g: (bmm(g, btranspose(w)), bouter(x, g, collapse=shared)),
        )
    return out


def btranspose(w) -> Tensor:
    """Swap the two trailing axes of a (Bp, I, O) stack."""
    w = as_tensor(w)
    out = Tensor(np.swapaxes(w.value, 1, 2))
    if _recording():
        _record(out, (w,), lambda g: (btranspose(g),))
    return out


def bouter(x, g, collapse: bool = False) -> Tensor:
    """Per-element outer product (B, I) x (B, O) -> (Bp, I, O).

    With `collapse` the batch is summed away (Bp=1), matching the gradient
    of shared weights in :func:`bmm`.
    """
    x, g = as_tensor(x), as_tensor(g)
    if collapse:
        out = Tensor((x.value.T @ g.value)[None])
    else:
        out = Tensor(np.einsum("bi,bo->bio", x.value, g.value))
    if _recording():
        _record(
            out,
            (x, g),
            lambda grad: (bmm(g, btranspose(grad)), bmm(x, grad)),
        )
    return out


def take_rows(w, codes: np.ndarray) -> Tensor:
    """Row lookup (Bp, I, H) by per-batch-element index -> (B, H).

    Equivalent to a one-hot vector times the weight stack; the observation
    encoders produce integer codes, so the multiply is skipped.
    """
    w = as_tensor(w)
    codes = np.asarray(codes)
    shared = w.shape[0] == 1
    if shared:
        out = Tensor(w.value[0][codes])
    else:
        out = Tensor(w.value[np.arange(codes.shape[0]), codes])
    if _recording():
        shape = w.shape
        _record(out, (w,), lambda g: (row_scatter(g, codes, shape),))
    return out


def row_scatter(g, codes: np.ndarray, shape: tuple[int, ...]) -> Tensor:
    """Adjoint of :func:`take_rows`: place (B, H) rows into zeros of `shape`."""
    g = as_tensor(g)
    codes = np.asarray(codes)
    out_value = np.zeros(shape)
    if shape[0] == 1:
        np.add.at(out_value[0], codes, g.value)
    else:
        out_value[np.arange(codes.shape[0]), codes] = g.value
    out = Tensor(out_value)
    if _recording():
        _record(out, (g,), lambda grad: (take_rows(grad, codes),))
    return out
