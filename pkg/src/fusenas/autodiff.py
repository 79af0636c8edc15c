"""Reverse-mode automatic differentiation over numpy arrays.

A GradientTape records one closure per primitive as the forward pass runs;
``backward`` replays them in reverse order and accumulates into ``Tensor.grad``.
Tensors are cheap per-step wrappers, not long-lived parameters: training code
wraps its parameter arrays in fresh Tensors every step and reads the gradients
back out afterwards.

Primitives accept either Tensors or plain arrays; plain arrays (and Tensors
with no tape) are constants and receive no gradient.
"""

from __future__ import annotations

from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

ArrayLike = Union["Tensor", np.ndarray, float, int]


class Tensor:
    __slots__ = ("data", "grad", "tape")

    def __init__(self, data, tape: Optional["GradientTape"] = None):
        self.data = np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self.tape = tape

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class GradientTape:
    """Execution-ordered record of primitives for one forward pass."""

    def __init__(self):
        self._records: List = []
        self._consumed = False

    def tensor(self, data) -> Tensor:
        return Tensor(data, self)

    def record(self, fn) -> None:
        self._records.append(fn)

    def backward(self, loss: Tensor) -> None:
        if self._consumed:
            raise RuntimeError("tape already ran backward")
        if not self._records:
            raise RuntimeError("backward called before any recorded operation")
        if loss.data.size != 1:
            raise ValueError("loss must be a scalar")
        self._consumed = True
        loss._accumulate(np.ones_like(loss.data))
        for fn in reversed(self._records):
            fn()


def _val(x: ArrayLike):
    if isinstance(x, Tensor):
        return x.data
    if isinstance(x, (int, float)):
        return x  # weak scalar: keeps float32 operands float32
    return np.asarray(x)


def _tape_of(*xs: ArrayLike) -> Optional[GradientTape]:
    for x in xs:
        if isinstance(x, Tensor) and x.tape is not None:
            return x.tape
    return None


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _grad_into(x: ArrayLike, g: np.ndarray) -> None:
    if isinstance(x, Tensor) and x.tape is not None:
        x._accumulate(_unbroadcast(g, x.data.shape))


# ---------------------------------------------------------------------------
# elementwise

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    tape = _tape_of(a, b)
    out = Tensor(_val(a) + _val(b), tape)
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            _grad_into(a, out.grad)
            _grad_into(b, out.grad)
        tape.record(bw)
    return out


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    out = Tensor(av * bv, tape)
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            _grad_into(a, out.grad * bv)
            _grad_into(b, out.grad * av)
        tape.record(bw)
    return out


def neg(a: ArrayLike) -> Tensor:
    tape = _tape_of(a)
    out = Tensor(-_val(a), tape)
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            _grad_into(a, -out.grad)
        tape.record(bw)
    return out


def power(a: ArrayLike, p: float) -> Tensor:
    tape = _tape_of(a)
    av = _val(a)
    out = Tensor(av ** p, tape)
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            _grad_into(a, out.grad * p * av ** (p - 1.0))
        tape.record(bw)
    return out


def exp(a: ArrayLike) -> Tensor:
    tape = _tape_of(a)
    ev = np.exp(_val(a))
    out = Tensor(ev, tape)
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            _grad_into(a, out.grad * ev)
        tape.record(bw)
    return out


def log(a: ArrayLike) -> Tensor:
    tape = _tape_of(a)
    av = _val(a)
    out = Tensor(np.log(av), tape)
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            _grad_into(a, out.grad / av)
        tape.record(bw)
    return out


def sigmoid(a: ArrayLike) -> Tensor:
    tape = _tape_of(a)
    av = _val(a)
    s = np.empty_like(av)
    pos = av >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    ez = np.exp(av[~pos])
    s[~pos] = ez / (1.0 + ez)
    out = Tensor(s, tape)
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            _grad_into(a, out.grad * s * (1.0 - s))
        tape.record(bw)
    return out


def relu(a: ArrayLike) -> Tensor:
    tape = _tape_of(a)
    av = _val(a)
    out = Tensor(np.maximum(av, 0), tape)
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            _grad_into(a, out.grad * (av > 0))
        tape.record(bw)
    return out


def leaky_relu(a: ArrayLike, slope: float = 0.01) -> Tensor:
    tape = _tape_of(a)
    av = _val(a)
    out = Tensor(np.where(av > 0, av, slope * av), tape)
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            _grad_into(a, out.grad * np.where(av > 0, 1.0, slope).astype(av.dtype))
        tape.record(bw)
    return out


def softmax(a: ArrayLike, axis: int = -1) -> Tensor:
    tape = _tape_of(a)
    av = _val(a)
    shifted = av - av.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s, tape)
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            inner = (out.grad * s).sum(axis=axis, keepdims=True)
            _grad_into(a, s * (out.grad - inner))
        tape.record(bw)
    return out


# ---------------------------------------------------------------------------
# linear algebra and shape

def matmul2(x: ArrayLike, w: ArrayLike) -> Tensor:
    """x (..., i) times a 2-D weight (i, j)."""
    tape = _tape_of(x, w)
    xv, wv = _val(x), _val(w)
    out = Tensor(xv @ wv, tape)
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            _grad_into(x, out.grad @ wv.T)
            g2 = out.grad.reshape(-1, wv.shape[1])
            x2 = xv.reshape(-1, wv.shape[0])
            _grad_into(w, x2.T @ g2)
        tape.record(bw)
    return out


def bmm(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Batched matmul with identical leading dims: (..., n, k) @ (..., k, m)."""
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    out = Tensor(av @ bv, tape)
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            _grad_into(a, out.grad @ bv.swapaxes(-1, -2))
            _grad_into(b, av.swapaxes(-1, -2) @ out.grad)
        tape.record(bw)
    return out


def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    tape = _tape_of(a)
    av = _val(a)
    out = Tensor(av.reshape(shape), tape)
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            _grad_into(a, out.grad.reshape(av.shape))
        tape.record(bw)
    return out


def transpose(a: ArrayLike, axes: Sequence[int]) -> Tensor:
    tape = _tape_of(a)
    av = _val(a)
    out = Tensor(np.transpose(av, axes), tape)
    if tape is not None:
        inverse = np.argsort(axes)

        def bw():
            if out.grad is None:
                return
            _grad_into(a, np.transpose(out.grad, inverse))
        tape.record(bw)
    return out


def concat(parts: Iterable[ArrayLike], axis: int = -1) -> Tensor:
    parts = list(parts)
    tape = _tape_of(*parts)
    vals = [_val(p) for p in parts]
    out = Tensor(np.concatenate(vals, axis=axis), tape)
    if tape is not None:
        sizes = [v.shape[axis] for v in vals]
        splits = np.cumsum(sizes)[:-1]

        def bw():
            if out.grad is None:
                return
            for p, g in zip(parts, np.split(out.grad, splits, axis=axis)):
                _grad_into(p, g)
        tape.record(bw)
    return out


def pad_last(a: ArrayLike, target: int) -> Tensor:
    """Zero-pad the channel axis up to ``target``."""
    av = _val(a)
    width = av.shape[-1]
    if width == target:
        return a if isinstance(a, Tensor) else Tensor(av)
    if width > target:
        raise ValueError(f"cannot pad {width} down to {target}")
    tape = _tape_of(a)
    pads = [(0, 0)] * (av.ndim - 1) + [(0, target - width)]
    out = Tensor(np.pad(av, pads), tape)
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            _grad_into(a, out.grad[..., :width])
        tape.record(bw)
    return out


# ---------------------------------------------------------------------------
# reductions

def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def reduce_sum(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    tape = _tape_of(a)
    av = _val(a)
    out = Tensor(av.sum(axis=axis, keepdims=keepdims), tape)
    if tape is not None:
        axes = _axis_tuple(axis, av.ndim)

        def bw():
            if out.grad is None:
                return
            g = out.grad
            if not keepdims:
                g = np.expand_dims(g, axes)
            _grad_into(a, np.broadcast_to(g, av.shape))
        tape.record(bw)
    return out


def reduce_mean(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    av = _val(a)
    axes = _axis_tuple(axis, av.ndim)
    count = 1
    for ax in axes:
        count *= av.shape[ax]
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reduce_max(a: ArrayLike, axis: int, keepdims: bool = False) -> Tensor:
    tape = _tape_of(a)
    av = _val(a)
    mx = av.max(axis=axis, keepdims=True)
    out = Tensor(mx if keepdims else np.squeeze(mx, axis=axis), tape)
    if tape is not None:
        # ties split the gradient evenly; random float inputs make them rare
        mask = (av == mx).astype(av.dtype)
        mask /= mask.sum(axis=axis, keepdims=True)

        def bw():
            if out.grad is None:
                return
            g = out.grad if keepdims else np.expand_dims(out.grad, axis)
            _grad_into(a, g * mask)
        tape.record(bw)
    return out


# ---------------------------------------------------------------------------
# sequence windows and lookups

def unfold_time(a: ArrayLike, kernel: int, pad_value: float = 0.0) -> Tensor:
    """Causal sliding windows: (b, t, c) to (b, t, kernel, c).

    Position t sees times t-kernel+1 .. t; leading positions are padded with
    ``pad_value`` so no output depends on later inputs.
    """
    tape = _tape_of(a)
    av = _val(a)
    b, t, c = av.shape
    k = int(kernel)
    padded = np.pad(av, ((0, 0), (k - 1, 0), (0, 0)),
                    constant_values=pad_value)
    view = np.lib.stride_tricks.sliding_window_view(padded, k, axis=1)
    out = Tensor(np.ascontiguousarray(view.transpose(0, 1, 3, 2)), tape)
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            dx = np.zeros_like(av)
            for j in range(k):
                lead = k - 1 - j
                if lead >= t:
                    continue
                dx[:, : t - lead, :] += out.grad[:, lead:, j, :]
            _grad_into(a, dx)
        tape.record(bw)
    return out


def embedding_lookup(table: ArrayLike, ids: np.ndarray) -> Tensor:
    tape = _tape_of(table)
    tv = _val(table)
    ids = np.asarray(ids)
    out = Tensor(tv[ids], tape)
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            buf = np.zeros_like(tv)
            np.add.at(buf, ids, out.grad)
            _grad_into(table, buf)
        tape.record(bw)
    return out
