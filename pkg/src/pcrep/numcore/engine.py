"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Every op is dual-mode: given plain ndarrays it just computes values, given
Tensors it records the op on the owning Tape so a single reverse sweep can
push gradients back to the leaves. Training runs in float32; gradient
verification builds float64 tapes so finite-difference comparisons sit well
above the rounding floor.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

__all__ = [
    "NonFiniteError",
    "Tape",
    "Tensor",
    "add",
    "sub",
    "mul",
    "linear",
    "sigmoid",
    "tanh",
    "absolute",
    "total",
    "concat_rows",
    "take_rows",
    "reverse_gradients",
]


class NonFiniteError(ArithmeticError):
    """A loss, activation, or gradient stopped being finite."""


class Tape:
    """Records primitive ops in execution order.

    Recording order is topological by construction, so one reverse sweep over
    the node list propagates gradients to every leaf. Use one tape per
    training step and throw it away afterwards.
    """

    __slots__ = ("nodes", "dtype")

    def __init__(self, dtype=np.float32):
        self.nodes: list[Tensor] = []
        self.dtype = np.dtype(dtype)

    def parameter(self, data, name: str = "") -> "Tensor":
        return Tensor(np.asarray(data, dtype=self.dtype), self, is_param=True, name=name)


class Tensor:
    """A node on a Tape: an array value plus how to push gradients to its parents.

    grad_fn takes the incoming gradient and returns one gradient per parent.
    Leaves (parameters) have no grad_fn.
    """

    __slots__ = ("data", "tape", "parents", "grad_fn", "is_param", "name")

    # force numpy to defer to our reflected operators instead of broadcasting
    # elementwise over the Tensor object
    __array_ufunc__ = None

    def __init__(self, data, tape, parents=(), grad_fn=None, is_param=False, name=""):
        self.data = data
        self.tape = tape
        self.parents = parents
        self.grad_fn = grad_fn
        self.is_param = is_param
        self.name = name
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = self.name or ("param" if self.is_param else "node")
        return f"Tensor({tag}, shape={self.data.shape}, dtype={self.data.dtype})"

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


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Tensor):
            return x.tape
    return None


def _val(x, dtype) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape of the operand it belongs to."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(a, b, fwd, grad_a, grad_b):
    tape = _tape_of(a, b)
    if tape is None:
        return fwd(np.asarray(a), np.asarray(b))
    ad, bd = _val(a, tape.dtype), _val(b, tape.dtype)
    out = fwd(ad, bd)
    parents, slots = [], []
    if isinstance(a, Tensor):
        parents.append(a)
        slots.append(("a", ad.shape))
    if isinstance(b, Tensor):
        parents.append(b)
        slots.append(("b", bd.shape))

    def grad_fn(g):
        gs = []
        for side, shape in slots:
            raw = grad_a(g, ad, bd) if side == "a" else grad_b(g, ad, bd)
            gs.append(_unbroadcast(raw, shape))
        return tuple(gs)

    return Tensor(out, tape, tuple(parents), grad_fn)


def add(a, b):
    if not (type(a) is Tensor or type(b) is Tensor):
        return np.asarray(a) + b
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    if not (type(a) is Tensor or type(b) is Tensor):
        return np.asarray(a) - b
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    if not (type(a) is Tensor or type(b) is Tensor):
        return np.asarray(a) * b
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def linear(x, w):
    """x @ w.T for x (R, K) and w (C, K); the layout every weight matrix uses."""
    if type(x) is np.ndarray and type(w) is np.ndarray:
        return x @ w.T
    tape = _tape_of(x, w)
    if tape is None:
        return np.asarray(x) @ np.asarray(w).T
    xd, wd = _val(x, tape.dtype), _val(w, tape.dtype)
    out = xd @ wd.T
    parents, slots = [], []
    if isinstance(x, Tensor):
        parents.append(x)
        slots.append("x")
    if isinstance(w, Tensor):
        parents.append(w)
        slots.append("w")

    def grad_fn(g):
        return tuple(g @ wd if s == "x" else g.T @ xd for s in slots)

    return Tensor(out, tape, tuple(parents), grad_fn)


def sigmoid(x):
    # expit saturates cleanly for large |x|, no overflow warnings
    if isinstance(x, Tensor):
        out = expit(x.data)

        def grad_fn(g):
            return (g * out * (1.0 - out),)

        return Tensor(out, x.tape, (x,), grad_fn)
    return expit(np.asarray(x))


def tanh(x):
    if isinstance(x, Tensor):
        out = np.tanh(x.data)

        def grad_fn(g):
            return (g * (1.0 - out * out),)

        return Tensor(out, x.tape, (x,), grad_fn)
    return np.tanh(np.asarray(x))


def absolute(x):
    """Elementwise |x|. Subgradient at 0 is defined as 0 (sign(0) == 0)."""
    if isinstance(x, Tensor):
        xd = x.data

        def grad_fn(g):
            return (g * np.sign(xd),)

        return Tensor(np.abs(xd), x.tape, (x,), grad_fn)
    return np.abs(np.asarray(x))


def total(x):
    """Sum over all elements, returning a scalar."""
    if isinstance(x, Tensor):
        shape, dtype = x.data.shape, x.data.dtype

        def grad_fn(g):
            return (np.full(shape, float(g), dtype=dtype),)

        return Tensor(np.asarray(x.data.sum(), dtype=dtype), x.tape, (x,), grad_fn)
    return np.asarray(x).sum()


def concat_rows(parts):
    """Concatenate blocks along axis 0. All parts must share the trailing shape."""
    if not any(isinstance(p, Tensor) for p in parts):
        return np.concatenate(parts, axis=0)
    tape = _tape_of(*parts)
    if not all(isinstance(p, Tensor) for p in parts):
        raise TypeError("concat_rows parts must be all Tensors or all arrays")
    out = np.concatenate([p.data for p in parts], axis=0)
    sizes = [p.data.shape[0] for p in parts]

    def grad_fn(g):
        gs, off = [], 0
        for n in sizes:
            gs.append(g[off:off + n])
            off += n
        return tuple(gs)

    return Tensor(out, tape, tuple(parts), grad_fn)


def take_rows(x, idx, unique: bool = False):
    """Gather rows by index. Pass unique=True when no index repeats; the
    backward pass can then scatter with plain assignment instead of add.at."""
    idx = np.asarray(idx, dtype=np.intp)
    if isinstance(x, Tensor):
        xd = x.data

        def grad_fn(g):
            buf = np.zeros_like(xd)
            if unique:
                buf[idx] = g
            else:
                np.add.at(buf, idx, g)
            return (buf,)

        return Tensor(xd[idx], x.tape, (x,), grad_fn)
    return np.asarray(x)[idx]


def reverse_gradients(tape: Tape, loss: Tensor, check_finite: bool = True) -> dict:
    """Single reverse sweep from a scalar loss.

    Returns a gradient array for every parameter on the tape; parameters the
    loss never touched get zeros. Gradient accumulation is functional (never
    in place), so grad_fn outputs may alias forward buffers safely.
    """
    if not isinstance(loss, Tensor) or loss.tape is not tape:
        raise ValueError("loss is not a node on this tape")
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    if not np.isfinite(loss.data):
        raise NonFiniteError("loss is not finite")

    grads: dict[Tensor, np.ndarray] = {loss: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.get(node)
        if g is None or node.grad_fn is None:
            continue
        assert g.shape == node.data.shape, (g.shape, node.data.shape)
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if pg is None:
                continue
            acc = grads.get(parent)
            grads[parent] = pg if acc is None else acc + pg

    out = {}
    for node in tape.nodes:
        if not node.is_param:
            continue
        g = grads.get(node)
        if g is None:
            g = np.zeros_like(node.data)
        elif check_finite and not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {node.name!r}")
        out[node] = g
    return out
