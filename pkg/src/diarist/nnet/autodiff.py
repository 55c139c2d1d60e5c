"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray; every operation records its inputs and a
backward closure when gradients are enabled.  Creation order doubles as
a topological order, so backward() just walks reachable nodes from
newest to oldest, accumulating gradients into leaf tensors.

The op set is deliberately small: elementwise arithmetic with
broadcasting, matmul, tanh / sigmoid / exp / log / sqrt / relu / clip,
reductions, indexing, stack / concat / reshape, and a fused softmax
cross-entropy.  Everything the sequence models and metric-learning
losses need composes from these.
"""

from __future__ import annotations

import contextlib
import itertools

import numpy as np

_grad_enabled = True
_counter = itertools.count()


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (inference mode)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "_id")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._id = next(_counter)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed=None) -> None:
        """Accumulate d(self)/d(leaf) into .grad of reachable tensors."""
        if seed is None:
            seed = np.ones_like(self.value)
        grads: dict[int, np.ndarray] = {self._id: np.asarray(seed, dtype=np.float64)}
        # collect reachable recorded nodes
        nodes: dict[int, Tensor] = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if node._id in nodes:
                continue
            nodes[node._id] = node
            stack.extend(node._parents)
        for node_id in sorted(nodes, reverse=True):
            node = nodes[node_id]
            g = grads.pop(node_id, None)
            if g is None:
                continue
            if isinstance(g, IndexedGrad):
                g = g.materialize()
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None:
                    continue
                _accumulate(grads, parent._id, pg)

    # -- operator sugar ----------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return take(self, index)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"


class IndexedGrad:
    """Sparse gradient: `value` scattered at `index` of a `shape` buffer.

    Emitted by indexing ops so that T slice-reads of one tensor cost one
    buffer allocation plus T in-place scatters instead of T full-size adds.
    """

    __slots__ = ("index", "value", "shape")

    def __init__(self, index, value, shape):
        self.index = index
        self.value = value
        self.shape = shape

    def materialize(self) -> np.ndarray:
        out = np.zeros(self.shape)
        self.scatter_into(out)
        return out

    def scatter_into(self, buffer: np.ndarray) -> None:
        idx = self.index
        fancy = isinstance(idx, np.ndarray) or (
            isinstance(idx, tuple) and any(isinstance(i, np.ndarray) for i in idx)
        )
        if fancy:
            np.add.at(buffer, idx, self.value)
        else:
            buffer[idx] += self.value


def _accumulate(grads: dict, pid: int, pg) -> None:
    current = grads.get(pid)
    if isinstance(pg, IndexedGrad):
        if current is None:
            current = np.zeros(pg.shape)
            grads[pid] = current
        elif isinstance(current, IndexedGrad):
            current = current.materialize()
            grads[pid] = current
        elif not current.flags.owndata:
            # never scatter into a borrowed view of another gradient
            current = current.copy()
            grads[pid] = current
        pg.scatter_into(current)
    else:
        if current is None:
            grads[pid] = pg
        elif isinstance(current, IndexedGrad):
            buf = current.materialize()
            buf += pg
            grads[pid] = buf
        else:
            grads[pid] = current + pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward) -> Tensor:
    out = Tensor(value)
    if _grad_enabled and any(
        p.requires_grad or p._backward is not None for p in parents
    ):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- arithmetic -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value / b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.value.shape),
            _unbroadcast(-g * a.value / b.value**2, b.value.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        return _unbroadcast(ga, a.value.shape), _unbroadcast(gb, b.value.shape)

    return _node(a.value @ b.value, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    return _node(
        a.value**exponent,
        (a,),
        lambda g: (g * exponent * a.value ** (exponent - 1),),
    )


# -- nonlinearities ----------------------------------------------------------

def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out**2),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.value))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a) -> Tensor:
    # safe at 0: subgradient 0.5/max(sqrt, eps) keeps std-pooling finite
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _node(out, (a,), lambda g: (g * 0.5 / np.maximum(out, 1e-12),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _node(
        np.maximum(a.value, 0.0), (a,), lambda g: (g * (a.value > 0.0),)
    )


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    mask = (a.value >= lo) & (a.value <= hi)
    return _node(np.clip(a.value, lo, hi), (a,), lambda g: (g * mask,))


# -- reductions / shaping -----------------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.value.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.value.shape).copy(),)

    return _node(a.value.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.value.size
    else:
        count = a.value.shape[axis]

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.value.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, a.value.shape).copy(),)

    return _node(a.value.mean(axis=axis, keepdims=keepdims), (a,), backward)


def take(a, index) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (IndexedGrad(index, g, a.value.shape),)

    return _node(a.value[index], (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(
        a.value.reshape(shape), (a,), lambda g: (g.reshape(a.value.shape),)
    )


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    return _node(
        np.swapaxes(a.value, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),)
    )


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    lead = (slice(None),) * axis

    def backward(g):
        # views into g; the accumulator never mutates incoming grads
        return tuple(g[lead + (i,)] for i in range(len(tensors)))

    return _node(np.stack([t.value for t in tensors], axis=axis), tensors, backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(
        np.concatenate([t.value for t in tensors], axis=axis), tensors, backward
    )


# -- fused heads --------------------------------------------------------------

def softmax(logits, axis: int = -1) -> Tensor:
    logits = as_tensor(logits)
    shifted = logits.value - logits.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _node(out, (logits,), backward)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer `labels` under row softmax."""
    logits = as_tensor(logits)
    labels = np.asarray(labels).reshape(-1)
    flat = logits.value.reshape(-1, logits.value.shape[-1])
    if len(labels) != flat.shape[0]:
        raise ValueError("labels do not match logits rows")
    shifted = flat - flat.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logprob = shifted - logsumexp
    rows = np.arange(flat.shape[0])
    loss = -logprob[rows, labels].mean()

    def backward(g):
        grad = np.exp(logprob)
        grad[rows, labels] -= 1.0
        grad *= g / flat.shape[0]
        return (grad.reshape(logits.value.shape),)

    return _node(loss, (logits,), backward)
