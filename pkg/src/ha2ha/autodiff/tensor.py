"""Array-valued reverse-mode autodiff.

A ``Tensor`` wraps a numpy array. Ops build a graph of closures; calling
``backward()`` on a scalar result walks it in reverse topological order and
accumulates ``.grad`` on every tensor that requires it. Ops never mutate
their inputs.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Iterable["Tensor"] = (),
        backward: Optional[Callable[[np.ndarray], None]] = None,
        name: str = "",
    ):
        self.data = np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Backpropagate from this tensor (defaults to d(self)/d(self) = 1)."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.accumulate(g)
            else:
                node._backward(g, grads)

    # arithmetic sugar used by the loss code
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("only division by constants is supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)


# Branch log for nonsmooth ops (|x|, leaky ReLU, max-pool argmax). When a
# list is installed, each such op appends the array that selects its active
# branch, so a caller can tell whether two evaluations took the same branches.
_BRANCH_LOG: Optional[list] = None


def set_branch_log(log: Optional[list]) -> Optional[list]:
    """Install ``log`` (or None to disable); returns the previous log."""
    global _BRANCH_LOG
    prev, _BRANCH_LOG = _BRANCH_LOG, log
    return prev


def log_branch(selector: np.ndarray) -> None:
    if _BRANCH_LOG is not None:
        _BRANCH_LOG.append(selector)


def _as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _send(grads: dict, node: Tensor, g: np.ndarray) -> None:
    """Route gradient ``g`` to ``node``: leaves accumulate, interior nodes
    collect into the pending map."""
    if not node.requires_grad:
        return
    if node._backward is None:
        node.accumulate(g)
        return
    key = id(node)
    if key in grads:
        grads[key] = grads[key] + g
    else:
        grads[key] = g


def make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    """Create an op result; the backward closure receives (grad, pending)."""
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, parents=parents if req else (), backward=backward if req else None)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)

    def backward(g, grads):
        _send(grads, a, _unbroadcast(g, a.shape))
        _send(grads, b, _unbroadcast(g, b.shape))

    return make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)

    def backward(g, grads):
        _send(grads, a, _unbroadcast(g, a.shape))
        _send(grads, b, _unbroadcast(-g, b.shape))

    return make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)

    def backward(g, grads):
        if a.requires_grad:
            _send(grads, a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _send(grads, b, _unbroadcast(g * a.data, b.shape))

    return make(a.data * b.data, (a, b), backward)


def absolute(a: Tensor) -> Tensor:
    """|a|; the subgradient at 0 is 0."""
    sign = np.sign(a.data)
    log_branch(sign)

    def backward(g, grads):
        _send(grads, a, g * sign)

    return make(np.abs(a.data), (a,), backward)


def mean(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g, grads):
        _send(grads, a, np.broadcast_to(g / n, a.shape).astype(a.dtype))

    return make(np.asarray(a.data.mean(), dtype=a.dtype), (a,), backward)


def total(a: Tensor) -> Tensor:
    def backward(g, grads):
        _send(grads, a, np.broadcast_to(g, a.shape).astype(a.dtype))

    return make(np.asarray(a.data.sum(), dtype=a.dtype), (a,), backward)


def abs_sum(a: Tensor) -> Tensor:
    """sum |a| in one node (cheaper than total(absolute(a)) for big weights)."""
    sign = np.sign(a.data)
    log_branch(sign)

    def backward(g, grads):
        _send(grads, a, g * sign)

    return make(np.asarray(np.abs(a.data).sum(), dtype=a.dtype), (a,), backward)
