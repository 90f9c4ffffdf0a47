"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery to express the model forward passes and get exact
analytic gradients back: a Tensor wraps a float64 ndarray, each op records
its parents and a vector-Jacobian callback, and backward() walks the graph in
reverse topological order. Correctness is enforced by finite-difference
checks in the training module, not by construction.
"""

from __future__ import annotations

import numpy as np


def _as_array(x) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x.astype(np.float64, copy=False)
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._vjp = _vjp if self.requires_grad else None

    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data + other.data

        def vjp(g):
            return (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape))

        return Tensor(out_data, _parents=(self, other), _vjp=vjp)

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, _parents=(self,), _vjp=lambda g: (-g,))

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data - other.data

        def vjp(g):
            return (_unbroadcast(g, self.shape), _unbroadcast(-g, other.shape))

        return Tensor(out_data, _parents=(self, other), _vjp=vjp)

    def __rsub__(self, other):
        return Tensor(other) - self

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data * other.data

        def vjp(g):
            return (
                _unbroadcast(g * other.data, self.shape),
                _unbroadcast(g * self.data, other.shape),
            )

        return Tensor(out_data, _parents=(self, other), _vjp=vjp)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data / other.data

        def vjp(g):
            return (
                _unbroadcast(g / other.data, self.shape),
                _unbroadcast(-g * self.data / (other.data * other.data), other.shape),
            )

        return Tensor(out_data, _parents=(self, other), _vjp=vjp)

    def __matmul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ValueError("matmul requires operands of rank >= 2")
        out_data = self.data @ other.data

        def vjp(g):
            ga = g @ np.swapaxes(other.data, -1, -2)
            gb = np.swapaxes(self.data, -1, -2) @ g
            return (_unbroadcast(ga, self.shape), _unbroadcast(gb, other.shape))

        return Tensor(out_data, _parents=(self, other), _vjp=vjp)

    def __getitem__(self, idx):
        out_data = self.data[idx]

        def vjp(g):
            full = np.zeros_like(self.data)
            full[idx] = g
            return (full,)

        return Tensor(out_data, _parents=(self,), _vjp=vjp)

    # -- elementwise functions ----------------------------------------
    def exp(self):
        out_data = np.exp(self.data)
        return Tensor(out_data, _parents=(self,), _vjp=lambda g: (g * out_data,))

    def log(self):
        return Tensor(np.log(self.data), _parents=(self,), _vjp=lambda g: (g / self.data,))

    def sqrt(self):
        out_data = np.sqrt(self.data)
        return Tensor(out_data, _parents=(self,), _vjp=lambda g: (g / (2.0 * out_data),))

    def relu(self):
        mask = self.data > 0
        return Tensor(np.where(mask, self.data, 0.0), _parents=(self,), _vjp=lambda g: (g * mask,))

    def softplus(self):
        # ln(1 + e^x) with the overflow-safe branch: identity for x > 30.
        x = self.data
        out_data = np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))
        sig = 1.0 / (1.0 + np.exp(-x))
        return Tensor(out_data, _parents=(self,), _vjp=lambda g: (g * sig,))

    # -- reductions / shape -------------------------------------------
    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, self.shape).copy(),)
            g2 = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g2, self.shape).copy(),)

        return Tensor(out_data, _parents=(self,), _vjp=vjp)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)
        return Tensor(out_data, _parents=(self,), _vjp=lambda g: (g.reshape(self.shape),))

    def transpose(self, axes):
        inv = np.argsort(axes)
        out_data = self.data.transpose(axes)
        return Tensor(out_data, _parents=(self,), _vjp=lambda g: (g.transpose(inv),))

    # ------------------------------------------------------------------
    def backward(self):
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is not None:
                parent_grads = node._vjp(g)
                for p, pg in zip(node._parents, parent_grads):
                    if not p.requires_grad:
                        continue
                    acc = grads.get(id(p))
                    grads[id(p)] = pg if acc is None else acc + pg
            elif node._parents:
                raise RuntimeError("node with parents but no vjp")
            else:
                node.grad = g if node.grad is None else node.grad + g


# ----------------------------------------------------------------------
# free functions


def param(data) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data)


def stack(tensors, axis=0) -> Tensor:
    out_data = np.stack([t.data for t in tensors], axis=axis)
    ts = tuple(tensors)

    def vjp(g):
        parts = np.split(g, len(ts), axis=axis)
        return tuple(np.squeeze(p, axis=axis) for p in parts)

    return Tensor(out_data, _parents=ts, _vjp=vjp)


def take_rows(t: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table: out[..., :] = t[idx[...], :]."""
    idx = np.asarray(idx)
    out_data = t.data[idx]

    def vjp(g):
        full = np.zeros_like(t.data)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor(out_data, _parents=(t,), _vjp=vjp)


def gather_last(t: Tensor, idx: np.ndarray) -> Tensor:
    """Pick one entry along the last axis: out[...] = t[..., idx[...]]."""
    idx = np.asarray(idx)
    expanded = np.expand_dims(idx, -1)
    out_data = np.take_along_axis(t.data, expanded, axis=-1).squeeze(-1)

    def vjp(g):
        full = np.zeros_like(t.data)
        np.put_along_axis(full, expanded, np.expand_dims(g, -1), axis=-1)
        return (full,)

    return Tensor(out_data, _parents=(t,), _vjp=vjp)


def softmax(t: Tensor, axis=-1) -> Tensor:
    """Softmax along `axis`, stabilized by a detached max-shift."""
    shift = constant(t.data.max(axis=axis, keepdims=True))
    e = (t - shift).exp()
    return e / e.sum(axis=axis, keepdims=True)


def logsumexp(t: Tensor, axis=-1) -> Tensor:
    """log(sum(exp(t))) along `axis`, max-subtraction stabilized."""
    m = t.data.max(axis=axis, keepdims=True)
    e = (t - constant(m)).exp()
    return e.sum(axis=axis).log() + constant(np.squeeze(m, axis=axis))
