"""Minimal reverse-mode differentiation over numpy arrays (float64)."""
import numpy as np


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to `shape`."""

    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Array node of a computation graph."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, _children=(), _op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad or any(child.requires_grad for child in _children)
        self.grad = None
        self._backward = lambda: None
        self._prev = tuple(_children)
        self._op = _op

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op or 'leaf'})"

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, grad):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad = self.grad + grad

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data + other.data, _children=(self, other), _op="+")

        def _backward():
            self._accumulate(_unbroadcast(out.grad, self.shape))
            other._accumulate(_unbroadcast(out.grad, other.shape))

        out._backward = _backward
        return out

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data * other.data, _children=(self, other), _op="*")

        def _backward():
            self._accumulate(_unbroadcast(out.grad * other.data, self.shape))
            other._accumulate(_unbroadcast(out.grad * self.data, other.shape))

        out._backward = _backward
        return out

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = as_tensor(other)
        out = Tensor(np.matmul(self.data, other.data), _children=(self, other), _op="@")

        def _backward():
            self._accumulate(_unbroadcast(np.matmul(out.grad, np.swapaxes(other.data, -1, -2)), self.shape))
            other._accumulate(_unbroadcast(np.matmul(np.swapaxes(self.data, -1, -2), out.grad), other.shape))

        out._backward = _backward
        return out

    def swapaxes(self, axis1=-1, axis2=-2):
        """Swap two axes (default: transpose the trailing matrix)."""
        out = Tensor(np.swapaxes(self.data, axis1, axis2), _children=(self,), _op="swapaxes")

        def _backward():
            self._accumulate(np.swapaxes(out.grad, axis1, axis2))

        out._backward = _backward
        return out

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), _children=(self,), _op="reshape")

        def _backward():
            self._accumulate(out.grad.reshape(self.shape))

        out._backward = _backward
        return out

    def __getitem__(self, index):
        out = Tensor(self.data[index], _children=(self,), _op="getitem")

        def _backward():
            grad = np.zeros_like(self.data)
            np.add.at(grad, index, out.grad)
            self._accumulate(grad)

        out._backward = _backward
        return out

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), _children=(self,), _op="sum")

        def _backward():
            grad = out.grad
            if axis is not None and not keepdims:
                grad = np.expand_dims(grad, axis)
            self._accumulate(np.broadcast_to(grad, self.shape).copy())

        out._backward = _backward
        return out

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def relu(self):
        mask = self.data > 0
        out = Tensor(self.data * mask, _children=(self,), _op="relu")

        def _backward():
            self._accumulate(out.grad * mask)

        out._backward = _backward
        return out

    def leaky_relu(self, slope=0.2):
        factor = np.where(self.data > 0, 1.0, slope)
        out = Tensor(self.data * factor, _children=(self,), _op="leaky_relu")

        def _backward():
            self._accumulate(out.grad * factor)

        out._backward = _backward
        return out

    def softmax(self, axis=-1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        exp = np.exp(shifted)
        y = exp / exp.sum(axis=axis, keepdims=True)
        out = Tensor(y, _children=(self,), _op="softmax")

        def _backward():
            g = out.grad
            self._accumulate(y * (g - np.sum(g * y, axis=axis, keepdims=True)))

        out._backward = _backward
        return out

    def pad_last(self, width):
        """Append `width` zeros along the last axis."""
        if width == 0:
            return self
        out = Tensor(
            np.concatenate([self.data, np.zeros(self.shape[:-1] + (width,))], axis=-1),
            _children=(self,),
            _op="pad",
        )

        def _backward():
            self._accumulate(out.grad[..., : self.shape[-1]])

        out._backward = _backward
        return out

    def backward(self):
        """Backpropagate from a scalar."""

        if self.data.size != 1:
            raise ValueError("backward needs a scalar output")

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
            for child in node._prev:
                if id(child) not in visited:
                    stack.append((child, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node.grad is not None:
                node._backward()


def as_tensor(value):
    """Wrap constants; tensors pass through."""

    return value if isinstance(value, Tensor) else Tensor(value)


def concat(tensors, axis=-1):
    """Concatenate tensors along `axis`."""

    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), _children=tuple(tensors), _op="concat")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def _backward():
        for t, first, last in zip(tensors, bounds[:-1], bounds[1:]):
            index = [slice(None)] * out.grad.ndim
            index[axis] = slice(first, last)
            t._accumulate(out.grad[tuple(index)])

    out._backward = _backward
    return out
