"""Dense float64 tensors with reverse-mode automatic differentiation.

Define-by-run: every operation returns a fresh ``Tensor`` node that keeps
references to its parents and a closure implementing the local chain rule.
``backward()`` on a scalar root zeroes the gradients of every reachable node
and then accumulates adjoints in reverse topological order, so repeated calls
on the same graph are bit-identical.

Broadcasting is deliberately narrow: two operands must have equal shapes,
or one of them is a scalar, or a 1-D tensor is broadcast across the leading
batch axis of a 2-D tensor (the bias-add case). Anything else raises
``DimensionError``.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, NumericError


def _as_array(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


class Tensor:
    """A dense float64 array plus the bookkeeping for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "param", "_parents", "_backward")

    def __init__(self, data, param: bool = False):
        arr = _as_array(data)
        if not np.all(np.isfinite(arr)):
            raise ContractError("tensor input contains NaN or Inf")
        self.data = arr
        self.grad = None
        self.param = param
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @classmethod
    def _node(cls, data, parents, backward) -> "Tensor":
        # internal results skip the finite check; train() guards the loss
        out = cls.__new__(cls)
        out.data = _as_array(data)
        out.grad = None
        out.param = False
        out._parents = parents
        out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.flat[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    # ---- binary elementwise ops ------------------------------------------

    @staticmethod
    def _coerce(other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(other)

    @staticmethod
    def _check_broadcast(a: np.ndarray, b: np.ndarray):
        if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
            return
        if a.ndim == 2 and b.shape == (a.shape[1],):
            return
        if b.ndim == 2 and a.shape == (b.shape[1],):
            return
        raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}")

    @staticmethod
    def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
        if grad.shape == shape:
            return grad
        if shape == ():
            return np.asarray(grad.sum())
        # 1-D operand broadcast over the leading batch axis
        return grad.sum(axis=0)

    def __add__(self, other):
        other = Tensor._coerce(other)
        Tensor._check_broadcast(self.data, other.data)

        def backward(out):
            self.grad += Tensor._unbroadcast(out.grad, self.data.shape)
            other.grad += Tensor._unbroadcast(out.grad, other.data.shape)

        return Tensor._node(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = Tensor._coerce(other)
        Tensor._check_broadcast(self.data, other.data)

        def backward(out):
            self.grad += Tensor._unbroadcast(out.grad, self.data.shape)
            other.grad -= Tensor._unbroadcast(out.grad, other.data.shape)

        return Tensor._node(self.data - other.data, (self, other), backward)

    def __rsub__(self, other):
        return Tensor._coerce(other) - self

    def __mul__(self, other):
        other = Tensor._coerce(other)
        Tensor._check_broadcast(self.data, other.data)

        def backward(out):
            self.grad += Tensor._unbroadcast(out.grad * other.data, self.data.shape)
            other.grad += Tensor._unbroadcast(out.grad * self.data, other.data.shape)

        return Tensor._node(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __neg__(self):
        def backward(out):
            self.grad -= out.grad

        return Tensor._node(-self.data, (self,), backward)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("tensor/tensor division is not supported")
        return self * (1.0 / float(other))

    # ---- matmul / transpose ----------------------------------------------

    def __matmul__(self, other):
        other = Tensor._coerce(other)
        a, b = self.data, other.data
        if a.ndim != 2 or b.ndim != 2:
            raise DimensionError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")

        def backward(out):
            self.grad += out.grad @ b.T
            other.grad += a.T @ out.grad

        return Tensor._node(a @ b, (self, other), backward)

    @property
    def T(self) -> "Tensor":
        if self.data.ndim != 2:
            raise DimensionError(f"transpose needs a 2-D tensor, got shape {self.shape}")

        def backward(out):
            self.grad += out.grad.T

        return Tensor._node(self.data.T, (self,), backward)

    # ---- elementwise unary ops -------------------------------------------

    def exp(self) -> "Tensor":
        y = np.exp(self.data)

        def backward(out):
            self.grad += out.grad * y

        return Tensor._node(y, (self,), backward)

    def log(self) -> "Tensor":
        def backward(out):
            self.grad += out.grad / self.data

        return Tensor._node(np.log(self.data), (self,), backward)

    def square(self) -> "Tensor":
        def backward(out):
            self.grad += out.grad * (2.0 * self.data)

        return Tensor._node(np.square(self.data), (self,), backward)

    def leaky_relu(self, slope: float) -> "Tensor":
        if not 0.0 <= slope < 1.0:
            raise ContractError(f"leaky_relu slope must be in [0, 1), got {slope}")
        # at exactly 0 the positive-branch derivative is used
        gate = np.where(self.data >= 0.0, 1.0, slope)

        def backward(out):
            self.grad += out.grad * gate

        return Tensor._node(np.where(self.data >= 0.0, self.data, slope * self.data), (self,), backward)

    # ---- reductions --------------------------------------------------------

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        y = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(out):
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self.grad += g  # broadcasts over the reduced axis

        return Tensor._node(y, (self,), backward)

    def mean(self, axis: int | None = None) -> "Tensor":
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / count)

    # ---- backward pass -----------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(node) into ``grad`` for every reachable node.

        ``self`` must be scalar-valued. All reachable gradients are reset
        first, so calling backward twice gives bit-identical results.
        """
        if self.data.size != 1:
            raise ContractError(f"backward root must be scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        visited = set()

        def build(node):
            if id(node) not in visited:
                visited.add(id(node))
                for parent in node._parents:
                    build(parent)
                topo.append(node)

        build(self)
        for node in topo:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node)


def concat(tensors, axis: int = 1) -> Tensor:
    """Concatenate 2-D tensors along rows (axis=0) or columns (axis=1)."""
    tensors = [Tensor._coerce(t) for t in tensors]
    if axis not in (0, 1):
        raise ContractError(f"concat axis must be 0 or 1, got {axis}")
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    for t in tensors:
        if t.data.ndim != 2:
            raise DimensionError(f"concat needs 2-D tensors, got shape {t.shape}")
    other = 1 - axis
    widths = [t.data.shape[axis] for t in tensors]
    if len({t.data.shape[other] for t in tensors}) != 1:
        raise DimensionError(
            "concat shapes disagree off-axis: " + ", ".join(str(t.shape) for t in tensors)
        )

    def backward(out):
        offset = 0
        for t, w in zip(tensors, widths):
            sl = (slice(offset, offset + w), slice(None)) if axis == 0 else (slice(None), slice(offset, offset + w))
            t.grad += out.grad[sl]
            offset += w

    return Tensor._node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def gradients(root: Tensor, params) -> list[np.ndarray]:
    """Run backward from ``root`` and return the gradient of each tensor in ``params``.

    Parameters that do not feed the root get an exact zero gradient.
    """
    params = list(params)
    for p in params:
        p.grad = None
    root.backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def grad_check(build, point, h: float = 1e-4) -> float:
    """Compare analytic gradients of ``build`` against central finite differences.

    ``build`` takes a list of leaf Tensors (one per array in ``point``) and
    returns a scalar Tensor. Returns the worst relative error over every
    coordinate, with denominator max(|analytic|, |numeric|, 1e-8).
    """
    if h <= 0:
        raise ContractError(f"step size must be positive, got {h}")
    point = [_as_array(p) for p in point]
    leaves = [Tensor(p) for p in point]
    analytic = gradients(build(leaves), leaves)

    def evaluate(arrays) -> float:
        value = build([Tensor(a) for a in arrays]).item()
        if not np.isfinite(value):
            raise NumericError("non-finite loss at a perturbed point during grad_check")
        return value

    worst = 0.0
    for i, base in enumerate(point):
        for j in range(base.size):
            plus = [p.copy() if k == i else p for k, p in enumerate(point)]
            plus[i].flat[j] += h
            minus = [p.copy() if k == i else p for k, p in enumerate(point)]
            minus[i].flat[j] -= h
            numeric = (evaluate(plus) - evaluate(minus)) / (2.0 * h)
            a = analytic[i].flat[j]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, float(rel))
    return worst
