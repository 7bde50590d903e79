"""
Dense array engine with define-by-run reverse-mode differentiation.

Every operation returns a new immutable Array; when any operand requires a gradient the
result keeps a reference to the Function that produced it, so the graph is rebuilt on
every forward pass and walked once by `backward`.
"""

import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.exceptions import ContractError, DimensionError, NumericError

logger = logging.getLogger(__name__)

Scalar = Union[int, float]
GradientMap = Dict["Array", np.ndarray]

_SIGMOID_FLOOR = np.finfo(np.float64).tiny
_SIGMOID_CEIL = np.nextafter(1.0, 0.0)


class Array:
    """
    Immutable float64 array that optionally records the operation that produced it.

    Args:
        data: Anything numpy can convert to a float64 array. The values are copied.
        requires_grad (bool): Whether `backward` should report a gradient for this leaf.

    Raises:
        DimensionError: If any axis has length zero.
        NumericError: If the data holds NaN or infinite values.
    """

    __slots__ = ("_data", "requires_grad", "_ctx", "__weakref__")

    def __init__(self, data, requires_grad: bool = False) -> None:
        self._data = _freeze(np.array(data, dtype=np.float64))
        self.requires_grad = requires_grad
        self._ctx: Optional["Function"] = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool, ctx: Optional["Function"]) -> "Array":
        # Internal constructor for op outputs: data is used as is.
        out = cls.__new__(cls)
        out._data = _freeze(np.asarray(data, dtype=np.float64))
        out.requires_grad = requires_grad
        out._ctx = ctx
        return out

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    @property
    def T(self) -> "Array":
        return transpose(self)

    def item(self) -> float:
        if self._data.size != 1:
            raise ContractError(f"item() needs a single-element array, got shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Returns a writable copy of the values."""
        return self._data.copy()

    def __repr__(self) -> str:
        return f"Array(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other) -> "Array":
        return add(self, other)

    def __radd__(self, other) -> "Array":
        return add(other, self)

    def __sub__(self, other) -> "Array":
        return sub(self, other)

    def __rsub__(self, other) -> "Array":
        return sub(other, self)

    def __mul__(self, other) -> "Array":
        return mul(self, other)

    def __rmul__(self, other) -> "Array":
        return mul(other, self)

    def __neg__(self) -> "Array":
        return Neg.apply(self)

    def __matmul__(self, other) -> "Array":
        return matmul(self, other)

    def __getitem__(self, index) -> "Array":
        return Index.apply(self, index=index)


def _freeze(data: np.ndarray) -> np.ndarray:
    if any(dim == 0 for dim in data.shape):
        raise DimensionError(f"Arrays need positive dimensions, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise NumericError(f"Non-finite values in array of shape {data.shape}")
    data.setflags(write=False)
    return data


def as_array(value) -> Array:
    """Wraps constants (python scalars, numpy arrays) as non-differentiable Arrays."""
    return value if isinstance(value, Array) else Array(value)


class Function:
    """
    One recorded operation. Subclasses implement `forward` on raw ndarrays and
    `backward`, which maps the output gradient to one gradient per parent.
    """

    def __init__(self) -> None:
        self.parents: Tuple[Array, ...] = ()
        self.saved: Tuple = ()

    @classmethod
    def apply(cls, *args, **kwargs) -> Array:
        ctx = cls()
        ctx.parents = tuple(as_array(a) for a in args)
        out = ctx.forward(*[p.data for p in ctx.parents], **kwargs)
        requires_grad = any(p.requires_grad for p in ctx.parents)
        return Array._wrap(out, requires_grad, ctx if requires_grad else None)

    def save_for_backward(self, *values) -> None:
        self.saved = values

    def forward(self, *inputs: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sums a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


class Add(Function):
    def forward(self, a, b):
        _check_broadcast(a, b, "add")
        self.save_for_backward(a.shape, b.shape)
        return a + b

    def backward(self, grad):
        shape_a, shape_b = self.saved
        return unbroadcast(grad, shape_a), unbroadcast(grad, shape_b)


class Sub(Function):
    def forward(self, a, b):
        _check_broadcast(a, b, "sub")
        self.save_for_backward(a.shape, b.shape)
        return a - b

    def backward(self, grad):
        shape_a, shape_b = self.saved
        return unbroadcast(grad, shape_a), unbroadcast(-grad, shape_b)


class Mul(Function):
    def forward(self, a, b):
        _check_broadcast(a, b, "mul")
        self.save_for_backward(a, b)
        return a * b

    def backward(self, grad):
        a, b = self.saved
        return unbroadcast(grad * b, a.shape), unbroadcast(grad * a, b.shape)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
        self.save_for_backward(a, b)
        return a @ b

    def backward(self, grad):
        a, b = self.saved
        return grad @ b.T, a.T @ grad


class Transpose(Function):
    def forward(self, a):
        if a.ndim != 2:
            raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
        return a.T

    def backward(self, grad):
        return (grad.T,)


class Reshape(Function):
    def forward(self, a, shape):
        if int(np.prod(shape)) != a.size:
            raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}")
        self.save_for_backward(a.shape)
        return a.reshape(shape)

    def backward(self, grad):
        (shape,) = self.saved
        return (grad.reshape(shape),)


class SoftmaxRows(Function):
    def forward(self, x):
        if x.ndim != 2:
            raise DimensionError(f"softmax_rows expects a matrix, got shape {x.shape}")
        shifted = np.exp(x - x.max(axis=1, keepdims=True))
        y = shifted / shifted.sum(axis=1, keepdims=True)
        self.save_for_backward(y)
        return y

    def backward(self, grad):
        (y,) = self.saved
        return (y * (grad - (grad * y).sum(axis=1, keepdims=True)),)


class Sigmoid(Function):
    def forward(self, x):
        # exp of a non-positive argument only, for either sign of x
        z = np.exp(-np.abs(x))
        y = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
        # strictly inside (0, 1) even where the float64 result would round to 0 or 1
        y = np.clip(y, _SIGMOID_FLOOR, _SIGMOID_CEIL)
        self.save_for_backward(y)
        return y

    def backward(self, grad):
        (y,) = self.saved
        return (grad * y * (1.0 - y),)


class LogSigmoid(Function):
    def forward(self, x):
        # log σ(x) = min(x, 0) − log1p(e^{−|x|}), finite for every finite x
        self.save_for_backward(x)
        return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))

    def backward(self, grad):
        (x,) = self.saved
        # d/dx log σ(x) = σ(−x)
        z = np.exp(-np.abs(x))
        return (grad * np.where(x >= 0, z / (1.0 + z), 1.0 / (1.0 + z)),)


class Relu(Function):
    def forward(self, x):
        mask = x > 0
        self.save_for_backward(mask)
        return np.where(mask, x, 0.0)

    def backward(self, grad):
        (mask,) = self.saved
        return (np.where(mask, grad, 0.0),)


class Log(Function):
    def forward(self, x):
        if np.any(x <= 0):
            raise NumericError("log of a non-positive value")
        self.save_for_backward(x)
        return np.log(x)

    def backward(self, grad):
        (x,) = self.saved
        return (grad / x,)


class Sum(Function):
    def forward(self, x):
        self.save_for_backward(x.shape)
        return np.asarray(x.sum())

    def backward(self, grad):
        (shape,) = self.saved
        return (np.full(shape, grad, dtype=np.float64),)


class Mean(Function):
    def forward(self, x):
        self.save_for_backward(x.shape, x.size)
        return np.asarray(x.mean())

    def backward(self, grad):
        shape, size = self.saved
        return (np.full(shape, grad / size, dtype=np.float64),)


class Index(Function):
    def forward(self, x, index):
        self.save_for_backward(x.shape, index)
        return np.asarray(x[index])

    def backward(self, grad):
        shape, index = self.saved
        out = np.zeros(shape, dtype=np.float64)
        np.add.at(out, index, grad)
        return (out,)


def add(a, b) -> Array:
    return Add.apply(a, b)


def sub(a, b) -> Array:
    return Sub.apply(a, b)


def mul(a, b) -> Array:
    return Mul.apply(a, b)


def scale(x: Array, factor: Scalar) -> Array:
    return Mul.apply(x, float(factor))


def matmul(a, b) -> Array:
    """
    Matrix product of an m×k and a k×n array.

    Raises:
        DimensionError: If either operand is not a matrix or the inner dimensions differ.
    """
    return MatMul.apply(a, b)


def transpose(x: Array) -> Array:
    return Transpose.apply(x)


def reshape(x: Array, *shape: int) -> Array:
    return Reshape.apply(x, shape=tuple(shape))


def softmax_rows(x: Array) -> Array:
    """Row-wise softmax computed with per-row max subtraction."""
    return SoftmaxRows.apply(x)


def sigmoid(x: Array) -> Array:
    return Sigmoid.apply(x)


def log_sigmoid(x: Array) -> Array:
    """log σ(x) without forming σ(x), so it stays finite where σ saturates."""
    return LogSigmoid.apply(x)


def relu(x: Array) -> Array:
    return Relu.apply(x)


def log(x: Array) -> Array:
    return Log.apply(x)


def total(x: Array) -> Array:
    """Sum of all entries as a 0-d Array."""
    return Sum.apply(x)


def mean(x: Array) -> Array:
    """Mean of all entries as a 0-d Array."""
    return Mean.apply(x)


def square(x: Array) -> Array:
    return Mul.apply(x, x)


def detach(x: Array) -> Array:
    """
    Returns a value-identical Array that is a new graph leaf.

    Gradient never crosses this edge: the result shares the (read-only) buffer of `x`
    and has no producing Function.
    """
    return Array._wrap(x.data, requires_grad=False, ctx=None)


def topological_order(root: Array) -> List[Array]:
    """Nodes reachable from `root` (inclusive), parents before children."""
    order: List[Array] = []
    visited = set()
    stack: List[Tuple[Array, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node._ctx is not None:
            for parent in reversed(node._ctx.parents):
                if id(parent) not in visited:
                    stack.append((parent, False))
    return order


def graph_leaves(root: Array) -> List[Array]:
    """Leaves with requires_grad=True that `root` depends on through recorded edges."""
    return [node for node in topological_order(root) if node._ctx is None and node.requires_grad]


def backward(loss: Array) -> GradientMap:
    """
    Reverse-mode sweep from a scalar loss.

    Args:
        loss (Array): A 0-d (or single-element) Array produced by recorded operations.

    Returns:
        GradientMap: Gradient for every requires_grad leaf reachable from `loss`.
        Unreachable leaves are absent; callers treat absence as an exact zero.

    Raises:
        ContractError: If `loss` is not a scalar.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    order = topological_order(loss)
    grads: Dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=np.float64)}
    leaves: GradientMap = {}

    for node in reversed(order):
        grad = grads.pop(id(node), None)
        if grad is None or not node.requires_grad:
            continue
        if node._ctx is None:
            leaves[node] = grad
            continue
        for parent, parent_grad in zip(node._ctx.parents, node._ctx.backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else parent_grad
    return leaves


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Max entrywise |a - n| / max(|a| + |n|, floor)."""
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numerical_gradient(fn: Callable[..., Array], inputs: Sequence[np.ndarray], position: int,
                       eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar `fn(*inputs)` w.r.t. `inputs[position]`."""
    base = [np.array(x, dtype=np.float64) for x in inputs]
    target = base[position]
    out = np.zeros_like(target)
    for idx in np.ndindex(target.shape):
        original = target[idx]
        target[idx] = original + eps
        plus = fn(*[Array(x) for x in base]).item()
        target[idx] = original - eps
        minus = fn(*[Array(x) for x in base]).item()
        target[idx] = original
        out[idx] = (plus - minus) / (2.0 * eps)
    return out


def gradcheck(fn: Callable[..., Array], inputs: Sequence[np.ndarray], eps: float = 1e-5,
              floor: float = 1e-3) -> float:
    """
    Compares `backward` against central finite differences for every input.

    Args:
        fn: Maps Arrays (one per input) to a scalar Array.
        inputs: Values at which to check.
        eps (float): Finite-difference step.
        floor (float): Denominator floor of the relative error.

    Returns:
        float: The worst relative error over all inputs and entries.
    """
    leaves = [Array(x, requires_grad=True) for x in inputs]
    grads = backward(fn(*leaves))
    worst = 0.0
    for position, leaf in enumerate(leaves):
        analytic = grads.get(leaf, np.zeros(leaf.shape))
        numeric = numerical_gradient(fn, inputs, position, eps)
        worst = max(worst, relative_error(analytic, numeric, floor))
    logger.debug(f"gradcheck over {len(inputs)} inputs: worst relative error {worst:.3e}")
    return worst
