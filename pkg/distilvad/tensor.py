"""
DistilVAD - Tensors and gradient tapes

Dense numpy-backed tensors with reverse-mode automatic differentiation.
Operations are recorded onto the innermost active Tape; outside a tape
(or inside ``no_grad()``) nothing is recorded, which is how inference runs.
"""
import logging
import threading
from contextlib import contextmanager

import numpy as np
from einops import rearrange as _rearrange

from distilvad.exceptions import GradientError, ShapeError
from distilvad.utils import get_precision

# Configure logger
logger = logging.getLogger(__name__)

_DTYPES = {"float32": np.float32, "float64": np.float64}
_default_dtype = _DTYPES[get_precision()]
_local = threading.local()


def get_default_dtype():
    """Return the numpy dtype new tensors and parameters are created with."""
    return _default_dtype


def set_default_dtype(precision):
    """
    Set the default floating dtype.

    Args:
        precision (str or numpy dtype): "float32" or "float64"

    Returns:
        numpy dtype: the previous default, so callers can restore it
    """
    global _default_dtype
    previous = _default_dtype
    key = np.dtype(precision).name
    if key not in _DTYPES:
        raise ValueError(f"Unsupported precision: {precision}")
    _default_dtype = _DTYPES[key]
    return previous


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape():
    """Return the innermost recording tape of this thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad():
    """Suspend recording for the enclosed block."""
    stack = _tape_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


class Node:
    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output, inputs, backward_fn):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """
    Ordered record of differentiable operations.

    Nodes are appended as operations execute, so the list is already in
    topological order. A tape belongs to the thread that created it.

    Example:
        with Tape() as tape:
            loss = mse_loss(model(x), y)
        tape.backward(loss)
    """

    def __init__(self):
        self.nodes = []
        self._outputs = set()

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, output, inputs, backward_fn):
        self.nodes.append(Node(output, inputs, backward_fn))
        self._outputs.add(id(output))

    def produced(self, tensor):
        return id(tensor) in self._outputs

    def backward(self, loss):
        backward(loss, self)


class Tensor:
    """
    Dense n-dimensional array with optional gradient tracking.

    Attributes:
        data (np.ndarray): row-major values
        requires_grad (bool): whether gradients flow into this tensor
        grad (np.ndarray or None): accumulated gradient, same shape as data
    """

    __slots__ = ("data", "requires_grad", "grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = _default_dtype
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        """Return a tensor sharing the values but cut from the tape."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # arithmetic

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def rearrange(self, pattern, **sizes):
        return rearrange(self, pattern, **sizes)

    def relu(self):
        return relu(self)

    def square(self):
        return square(self)


def _as_tensor(value, dtype=None):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype or _default_dtype))


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def make_result(data, parents, backward_fn):
    """
    Wrap ``data`` as an op output and record it when a tape is active.

    Args:
        data (np.ndarray): forward value
        parents (tuple of Tensor): op inputs
        backward_fn (callable): maps the output gradient to a tuple with one
            gradient (or None) per parent

    Returns:
        Tensor: the output tensor
    """
    out = Tensor(data, dtype=data.dtype)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, backward_fn)
    return out


def backward(loss, tape):
    """
    Populate ``.grad`` of every leaf tensor that requires gradients.

    Leaf gradients accumulate additively, so gradients from shared subgraphs
    and from repeated calls add up until ``zero_grad`` is called.

    Args:
        loss (Tensor): scalar produced on ``tape``
        tape (Tape): the recording tape

    Raises:
        GradientError: if loss is not a scalar or was not produced on the tape
    """
    if loss.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.produced(loss):
        raise GradientError("loss was not produced on this tape")

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        grad = grads.pop(id(node.output), None)
        if grad is None:
            continue
        parent_grads = node.backward_fn(grad)
        for parent, parent_grad in zip(node.inputs, parent_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            parent_grad = _unbroadcast(np.asarray(parent_grad), parent.shape)
            if tape.produced(parent):
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + parent_grad
                else:
                    grads[key] = parent_grad
            elif parent.grad is None:
                parent.grad = np.array(parent_grad, dtype=parent.dtype, copy=True)
            else:
                parent.grad = parent.grad + parent_grad


# elementwise and reduction ops

def add(a, b):
    a, b = _as_tensor(a, getattr(b, "dtype", None)), _as_tensor(b, getattr(a, "dtype", None))
    return make_result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = _as_tensor(a, getattr(b, "dtype", None)), _as_tensor(b, getattr(a, "dtype", None))
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = _as_tensor(a, getattr(b, "dtype", None)), _as_tensor(b, getattr(a, "dtype", None))
    return make_result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def neg(a):
    return make_result(-a.data, (a,), lambda g: (-g,))


def square(a):
    return make_result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def relu(a):
    mask = a.data > 0
    return make_result(a.data * mask, (a,), lambda g: (g * mask,))


def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return make_result(np.asarray(out), (a,), _backward)


def tmean(a, axis=None, keepdims=False):
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape):
    original = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(original),))


def transpose(a, axes=None):
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def rearrange(a, pattern, **sizes):
    """
    einops rearrangement with gradient. Only pure permute/reshape patterns
    are supported; the backward pass applies the reversed pattern.
    """
    left, right = (side.strip() for side in pattern.split("->"))
    out = _rearrange(a.data, pattern, **sizes)
    # the inverse needs every axis that was composed on the left side
    axis_sizes = {**_single_axis_sizes(left, a.shape), **sizes}

    def _backward(g):
        return (_rearrange(g, f"{right} -> {left}", **axis_sizes),)

    return make_result(np.ascontiguousarray(out), (a,), _backward)


def _single_axis_sizes(side, shape):
    groups = []
    current = None
    for token in side.replace("(", " ( ").replace(")", " ) ").split():
        if token == "(":
            current = []
        elif token == ")":
            groups.append(current)
            current = None
        elif current is not None:
            current.append(token)
        else:
            groups.append([token])
    return {group[0]: length for group, length in zip(groups, shape) if len(group) == 1}


def matmul(a, b):
    """Batched matrix product over the last two axes."""
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.shape} @ {b.shape}", axis="inner"
        )

    def _backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return make_result(np.matmul(a.data, b.data), (a, b), _backward)


def concat(tensors, axis=1):
    """Concatenate tensors along ``axis`` (the channel axis by default)."""
    tensors = list(tensors)
    reference = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(reference):
            raise ShapeError("concat inputs differ in rank", axis="rank")
        for k, (x, y) in enumerate(zip(t.shape, reference)):
            if k != axis % len(reference) and x != y:
                raise ShapeError(f"concat inputs differ: {t.shape} vs {reference}", axis=str(k))
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), _backward)


def concat_channels(tensors):
    return concat(tensors, axis=1)


def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (a,), _backward)


def softmax_rows(a):
    """Row-wise softmax of a matrix (or a batch of matrices)."""
    if a.ndim < 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {a.shape}", axis="rank")
    return softmax(a, axis=-1)
