"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation builds a node holding its inputs and a closure mapping the
output gradient to input gradients. ``Tensor.backward`` walks the recorded
graph once in reverse topological order and then releases it, so a graph can
be differentiated exactly once; the next forward pass builds a fresh one.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    ConfigurationError,
    ContractError,
    DimensionError,
    NotPositiveDefiniteError,
    NumericDomainError,
    SingularMatrixError,
)

SIGMOID_FLOOR = 1e-7


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents = ()
        self._backward = None
        self._op = ""
        self._consumed = False

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self._op or 'leaf'})"

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
    def T(self):
        return transpose(self)

    @property
    def is_leaf(self):
        return self._backward is None

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self):
        """Populate ``grad`` on every tensor of the graph that requires it."""
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise ContractError("graph was already differentiated; rebuild the forward pass")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any tensor requiring grad")

        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = node.grad + g
                continue
            # interior nodes keep their gradient too
            node.grad = g if node.grad is None else node.grad + g
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for node in order:
            if not node.is_leaf:
                node._consumed = True
                node._parents = ()
                node._backward = None

    # operator sugar; scalars and arrays become constants
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)


def tensor(data, requires_grad=False):
    """Build a leaf tensor owning a float64 copy of ``data``."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        if node._consumed:
            raise ContractError("graph was already differentiated; rebuild the forward pass")
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _node(data, parents, backward, op):
    out = Tensor(data)
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and reductions
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add",
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub",
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul",
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _node(
        out, (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def exp(a):
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    if np.any(a.data <= 0):
        bad = int(np.argmax((a.data <= 0).reshape(-1)))
        raise NumericDomainError(f"log of non-positive entry at flat index {bad}")
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sigmoid(a):
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a):
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def square(a):
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def clip(a, lo, hi):
    """Clamp values; gradient is zero where the clamp is active."""
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


def tsum(a, axis=None, keepdims=False):
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / float(count))


def frobenius_norm_sq(a):
    return tsum(square(a))


def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), backward, "softmax")


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a, shape):
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = np.argsort(axes)
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def take(a, index):
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _node(a.data[index], (a,), backward, "take")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat")


def broadcast_to(a, shape):
    return _node(
        np.broadcast_to(a.data, shape).copy(), (a,),
        lambda g: (_unbroadcast(g, a.shape),), "broadcast",
    )


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def cholesky_factor(a, symmetry_tol=1e-10):
    """Lower-triangular ``B`` with ``B @ B.T == a`` (plain ndarray routine)."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"cholesky needs a square matrix, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > symmetry_tol * scale:
        raise NotPositiveDefiniteError(-1, float("nan"))
    k = a.shape[0]
    low = np.zeros_like(a)
    for j in range(k):
        row = low[j, :j]
        pivot = a[j, j] - row @ row
        if not pivot > 0.0:
            raise NotPositiveDefiniteError(j, float(pivot))
        low[j, j] = math.sqrt(pivot)
        low[j + 1:, j] = (a[j + 1:, j] - low[j + 1:, :j] @ row) / low[j, j]
    return low


def cholesky(a):
    """Cholesky factor as a tensor.

    The factor is a constant of the graph: no gradient flows back into ``a``.
    The orthogonalization layer relies on exactly this treatment.
    """
    return Tensor(cholesky_factor(as_tensor(a).data))


def forward_substitute(low, rhs):
    """Solve ``low @ x = rhs`` for lower-triangular ``low``."""
    k = low.shape[0]
    x = np.empty_like(rhs, dtype=np.float64)
    for i in range(k):
        if low[i, i] == 0.0:
            raise SingularMatrixError(i)
        x[i] = (rhs[i] - low[i, :i] @ x[:i]) / low[i, i]
    return x


def back_substitute_transposed(low, rhs):
    """Solve ``low.T @ x = rhs`` for lower-triangular ``low``."""
    k = low.shape[0]
    x = np.empty_like(rhs, dtype=np.float64)
    for i in range(k - 1, -1, -1):
        if low[i, i] == 0.0:
            raise SingularMatrixError(i)
        x[i] = (rhs[i] - low[i + 1:, i] @ x[i + 1:]) / low[i, i]
    return x


def triangular_solve(low, rhs):
    """``x`` with ``low @ x = rhs``; differentiable in ``rhs``, ``low`` is constant."""
    low = as_tensor(low).data
    rhs = as_tensor(rhs)
    if low.ndim != 2 or low.shape[0] != low.shape[1]:
        raise DimensionError(f"triangular factor must be square, got {low.shape}")
    if rhs.shape[0] != low.shape[0]:
        raise DimensionError(f"rhs has {rhs.shape[0]} rows, factor has {low.shape[0]}")
    out = forward_substitute(low, rhs.data)
    return _node(out, (rhs,), lambda g: (back_substitute_transposed(low, g),), "trisolve")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _check_conv(stride, padding, kh, kw, h, w):
    if int(stride) != stride or stride < 1:
        raise ConfigurationError(f"stride must be a positive integer, got {stride}")
    if int(padding) != padding or padding < 0:
        raise ConfigurationError(f"padding must be a non-negative integer, got {padding}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ConfigurationError(f"kernel {kh}x{kw} exceeds padded input {h}x{w} (pad {padding})")


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _columns(x, kh, kw, stride, padding):
    # (b, oh, ow, c*kh*kw) patch matrix
    win = sliding_window_view(_pad(x, padding), (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, oh, ow = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh, ow, c * kh * kw)


def _conv_forward(x, kernel, stride, padding, cols=None):
    o = kernel.shape[0]
    if cols is None:
        cols = _columns(x, kernel.shape[2], kernel.shape[3], stride, padding)
    b, oh, ow, _ = cols.shape
    out = cols.reshape(-1, cols.shape[-1]) @ kernel.reshape(o, -1).T
    return out.reshape(b, oh, ow, o).transpose(0, 3, 1, 2)


def _conv_input_grad(g, kernel, stride, padding, in_shape):
    b, c, h, w = in_shape
    o, _, kh, kw = kernel.shape
    oh, ow = g.shape[2:]
    gcols = (g.transpose(0, 2, 3, 1).reshape(-1, o) @ kernel.reshape(o, -1))
    gcols = gcols.reshape(b, oh, ow, c, kh, kw)
    gp = np.zeros((b, c, h + 2 * padding, w + 2 * padding))
    for i in range(kh):
        for j in range(kw):
            gp[:, :, i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride] += (
                gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return gp[:, :, padding:padding + h, padding:padding + w]


def _conv_kernel_grad(x, g, kernel_shape, stride, padding, cols=None):
    o = kernel_shape[0]
    if cols is None:
        cols = _columns(x, kernel_shape[2], kernel_shape[3], stride, padding)
    gk = g.transpose(0, 2, 3, 1).reshape(-1, o).T @ cols.reshape(-1, cols.shape[-1])
    return gk.reshape(kernel_shape)


def conv2d(x, kernel, stride=1, padding=0):
    """Cross-correlation of ``x`` (b, c, h, w) with ``kernel`` (o, c, kh, kw)."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise DimensionError(f"conv2d shapes incompatible: input {x.shape}, kernel {kernel.shape}")
    _check_conv(stride, padding, kernel.shape[2], kernel.shape[3], x.shape[2], x.shape[3])
    cols = _columns(x.data, kernel.shape[2], kernel.shape[3], stride, padding)
    out = _conv_forward(x.data, kernel.data, stride, padding, cols)

    def backward(g):
        gx = _conv_input_grad(g, kernel.data, stride, padding, x.shape) if x.requires_grad else None
        gk = _conv_kernel_grad(x.data, g, kernel.shape, stride, padding, cols) if kernel.requires_grad else None
        return gx, gk

    return _node(out, (x, kernel), backward, "conv2d")


def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def conv2d_transpose(y, kernel, stride=1, padding=0, output_padding=0):
    """Adjoint of :func:`conv2d` with the same kernel, stride and padding.

    ``y`` is (b, o, oh, ow) and ``kernel`` is (o, c, kh, kw); the result is
    (b, c, h, w) with ``h = (oh - 1) * stride - 2 * padding + kh + output_padding``.
    ``output_padding`` picks among the input sizes that conv2d maps to ``oh``.
    """
    y, kernel = as_tensor(y), as_tensor(kernel)
    if y.ndim != 4 or kernel.ndim != 4 or y.shape[1] != kernel.shape[0]:
        raise DimensionError(f"conv2d_transpose shapes incompatible: input {y.shape}, kernel {kernel.shape}")
    if int(output_padding) != output_padding or not 0 <= output_padding < max(stride, 1):
        raise ConfigurationError(f"output_padding must lie in [0, stride), got {output_padding}")
    b, o, oh, ow = y.shape
    _, c, kh, kw = kernel.shape
    h = (oh - 1) * stride - 2 * padding + kh + output_padding
    w = (ow - 1) * stride - 2 * padding + kw + output_padding
    if h < 1 or w < 1:
        raise ConfigurationError(f"conv2d_transpose yields empty output {h}x{w}")
    _check_conv(stride, padding, kh, kw, h, w)
    out = _conv_input_grad(y.data, kernel.data, stride, padding, (b, c, h, w))

    def backward(g):
        cols = _columns(g, kh, kw, stride, padding)
        gy = _conv_forward(g, kernel.data, stride, padding, cols) if y.requires_grad else None
        gk = _conv_kernel_grad(g, y.data, kernel.shape, stride, padding, cols) if kernel.requires_grad else None
        return gy, gk

    return _node(out, (y, kernel), backward, "conv2d_transpose")


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------

class Rng:
    """Seeded random stream.

    Backed by numpy's PCG64 bit generator; the state can be exported as a
    float64 vector of 16-bit words so it fits the checkpoint container.
    """

    ALGORITHM = "PCG64"

    def __init__(self, seed=0):
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape, scale=1.0):
        return self.generator.standard_normal(shape) * scale

    def uniform(self, low, high, shape):
        return self.generator.uniform(low, high, shape)

    def integers(self, low, high, size=None):
        return self.generator.integers(low, high, size=size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def spawn(self, *key):
        """Independent child stream determined by this seed and ``key``."""
        seq = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in key]])
        child = Rng.__new__(Rng)
        child.seed = int(seq.generate_state(1, np.uint64)[0])
        child.generator = np.random.Generator(np.random.PCG64(seq))
        return child

    def get_state(self):
        st = self.generator.bit_generator.state
        words = (
            _to_words(st["state"]["state"], 8)
            + _to_words(st["state"]["inc"], 8)
            + [st["has_uint32"]]
            + _to_words(st["uinteger"], 2)
        )
        return np.array(words, dtype=np.float64)

    def set_state(self, words):
        w = [int(v) for v in np.asarray(words)]
        if len(w) != 19:
            raise ValueError(f"rng state must hold 19 words, got {len(w)}")
        self.generator.bit_generator.state = {
            "bit_generator": "PCG64",
            "state": {"state": _from_words(w[0:8]), "inc": _from_words(w[8:16])},
            "has_uint32": w[16],
            "uinteger": _from_words(w[17:19]),
        }


def _to_words(value, count):
    return [(value >> (16 * i)) & 0xFFFF for i in range(count)]


def _from_words(words):
    return sum(int(v) << (16 * i) for i, v in enumerate(words))
