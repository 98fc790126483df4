"""Dense float64 tensors with a closed op set and reverse-mode differentiation.

Every numeric module in the package is built on this one. A ``Tensor`` wraps a
row-major numpy float64 array; when its inputs are attached to a ``Tape`` the
op records a backward closure so ``backward()`` can accumulate gradients for
all watched parameters.

Broadcasting is deliberately restricted to two cases: identical shapes, and
matrix-vs-row-vector (a vector of length n combined with an (m, n) matrix).
Anything else raises ``ShapeError``.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class TapeError(RuntimeError):
    """Tape misuse: backward on a spent tape, or a non-scalar loss."""


class Tensor:
    __slots__ = ("data", "tape", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, tape=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = None
        self.requires_grad = False
        self.grad = None
        self._parents = ()
        self._backward = None
        if tape is not None:
            tape.watch(self)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.requires_grad else 'no'})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of executed ops; single-threaded, one backward pass only."""

    def __init__(self):
        self._nodes = []
        self._params = []
        self._spent = False

    def watch(self, t: Tensor) -> Tensor:
        t.tape = self
        t.requires_grad = True
        self._params.append(t)
        return t

    def parameter(self, data) -> Tensor:
        return self.watch(Tensor(data))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make_op(data, parents, backward) -> Tensor:
    """Create an op result, recording it on a tape when gradients are needed."""
    out = Tensor(data)
    tape = None
    for p in parents:
        if p.tape is not None:
            tape = p.tape
            break
    if tape is not None and any(p.requires_grad for p in parents):
        out.tape = tape
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        tape._nodes.append(out)
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def matmul(a, b) -> Tensor:
    """Matrix product; 1-D operands are treated as a row / column vector."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul needs 1-D/2-D operands, got {a.shape} @ {b.shape}")
    a2 = a.data if a.ndim == 2 else a.data[None, :]
    b2 = b.data if b.ndim == 2 else b.data[:, None]
    if a2.shape[1] != b2.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    c2 = a2 @ b2
    out_shape = []
    if a.ndim == 2:
        out_shape.append(c2.shape[0])
    if b.ndim == 2:
        out_shape.append(c2.shape[1])
    data = c2.reshape(out_shape)

    def backward(g):
        g2 = g.reshape(c2.shape)
        _accumulate(a, (g2 @ b2.T).reshape(a.shape))
        _accumulate(b, (a2.T @ g2).reshape(b.shape))

    return _make_op(data, (a, b), backward)


def _broadcast_kind(sa, sb):
    """Return 'same', 'a_vec' (a is the row vector) or 'b_vec'; else raise."""
    if sa == sb:
        return "same"
    if len(sa) == 1 and len(sb) == 2 and sb[1] == sa[0]:
        return "a_vec"
    if len(sb) == 1 and len(sa) == 2 and sa[1] == sb[0]:
        return "b_vec"
    raise ShapeError(f"unsupported broadcast between shapes {sa} and {sb}")


def _elementwise(a, b, fwd, da, db):
    a, b = _as_tensor(a), _as_tensor(b)
    kind = _broadcast_kind(a.shape, b.shape)
    data = fwd(a.data, b.data)

    def backward(g):
        ga = da(g, a.data, b.data)
        gb = db(g, a.data, b.data)
        if kind == "a_vec":
            ga = ga.sum(axis=0)
        elif kind == "b_vec":
            gb = gb.sum(axis=0)
        _accumulate(a, ga)
        _accumulate(b, gb)

    return _make_op(data, (a, b), backward)


def add(a, b) -> Tensor:
    return _elementwise(a, b, lambda x, y: x + y,
                        lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _elementwise(a, b, lambda x, y: x - y,
                        lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _elementwise(a, b, lambda x, y: x * y,
                        lambda g, x, y: g * np.broadcast_to(y, g.shape),
                        lambda g, x, y: g * np.broadcast_to(x, g.shape))


def scale(x, c: float) -> Tensor:
    x = _as_tensor(x)
    data = x.data * c

    def backward(g):
        _accumulate(x, g * c)

    return _make_op(data, (x,), backward)


def sigmoid(x) -> Tensor:
    """Elementwise logistic; computed branch-wise so large |x| never overflows."""
    x = _as_tensor(x)
    v = x.data
    data = np.empty_like(v)
    pos = v >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    data[~pos] = ev / (1.0 + ev)
    # keep the output strictly inside (0, 1) even when exp() underflows
    np.clip(data, np.finfo(np.float64).tiny, np.nextafter(1.0, 0.0), out=data)

    def backward(g):
        _accumulate(x, g * data * (1.0 - data))

    return _make_op(data, (x,), backward)


def tanh_op(x) -> Tensor:
    x = _as_tensor(x)
    data = np.tanh(x.data)
    # strictly inside (-1, 1); np.tanh saturates to +/-1.0 near |x| ~ 19
    np.clip(data, np.nextafter(-1.0, 0.0), np.nextafter(1.0, 0.0), out=data)

    def backward(g):
        _accumulate(x, g * (1.0 - data * data))

    return _make_op(data, (x,), backward)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    data = np.maximum(x.data, 0.0)

    def backward(g):
        _accumulate(x, g * (x.data > 0))

    return _make_op(data, (x,), backward)


def _check_axis(x, axis):
    if not (-x.ndim <= axis < x.ndim):
        raise ShapeError(f"axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def softmax_axis(x, axis: int) -> Tensor:
    """Max-shifted softmax along one axis; slices sum to 1."""
    x = _as_tensor(x)
    axis = _check_axis(x, axis)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(x, data * (g - dot))

    return _make_op(data, (x,), backward)


def log_softmax_axis(x, axis: int) -> Tensor:
    x = _as_tensor(x)
    axis = _check_axis(x, axis)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse
    soft = np.exp(data)

    def backward(g):
        _accumulate(x, g - soft * g.sum(axis=axis, keepdims=True))

    return _make_op(data, (x,), backward)


def concat(a, b, axis: int = 0) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != b.ndim:
        raise ShapeError(f"concat rank mismatch: {a.shape} vs {b.shape}")
    axis = _check_axis(a, axis)
    try:
        data = np.concatenate([a.data, b.data], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat shapes incompatible: {a.shape} vs {b.shape}") from exc
    split = a.shape[axis]

    def backward(g):
        ga, gb = np.split(g, [split], axis=axis)
        _accumulate(a, ga)
        _accumulate(b, gb)

    return _make_op(data, (a, b), backward)


def sum_axis(x, axis=None) -> Tensor:
    """Sum along one axis, or over all elements (axis=None -> scalar)."""
    x = _as_tensor(x)
    if axis is not None:
        axis = _check_axis(x, axis)
    data = x.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            _accumulate(x, np.full_like(x.data, float(g)))
        else:
            _accumulate(x, np.broadcast_to(np.expand_dims(g, axis), x.shape).copy())

    return _make_op(data, (x,), backward)


def mean_rows(x) -> Tensor:
    """Mean over axis 0 of a matrix."""
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"mean_rows needs a matrix, got shape {x.shape}")
    return scale(sum_axis(x, axis=0), 1.0 / x.shape[0])


def embedding_lookup(table, idx: int) -> Tensor:
    table = _as_tensor(table)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    if not 0 <= idx < table.shape[0]:
        raise ShapeError(f"embedding id {idx} out of range for table {table.shape}")
    data = table.data[idx].copy()

    def backward(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            table.grad[idx] += g

    return _make_op(data, (table,), backward)


def pick(x, idx: int) -> Tensor:
    """Select one element of a vector as a scalar tensor."""
    x = _as_tensor(x)
    if x.ndim != 1:
        raise ShapeError(f"pick needs a vector, got shape {x.shape}")
    if not 0 <= idx < x.shape[0]:
        raise ShapeError(f"pick index {idx} out of range for shape {x.shape}")
    data = np.asarray(x.data[idx])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[idx] = float(g)
        _accumulate(x, gx)

    return _make_op(data, (x,), backward)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from exc

    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    return _make_op(data, (x,), backward)


def conv2d_valid(x, kernels, bias, stride: int = 1) -> Tensor:
    """Valid (no padding) 2-D convolution.

    x: (H, W, C) input, kernels: (K, kh, kw, C), bias: (K,).
    Output: (H', W', K) with H' = (H - kh) // stride + 1.
    """
    x, kernels, bias = _as_tensor(x), _as_tensor(kernels), _as_tensor(bias)
    if x.ndim != 3 or kernels.ndim != 4 or bias.ndim != 1:
        raise ShapeError(
            f"conv2d_valid ranks: x {x.shape}, kernels {kernels.shape}, bias {bias.shape}")
    h, w, c = x.shape
    k, kh, kw, kc = kernels.shape
    if kc != c:
        raise ShapeError(f"kernel channels {kc} != input channels {c}")
    if bias.shape[0] != k:
        raise ShapeError(f"bias length {bias.shape[0]} != kernel count {k}")
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"kernel {kh}x{kw} too large for input {h}x{w}")

    kmat = kernels.data.reshape(k, -1).T  # (kh*kw*c, k)
    data = np.empty((oh, ow, k))
    for i in range(oh):
        for j in range(ow):
            si, sj = i * stride, j * stride
            patch = x.data[si:si + kh, sj:sj + kw, :].reshape(-1)
            data[i, j] = patch @ kmat + bias.data

    def backward(g):
        gx = np.zeros_like(x.data)
        gk = np.zeros_like(kernels.data)
        gb = g.sum(axis=(0, 1))
        for i in range(oh):
            for j in range(ow):
                si, sj = i * stride, j * stride
                patch = x.data[si:si + kh, sj:sj + kw, :]
                for kk in range(k):
                    gk[kk] += g[i, j, kk] * patch
                    gx[si:si + kh, sj:sj + kw, :] += g[i, j, kk] * kernels.data[kk]
        _accumulate(x, gx)
        _accumulate(kernels, gk)
        _accumulate(bias, gb)

    return _make_op(data, (x, kernels, bias), backward)


def backward(tape: Tape, loss: Tensor) -> dict:
    """Run reverse-mode accumulation from a scalar loss.

    Returns a map from each watched parameter to its gradient array (also left
    on ``param.grad``). A tape can only be walked once; a second call raises.
    """
    if tape._spent:
        raise TapeError("backward() already ran on this tape")
    if loss.data.size != 1:
        raise TapeError(f"loss must be scalar, got shape {loss.shape}")
    if loss.tape is not tape:
        raise TapeError("loss was not computed on this tape")
    tape._spent = True
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape._nodes):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad)
    grads = {}
    for p in tape._params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        grads[id(p)] = p.grad
    return grads
