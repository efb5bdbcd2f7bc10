"""Dense float64 tensor engine with reverse-mode differentiation.

Every operation records a backward closure on the output node; calling
``backward()`` on a scalar loss walks the tape in reverse topological order
and accumulates gradients into every leaf that has ``requires_grad`` set.
All computation is sequential numpy, so results are bitwise reproducible
for a fixed seed. Every primitive checks its output for NaN/Inf and fails
loudly instead of propagating.
"""

import math
from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Shape mismatch; carries the offending axis when known."""

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class NonFiniteError(ArithmeticError):
    """A primitive produced NaN or Inf; carries the primitive's name."""

    def __init__(self, op, message=None):
        super().__init__(message or f"non-finite values produced by '{op}'")
        self.op = op


class GraphError(RuntimeError):
    """Malformed autodiff graph (cycle, non-scalar backward, ...)."""


@dataclass(frozen=True)
class ConvParams:
    """Convolution hyperparameters: filter count, square kernel side, stride, padding."""

    filters: int
    kernel: int
    stride: int
    padding: int = 0

    def __post_init__(self):
        if self.filters < 1:
            raise ValueError(f"filters must be positive, got {self.filters}")
        if self.kernel < 1:
            raise ValueError(f"kernel must be positive, got {self.kernel}")
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(op)


class Tensor:
    """A dense float64 array plus optional gradient state.

    Rank-4 (batch, channel, height, width) is the carrier for all network
    data; lower ranks appear for similarity matrices and scalar losses.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        """A new leaf sharing this tensor's values, cut off from the tape."""
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._backward = None
        t._op = "detach"
        return t

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self._op!r})"

    # -- arithmetic ----------------------------------------------------

    def _binary_shapes(self, other, op):
        if self.data.shape != other.data.shape:
            for ax, (a, b) in enumerate(zip(self.data.shape, other.data.shape)):
                if a != b:
                    raise DimensionError(
                        f"{op}: operand extents differ on axis {ax}: {a} vs {b}", axis=ax
                    )
            raise DimensionError(
                f"{op}: operand ranks differ: {self.data.shape} vs {other.data.shape}"
            )

    def __add__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(np.full_like(self.data, float(other)))
        self._binary_shapes(other, "add")

        def backward(g):
            _accum(self, g)
            _accum(other, g)

        return _from_op(self.data + other.data, (self, other), backward, "add")

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            _accum(self, -g)

        return _from_op(-self.data, (self,), backward, "neg")

    def __sub__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(np.full_like(self.data, float(other)))
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Tensor):
            c = float(other)

            def backward_scalar(g):
                _accum(self, g * c)

            return _from_op(self.data * c, (self,), backward_scalar, "mul")
        self._binary_shapes(other, "mul")

        def backward(g):
            _accum(self, g * other.data)
            _accum(other, g * self.data)

        return _from_op(self.data * other.data, (self, other), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * other ** -1.0
        return self * (1.0 / float(other))

    def __pow__(self, exponent):
        c = float(exponent)

        def backward(g):
            with np.errstate(invalid="ignore", divide="ignore"):
                d = c * self.data ** (c - 1.0)
            _check_finite(d, "pow")
            _accum(self, g * d)

        with np.errstate(invalid="ignore", divide="ignore"):
            out = self.data ** c
        return _from_op(out, (self,), backward, "pow")

    def exp(self):
        with np.errstate(over="ignore"):
            out_data = np.exp(self.data)

        def backward(g):
            _accum(self, g * out_data)

        return _from_op(out_data, (self,), backward, "exp")

    def log(self):
        def backward(g):
            _accum(self, g / self.data)

        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.log(self.data)
        return _from_op(out, (self,), backward, "log")

    def sqrt(self):
        return self ** 0.5

    def sum(self, axis=None, keepdims=False):
        shape = self.data.shape

        def backward(g):
            if axis is None:
                _accum(self, np.broadcast_to(g, shape).copy())
            else:
                ge = g if keepdims else np.expand_dims(g, axis)
                _accum(self, np.broadcast_to(ge, shape).copy())

        return _from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward, "sum")

    def mean(self):
        return self.sum() * (1.0 / self.data.size)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape

        def backward(g):
            _accum(self, g.reshape(old))

        return _from_op(self.data.reshape(shape), (self,), backward, "reshape")

    def transpose(self):
        if self.data.ndim != 2:
            raise DimensionError(f"transpose expects a matrix, got shape {self.shape}")

        def backward(g):
            _accum(self, g.T)

        return _from_op(self.data.T.copy(), (self,), backward, "transpose")

    # -- autodiff ------------------------------------------------------

    def backward(self):
        """Populate gradients of every requires_grad leaf reachable from this scalar.

        Repeated calls accumulate into leaf gradients; intermediate node
        gradients are reset on every call.
        """
        if self.data.size != 1:
            raise GraphError(f"backward() requires a scalar loss, got shape {self.shape}")
        order = _toposort(self)
        for node in order:
            if node._parents:
                node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _from_op(data, parents, backward, op):
    _check_finite(data, op)
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = any(p.requires_grad for p in parents)
    t.grad = None
    if t.requires_grad:
        t._parents = tuple(parents)
        t._backward = backward
    else:
        t._parents = ()
        t._backward = None
    t._op = op
    return t


def _toposort(root):
    order = []
    visiting = set()
    done = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            visiting.discard(id(node))
            done.add(id(node))
            order.append(node)
            continue
        if id(node) in done:
            continue
        if id(node) in visiting:
            raise GraphError("cycle detected in the recorded graph")
        visiting.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in done:
                if id(p) in visiting:
                    raise GraphError("cycle detected in the recorded graph")
                stack.append((p, False))
    return order


# -- structured ops -----------------------------------------------------


def concat(tensors, axis):
    """Concatenate along one axis; all other extents must agree."""
    tensors = list(tensors)
    first = tensors[0].data.shape
    for t in tensors[1:]:
        if len(t.data.shape) != len(first):
            raise DimensionError("concat: operand ranks differ")
        for ax, (a, b) in enumerate(zip(first, t.data.shape)):
            if ax != axis and a != b:
                raise DimensionError(
                    f"concat: operand extents differ on axis {ax}: {a} vs {b}", axis=ax
                )
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _from_op(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat"
    )


def batch_slice(x, index):
    """Single-sample slice along axis 0, kept as a rank-preserving view copy."""
    if not 0 <= index < x.data.shape[0]:
        raise DimensionError(f"batch_slice: index {index} out of range for axis 0", axis=0)

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[index : index + 1] = g
            _accum(x, full)

    return _from_op(np.ascontiguousarray(x.data[index : index + 1]), (x,), backward, "batch_slice")


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects matrices")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: inner extents differ: {a.data.shape[1]} vs {b.data.shape[0]}", axis=1
        )

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _from_op(a.data @ b.data, (a, b), backward, "matmul")


def clamp(x, lo, hi):
    """Clip to [lo, hi]; gradient passes through inside the interval only."""
    inside = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        _accum(x, g * inside)

    return _from_op(np.clip(x.data, lo, hi), (x,), backward, "clamp")


_ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid")
LEAKY_SLOPE = 0.2


def activation(x, kind):
    """Elementwise nonlinearity. The (leaky) ReLU kink at 0 takes the negative-side slope."""
    if kind == "relu":
        pos = x.data > 0
        out = np.where(pos, x.data, 0.0)

        def backward(g):
            _accum(x, g * pos)

    elif kind == "leaky_relu":
        pos = x.data > 0
        out = np.where(pos, x.data, LEAKY_SLOPE * x.data)

        def backward(g):
            _accum(x, g * np.where(pos, 1.0, LEAKY_SLOPE))

    elif kind == "tanh":
        out = np.tanh(x.data)
        d = 1.0 - out * out

        def backward(g):
            _accum(x, g * d)

    elif kind == "sigmoid":
        out = 1.0 / (1.0 + np.exp(-x.data))
        d = out * (1.0 - out)

        def backward(g):
            _accum(x, g * d)

    else:
        raise ValueError(f"unknown activation kind {kind!r}, expected one of {_ACTIVATIONS}")
    return _from_op(out, (x,), backward, kind)


def _im2col(x, kernel, stride, padding):
    """(B,C,H,W) -> column matrix (B, C*k*k, out_h*out_w) of sliding windows."""
    b, c, _, _ = x.shape
    if padding > 0:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]
    out_h, out_w = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * kernel * kernel, out_h * out_w)
    return np.ascontiguousarray(cols), out_h, out_w


def _col2im(cols, x_shape, kernel, stride, padding, out_h, out_w):
    """Adjoint of _im2col: scatter-add columns back into an (B,C,H,W) array."""
    b, c, h, w = x_shape
    padded = np.zeros((b, c, h + 2 * padding, w + 2 * padding))
    cols6 = cols.reshape(b, c, kernel, kernel, out_h, out_w)
    for i in range(kernel):
        for j in range(kernel):
            padded[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += cols6[
                :, :, i, j
            ]
    if padding > 0:
        return padded[:, :, padding : padding + h, padding : padding + w]
    return padded


def conv2d(x, weights, bias, p):
    """2-D cross-correlation with stride and zero padding.

    weights: (filters, in_channels, kernel, kernel); bias: (filters,).
    Output spatial extent is floor((H + 2*padding - kernel)/stride) + 1.
    """
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d: input must be rank 4, got {x.shape}")
    f, cin, kh, kw = weights.data.shape
    if kh != p.kernel or kw != p.kernel:
        raise DimensionError(f"conv2d: weight kernel {kh}x{kw} vs ConvParams kernel {p.kernel}", axis=2)
    if f != p.filters:
        raise DimensionError(f"conv2d: weight filters {f} vs ConvParams filters {p.filters}", axis=0)
    if cin != x.data.shape[1]:
        raise DimensionError(
            f"conv2d: input channels (axis 1) = {x.data.shape[1]}, weights expect {cin}", axis=1
        )
    if bias.data.shape != (f,):
        raise DimensionError(f"conv2d: bias shape {bias.data.shape} vs ({f},)", axis=0)
    b, _, h, w = x.data.shape
    out_h = (h + 2 * p.padding - p.kernel) // p.stride + 1
    out_w = (w + 2 * p.padding - p.kernel) // p.stride + 1
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"conv2d: kernel {p.kernel} does not fit input {h}x{w}", axis=2)

    cols, out_h, out_w = _im2col(x.data, p.kernel, p.stride, p.padding)
    w_mat = weights.data.reshape(f, cin * p.kernel * p.kernel)
    out = np.matmul(w_mat[None], cols).reshape(b, f, out_h, out_w)
    out += bias.data.reshape(1, f, 1, 1)

    def backward(g):
        g_mat = g.reshape(b, f, out_h * out_w)
        if weights.requires_grad:
            _accum(weights, np.matmul(g_mat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weights.data.shape))
        if bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = np.matmul(w_mat.T[None], g_mat)
            _accum(x, _col2im(dcols, x.data.shape, p.kernel, p.stride, p.padding, out_h, out_w))

    return _from_op(out, (x, weights, bias), backward, "conv2d")


def transposed_conv2d(x, weights, bias, p):
    """Transposed convolution, the adjoint of conv2d with matched parameters.

    weights: (in_channels, filters, kernel, kernel); bias: (filters,).
    Output spatial extent is (H - 1)*stride - 2*padding + kernel, so
    kernel 4 / stride 2 / padding 1 exactly doubles the input.
    """
    if x.data.ndim != 4:
        raise DimensionError(f"transposed_conv2d: input must be rank 4, got {x.shape}")
    cin, f, kh, kw = weights.data.shape
    if kh != p.kernel or kw != p.kernel:
        raise DimensionError(
            f"transposed_conv2d: weight kernel {kh}x{kw} vs ConvParams kernel {p.kernel}", axis=2
        )
    if f != p.filters:
        raise DimensionError(
            f"transposed_conv2d: weight filters {f} vs ConvParams filters {p.filters}", axis=1
        )
    if cin != x.data.shape[1]:
        raise DimensionError(
            f"transposed_conv2d: input channels (axis 1) = {x.data.shape[1]}, weights expect {cin}",
            axis=1,
        )
    if bias.data.shape != (f,):
        raise DimensionError(f"transposed_conv2d: bias shape {bias.data.shape} vs ({f},)", axis=0)
    b, _, h, w = x.data.shape
    out_h = (h - 1) * p.stride - 2 * p.padding + p.kernel
    out_w = (w - 1) * p.stride - 2 * p.padding + p.kernel
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"transposed_conv2d: output extent would be {out_h}x{out_w}", axis=2)

    x_mat = x.data.reshape(b, cin, h * w)
    w_mat = weights.data.reshape(cin, f * p.kernel * p.kernel)
    cols = np.matmul(w_mat.T[None], x_mat)
    out = _col2im(cols, (b, f, out_h, out_w), p.kernel, p.stride, p.padding, h, w)
    out += bias.data.reshape(1, f, 1, 1)

    def backward(g):
        gcols, gh, gw = _im2col(g, p.kernel, p.stride, p.padding)
        if gh != h or gw != w:
            raise GraphError("transposed_conv2d backward produced inconsistent geometry")
        if x.requires_grad:
            _accum(x, np.matmul(w_mat[None], gcols).reshape(b, cin, h, w))
        if weights.requires_grad:
            _accum(
                weights,
                np.matmul(x_mat, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(weights.data.shape),
            )
        if bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3)))

    return _from_op(out, (x, weights, bias), backward, "transposed_conv2d")


def instance_norm(x, eps=1e-5):
    """Standardize each (batch, channel) plane to zero mean, unit variance."""
    if x.data.ndim != 4:
        raise DimensionError(f"instance_norm: input must be rank 4, got {x.shape}")
    if eps <= 0:
        raise ValueError(f"instance_norm: eps must be > 0, got {eps}")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    var = x.data.var(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def backward(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gxm = (g * xhat).mean(axis=(2, 3), keepdims=True)
        _accum(x, inv * (g - gm - xhat * gxm))

    return _from_op(xhat, (x,), backward, "instance_norm")


def weighted_sum(pairs):
    """Correctly-rounded scalar combination sum_i (coeff_i * tensor_i).

    The forward value uses exact summation (math.fsum), so documented
    closed-form totals hold to the last bit; the backward pass hands each
    term its coefficient.
    """
    coeffs = [float(c) for c, _ in pairs]
    terms = [t for _, t in pairs]
    for t in terms:
        if t.data.size != 1:
            raise DimensionError(f"weighted_sum expects scalar terms, got shape {t.shape}")
    value = math.fsum(c * float(t.data.reshape(())) for c, t in zip(coeffs, terms))

    def backward(g):
        for c, t in zip(coeffs, terms):
            _accum(t, (g * c).reshape(t.data.shape))

    return _from_op(np.asarray(value), tuple(terms), backward, "weighted_sum")


def grad_check(fn, inputs, step=1e-5, projection_seed=1234):
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps a list of tensors to a tensor; its output is reduced to a
    scalar with a fixed random projection so that every output element
    carries weight. Inputs are never mutated. The per-element relative
    error uses a 1e-3 floor in the denominator so that finite-difference
    noise on near-zero gradients is not misread as disagreement.
    """
    if step <= 0:
        raise ValueError(f"step must be > 0, got {step}")
    rng = np.random.default_rng(projection_seed)
    base = [np.array(t.data, dtype=np.float64) for t in inputs]
    proj = None

    def evaluate(arrays, with_grad):
        nonlocal proj
        leaves = [Tensor(a.copy(), requires_grad=with_grad) for a in arrays]
        out = fn(leaves)
        if proj is None:
            proj = rng.standard_normal(out.data.shape)
        if with_grad:
            loss = (out * Tensor(proj)).sum()
            loss.backward()
            return [
                lf.grad if lf.grad is not None else np.zeros_like(lf.data) for lf in leaves
            ]
        return float((out.data * proj).sum())

    analytic = evaluate(base, with_grad=True)
    max_rel = 0.0
    for i in range(len(base)):
        flat = base[i].reshape(-1)
        numeric = np.zeros_like(flat)
        for j in range(flat.size):
            arrays = [a.copy() for a in base]
            arrays[i].reshape(-1)[j] = flat[j] + step
            f_plus = evaluate(arrays, with_grad=False)
            arrays[i].reshape(-1)[j] = flat[j] - step
            f_minus = evaluate(arrays, with_grad=False)
            numeric[j] = (f_plus - f_minus) / (2.0 * step)
        a = analytic[i].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-3)
        rel = np.abs(a - numeric) / denom
        if rel.size:
            max_rel = max(max_rel, float(rel.max()))
    return max_rel
