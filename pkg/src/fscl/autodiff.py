"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

Design rules: float64 everywhere, single-threaded deterministic reductions,
no broadcasting beyond what the networks in this package need (same-shape
elementwise, scalar-tensor against anything). Every op records a backward
closure; `backward()` runs them in reverse topological order.
"""

import math

import numpy as np

from .errors import DimensionError, UsageError


class Tensor:
    """Dense n-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.shape != ():
            raise UsageError(f"item: tensor has shape {self.data.shape}, expected scalar")
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __rsub__(self, other):
        return add(_as_tensor(other), -self)

    def __truediv__(self, scalar):
        if not isinstance(scalar, (int, float)):
            raise UsageError("truediv: only division by a python scalar is supported")
        return mul(self, 1.0 / scalar)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _reduce_to(g, shape):
    # collapse a broadcast gradient back to `shape` (scalar or full)
    if shape == ():
        return np.asarray(g.sum())
    return g


# -- elementwise and reductions -------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise DimensionError(f"add: shapes {a.shape} vs {b.shape}")
    data = a.data + b.data

    def backward_fn(g):
        _accum(a, _reduce_to(g, a.shape))
        _accum(b, _reduce_to(g, b.shape))

    return _make(data, (a, b), backward_fn)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise DimensionError(f"mul: shapes {a.shape} vs {b.shape}")
    data = a.data * b.data

    def backward_fn(g):
        _accum(a, _reduce_to(g * b.data, a.shape))
        _accum(b, _reduce_to(g * a.data, b.shape))

    return _make(data, (a, b), backward_fn)


def relu(x):
    mask = x.data > 0

    def backward_fn(g):
        _accum(x, g * mask)

    return _make(np.where(mask, x.data, 0.0), (x,), backward_fn)


def sigmoid(x):
    d = x.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def backward_fn(g):
        _accum(x, g * s * (1.0 - s))

    return _make(s, (x,), backward_fn)


def log(x):
    def backward_fn(g):
        _accum(x, g / x.data)

    return _make(np.log(x.data), (x,), backward_fn)


def exp(x):
    out_data = np.exp(x.data)

    def backward_fn(g):
        _accum(x, g * out_data)

    return _make(out_data, (x,), backward_fn)


def clamp(x, lo=None, hi=None):
    """Elementwise clip; gradient passes only where the input was inside [lo, hi]."""
    data = np.clip(x.data, lo, hi)
    mask = np.ones_like(x.data, dtype=bool)
    if lo is not None:
        mask &= x.data >= lo
    if hi is not None:
        mask &= x.data <= hi

    def backward_fn(g):
        _accum(x, g * mask)

    return _make(data, (x,), backward_fn)


def tsum(x):
    def backward_fn(g):
        _accum(x, np.broadcast_to(g, x.data.shape).copy())

    return _make(x.data.sum(), (x,), backward_fn)


def tmean(x):
    n = x.data.size

    def backward_fn(g):
        _accum(x, np.broadcast_to(g / n, x.data.shape).copy())

    return _make(x.data.mean(), (x,), backward_fn)


def pick(x, index):
    """Select one entry of a 1-D tensor as a scalar."""
    if x.data.ndim != 1:
        raise DimensionError(f"pick: expected 1-D tensor, got shape {x.shape}")
    if not 0 <= index < x.data.shape[0]:
        raise UsageError(f"pick: index {index} out of range for length {x.data.shape[0]}")

    def backward_fn(g):
        full = np.zeros_like(x.data)
        full[index] = g
        _accum(x, full)

    return _make(x.data[index], (x,), backward_fn)


def reshape(x, shape):
    data = x.data.reshape(shape)

    def backward_fn(g):
        _accum(x, g.reshape(x.data.shape))

    return _make(data, (x,), backward_fn)


def concat(tensors):
    """Concatenate 1-D tensors into one 1-D tensor."""
    if not tensors:
        raise UsageError("concat: empty tensor list")
    for t in tensors:
        if t.data.ndim != 1:
            raise DimensionError(f"concat: expected 1-D tensors, got shape {t.shape}")
    data = np.concatenate([t.data for t in tensors])
    offsets = np.cumsum([0] + [t.data.shape[0] for t in tensors])

    def backward_fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            _accum(t, g[lo:hi])

    return _make(data, tuple(tensors), backward_fn)


def stack_scalars(tensors):
    """Stack scalar tensors into a 1-D tensor of length len(tensors)."""
    if not tensors:
        raise UsageError("stack_scalars: empty tensor list")
    for t in tensors:
        if t.data.shape != ():
            raise DimensionError(f"stack_scalars: expected scalars, got shape {t.shape}")
    data = np.array([t.data for t in tensors])

    def backward_fn(g):
        for i, t in enumerate(tensors):
            _accum(t, np.asarray(g[i]))

    return _make(data, tuple(tensors), backward_fn)


# -- linear algebra and convolutions ---------------------------------------

def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim not in (1, 2):
        raise DimensionError(f"matmul: shapes {a.shape} vs {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} vs {b.shape}")
    if b.data.ndim == 1:
        # row-wise mul+sum keeps each output bit-identical when rows are
        # appended to `a` (BLAS gemv reblocks by size and does not)
        data = (a.data * b.data).sum(axis=1)

        def backward_fn(g):
            _accum(a, np.outer(g, b.data))
            _accum(b, a.data.T @ g)

        return _make(data, (a, b), backward_fn)
    data = a.data @ b.data

    def backward_fn(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(data, (a, b), backward_fn)


def conv2d(x, kernel, bias=None):
    """2-D convolution, stride 1, zero padding to keep H and W.

    x: (H, W, C_in); kernel: (kh, kw, C_in, C_out) with kh, kw odd;
    bias: optional (C_out,).
    """
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise DimensionError(f"conv2d: shapes {x.shape} vs {kernel.shape}")
    h, w, cin = x.data.shape
    kh, kw, kcin, cout = kernel.data.shape
    if kcin != cin:
        raise DimensionError(f"conv2d: shapes {x.shape} vs {kernel.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise UsageError(f"conv2d: kernel sizes must be odd, got ({kh}, {kw})")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((ph, ph), (pw, pw), (0, 0)))
    out = np.zeros((h, w, cout))
    for i in range(kh):
        for j in range(kw):
            patch = xp[i:i + h, j:j + w, :].reshape(h * w, cin)
            out += (patch @ kernel.data[i, j]).reshape(h, w, cout)
    parents = [x, kernel]
    if bias is not None:
        if bias.data.shape != (cout,):
            raise DimensionError(f"conv2d: bias shape {bias.shape} vs C_out {cout}")
        out += bias.data
        parents.append(bias)

    def backward_fn(g):
        go = g.reshape(h * w, cout)
        dxp = np.zeros_like(xp)
        dk = np.zeros_like(kernel.data)
        for i in range(kh):
            for j in range(kw):
                patch = xp[i:i + h, j:j + w, :].reshape(h * w, cin)
                dk[i, j] = patch.T @ go
                dxp[i:i + h, j:j + w, :] += (go @ kernel.data[i, j].T).reshape(h, w, cin)
        _accum(x, dxp[ph:ph + h, pw:pw + w, :])
        _accum(kernel, dk)
        if bias is not None:
            _accum(bias, g.sum(axis=(0, 1)))

    return _make(out, tuple(parents), backward_fn)


def conv1d(x, kernel, bias=None):
    """1-D convolution, stride 1, zero padding to keep L.

    x: (L, C_in); kernel: (k, C_in, C_out) with k odd; bias: optional (C_out,).
    """
    if x.data.ndim != 2 or kernel.data.ndim != 3:
        raise DimensionError(f"conv1d: shapes {x.shape} vs {kernel.shape}")
    length, cin = x.data.shape
    k, kcin, cout = kernel.data.shape
    if kcin != cin:
        raise DimensionError(f"conv1d: shapes {x.shape} vs {kernel.shape}")
    if k % 2 == 0:
        raise UsageError(f"conv1d: kernel size must be odd, got {k}")
    p = k // 2
    xp = np.pad(x.data, ((p, p), (0, 0)))
    out = np.zeros((length, cout))
    for i in range(k):
        out += xp[i:i + length, :] @ kernel.data[i]
    parents = [x, kernel]
    if bias is not None:
        if bias.data.shape != (cout,):
            raise DimensionError(f"conv1d: bias shape {bias.shape} vs C_out {cout}")
        out += bias.data
        parents.append(bias)

    def backward_fn(g):
        dxp = np.zeros_like(xp)
        dk = np.zeros_like(kernel.data)
        for i in range(k):
            dk[i] = xp[i:i + length, :].T @ g
            dxp[i:i + length, :] += g @ kernel.data[i].T
        _accum(x, dxp[p:p + length, :])
        _accum(kernel, dk)
        if bias is not None:
            _accum(bias, g.sum(axis=0))

    return _make(out, tuple(parents), backward_fn)


def avg_pool2x(x):
    """2x average downsample of an (H, W, C) map; H and W must be even."""
    if x.data.ndim != 3:
        raise DimensionError(f"avg_pool2x: expected (H, W, C), got shape {x.shape}")
    h, w, c = x.data.shape
    if h % 2 or w % 2:
        raise DimensionError(f"avg_pool2x: H and W must be even, got shape {x.shape}")
    data = x.data.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))

    def backward_fn(g):
        dx = np.broadcast_to(g[:, None, :, None, :] * 0.25, (h // 2, 2, w // 2, 2, c))
        _accum(x, dx.reshape(h, w, c))

    return _make(data, (x,), backward_fn)


def global_average_pool(x):
    """Mean over all leading axes: (H, W, C) -> (C,), (L, C) -> (C,)."""
    if x.data.ndim < 2:
        raise DimensionError(f"global_average_pool: expected >=2 dims, got shape {x.shape}")
    axes = tuple(range(x.data.ndim - 1))
    n = 1
    for ax in axes:
        n *= x.data.shape[ax]
    data = x.data.mean(axis=axes)

    def backward_fn(g):
        _accum(x, np.broadcast_to(g / n, x.data.shape).copy())

    return _make(data, (x,), backward_fn)


# -- softmax family ---------------------------------------------------------

def stable_softmax(x):
    """Max-shifted softmax over the last axis of a 1-D or 2-D tensor."""
    if x.data.ndim == 1:
        shifted = x.data - x.data.max()
        e = np.exp(shifted)
        p = e / e.sum()

        def backward_fn(g):
            _accum(x, p * (g - np.dot(g, p)))

        return _make(p, (x,), backward_fn)
    if x.data.ndim == 2:
        shifted = x.data - x.data.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        p = e / e.sum(axis=1, keepdims=True)

        def backward_fn(g):
            _accum(x, p * (g - (g * p).sum(axis=1, keepdims=True)))

        return _make(p, (x,), backward_fn)
    raise DimensionError(f"stable_softmax: expected 1-D or 2-D tensor, got shape {x.shape}")


def log_sum_exp(x):
    """Max-shifted log(sum(exp(x))) of a 1-D tensor, returned as a scalar."""
    if x.data.ndim != 1:
        raise DimensionError(f"log_sum_exp: expected 1-D tensor, got shape {x.shape}")
    m = x.data.max()
    e = np.exp(x.data - m)
    data = m + math.log(e.sum())
    soft = e / e.sum()

    def backward_fn(g):
        _accum(x, soft * g)

    return _make(np.asarray(data), (x,), backward_fn)


# -- backward pass ----------------------------------------------------------

def backward(loss):
    """Reverse-mode pass from a scalar loss; fills .grad on every reachable
    tensor that requires grad."""
    if loss.data.shape != ():
        raise UsageError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    topo = []
    visited = set()
    stack = [loss]
    while stack:
        node = stack[-1]
        if id(node) in visited:
            stack.pop()
            continue
        pending = [p for p in node._parents if p.requires_grad and id(p) not in visited]
        if pending:
            stack.extend(pending)
        else:
            visited.add(id(node))
            topo.append(node)
            stack.pop()
    loss.grad = np.ones(())
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# -- parameters, modules, optimizer ------------------------------------------

class Parameter:
    """A trainable tensor plus its Adam state (first/second moments, step count)."""

    def __init__(self, data, name="param"):
        self.tensor = Tensor(data, requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.tensor.data)
        self.v = np.zeros_like(self.tensor.data)
        self.step = 0

    @property
    def data(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.tensor.data.shape}, step={self.step})"


class Module:
    """Base for networks: explicit named parameters, nothing more."""

    def named_parameters(self):
        raise NotImplementedError

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.tensor.grad = None


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update on `params`; clears grads afterwards."""
    if not lr > 0:
        raise UsageError(f"adam_step: lr must be positive, got {lr}")
    if not 0 < beta1 < 1 or not 0 < beta2 < 1:
        raise UsageError(f"adam_step: betas must be in (0, 1), got ({beta1}, {beta2})")
    if not eps > 0:
        raise UsageError(f"adam_step: eps must be positive, got {eps}")
    for p in params:
        if p.tensor.grad is None:
            raise UsageError(f"adam_step: parameter '{p.name}' has no gradient")
    for p in params:
        g = p.tensor.grad
        p.step += 1
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * g * g
        m_hat = p.m / (1.0 - beta1 ** p.step)
        v_hat = p.v / (1.0 - beta2 ** p.step)
        p.tensor.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.tensor.grad = None


def grad_check(loss_fn, params, eps=1e-4):
    """Max relative error between reverse-mode and central-difference gradients.

    `loss_fn` must rebuild the same scalar loss on every call (it is re-run
    with perturbed parameter entries). Returns
    max over entries of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if not 0 < eps <= 1e-2:
        raise UsageError(f"grad_check: eps must be in (0, 1e-2], got {eps}")
    for p in params:
        p.tensor.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.tensor.grad = None
    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.tensor.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = loss_fn().item()
            flat[i] = orig - eps
            f_minus = loss_fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(ana_flat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(ana_flat[i] - numeric) / denom)
    return worst


# -- init helpers -------------------------------------------------------------

def kaiming_uniform(rng, shape, fan_in):
    """Kaiming-uniform fan-in init: U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)
