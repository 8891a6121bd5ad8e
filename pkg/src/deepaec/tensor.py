"""Dense tensors with reverse-mode automatic differentiation.

Covers exactly the operations the mask network needs: dilated 2-D
convolution, per-channel batch normalization, leaky ReLU, channel
concatenation/slicing, and the elementwise/reduction arithmetic the loss
functions are built from.  Arrays are contiguous row-major float32 or
float64 buffers; ops never hand out views of mutable graph data, so
gradient accumulation cannot alias.

No general broadcasting: binary ops accept two tensors of identical shape
or a tensor and a python scalar.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import InvalidArgumentError

_FLOAT_DTYPES = (np.float32, np.float64)


def _as_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float64)
    return np.ascontiguousarray(arr)


class Tensor:
    """A node in a reverse-mode autodiff graph wrapping a numpy array.

    The constructor copies its input by default so no two tensors alias
    one buffer; ops building nodes from freshly computed arrays skip the
    copy via make_op.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, dtype=None, copy=True):
        arr = _as_array(data, dtype)
        if copy and arr is data:
            arr = arr.copy()
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)  # constructor copies

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse-mode accumulation from a scalar loss.

        Each call computes a fresh pass over the graph and adds the result
        onto any gradients already present, so repeated calls without a
        reset accumulate additively.
        """
        if self.data.size != 1:
            raise InvalidArgumentError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        stashed = [node.grad for node in topo]
        for node in topo:
            node.grad = None
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
        for node, old in zip(topo, stashed):
            if old is not None:
                if node.grad is None:
                    node.grad = old
                else:
                    node.grad += old

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def make_op(data, parents, backward_fn):
    """Build a graph node from already-computed data (taken without copy).

    ``backward_fn(g)`` must accumulate into each parent via
    ``parent._accumulate``.  The node requires grad iff any parent does;
    otherwise the backward function is dropped and the node is a constant.
    """
    out = Tensor(data, copy=False)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _coerce_pair(a, b):
    """Validate a binary op's operands; returns (a, b, b_is_scalar)."""
    if isinstance(b, Tensor):
        if a.data.shape != b.data.shape:
            raise InvalidArgumentError(
                f"shape mismatch {a.data.shape} vs {b.data.shape} "
                "(no broadcasting between tensors)"
            )
        return a, b, False
    if isinstance(b, (int, float, np.floating, np.integer)):
        return a, float(b), True
    raise InvalidArgumentError(f"unsupported operand type {type(b)!r}")


def add(a, b):
    a, b, scalar = _coerce_pair(a, b)
    if scalar:
        def bw(g, a=a):
            if a.requires_grad:
                a._accumulate(g)
        return make_op(a.data + b, (a,), bw)

    def bw(g, a=a, b=b):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)
    return make_op(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b, scalar = _coerce_pair(a, b)
    if scalar:
        def bw(g, a=a):
            if a.requires_grad:
                a._accumulate(g)
        return make_op(a.data - b, (a,), bw)

    def bw(g, a=a, b=b):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)
    return make_op(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b, scalar = _coerce_pair(a, b)
    if scalar:
        def bw(g, a=a, c=b):
            if a.requires_grad:
                a._accumulate(g * c)
        return make_op(a.data * b, (a,), bw)

    def bw(g, a=a, b=b):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)
    return make_op(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b, scalar = _coerce_pair(a, b)
    if scalar:
        return mul(a, 1.0 / b)

    def bw(g, a=a, b=b):
        if a.requires_grad:
            a._accumulate(g / b.data)
        if b.requires_grad:
            b._accumulate(-g * a.data / (b.data * b.data))
    return make_op(a.data / b.data, (a, b), bw)


def neg(a):
    def bw(g, a=a):
        if a.requires_grad:
            a._accumulate(-g)
    return make_op(-a.data, (a,), bw)


def tsum(a):
    def bw(g, a=a):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, g.reshape(-1)[0]))
    return make_op(a.data.sum(), (a,), bw)


def mean(a):
    return mul(tsum(a), 1.0 / a.data.size)


def sub_mean(a):
    """y = a - mean(a); gradient is g - mean(g)."""
    def bw(g, a=a):
        if a.requires_grad:
            a._accumulate(g - g.mean())
    return make_op(a.data - a.data.mean(), (a,), bw)


def log(a):
    """Natural logarithm, elementwise."""
    def bw(g, a=a):
        if a.requires_grad:
            a._accumulate(g / a.data)
    return make_op(np.log(a.data), (a,), bw)


def leaky_relu(a, slope=0.01):
    """y = x for x >= 0 else slope*x; the subgradient at 0 is 1."""
    if not (0.0 < slope < 1.0):
        raise InvalidArgumentError(f"leaky_relu slope must be in (0,1), got {slope}")
    mask = np.where(a.data >= 0, 1.0, slope).astype(a.data.dtype)

    def bw(g, a=a, mask=mask):
        if a.requires_grad:
            a._accumulate(g * mask)
    return make_op(a.data * mask, (a,), bw)


def relu(a):
    """Positive part, elementwise (used by the asymmetric spectral penalty)."""
    mask = (a.data > 0).astype(a.data.dtype)

    def bw(g, a=a, mask=mask):
        if a.requires_grad:
            a._accumulate(g * mask)
    return make_op(a.data * mask, (a,), bw)


def reshape(a, shape):
    shape = tuple(shape)

    def bw(g, a=a):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))
    return make_op(a.data.reshape(shape).copy(), (a,), bw)


def concat_channels(xs):
    """Concatenate [C_i, F, T] tensors along the channel axis."""
    if not xs:
        raise InvalidArgumentError("concat_channels needs at least one tensor")
    spatial = xs[0].data.shape[1:]
    for x in xs:
        if x.data.ndim != 3:
            raise InvalidArgumentError("concat_channels expects [C, F, T] tensors")
        if x.data.shape[1:] != spatial:
            raise InvalidArgumentError(
                f"spatial mismatch {x.data.shape[1:]} vs {spatial}"
            )
    if len(xs) == 1:
        x = xs[0]

        def bw(g, x=x):
            if x.requires_grad:
                x._accumulate(g)
        return make_op(x.data.copy(), (x,), bw)

    sizes = [x.data.shape[0] for x in xs]
    offsets = np.cumsum([0] + sizes)

    def bw(g, xs=tuple(xs), offsets=offsets):
        for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            if x.requires_grad:
                x._accumulate(g[lo:hi])
    return make_op(np.concatenate([x.data for x in xs], axis=0), (*xs,), bw)


def channel_slice(a, lo, hi):
    """Copy channels [lo, hi) of a [C, F, T] tensor."""
    if a.data.ndim != 3:
        raise InvalidArgumentError("channel_slice expects a [C, F, T] tensor")
    C = a.data.shape[0]
    if not (0 <= lo < hi <= C):
        raise InvalidArgumentError(f"slice [{lo},{hi}) out of range for C={C}")

    def bw(g, a=a, lo=lo, hi=hi):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[lo:hi] = g
            a._accumulate(full)
    return make_op(a.data[lo:hi].copy(), (a,), bw)


def linear_bins(w, a):
    """y[b, k] = sum_f w[b, f] * a[f, k] for a fixed (non-trainable) matrix w."""
    w = np.asarray(w, dtype=a.data.dtype)
    if a.data.ndim != 2 or w.ndim != 2 or w.shape[1] != a.data.shape[0]:
        raise InvalidArgumentError(
            f"linear_bins shapes incompatible: {w.shape} @ {a.data.shape}"
        )

    def bw(g, a=a, w=w):
        if a.requires_grad:
            a._accumulate(w.T @ g)
    return make_op(w @ a.data, (a,), bw)


# -- convolution ------------------------------------------------------------


@dataclass(frozen=True)
class ConvSpec:
    """Static description of one dilated 2-D convolution."""

    in_channels: int
    out_channels: int
    kernel: tuple
    dilation: tuple = (1, 1)
    padding: tuple = (0, 0)
    bias: bool = True

    def __post_init__(self):
        for name in ("in_channels", "out_channels"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1")
        if min(self.kernel) < 1 or min(self.dilation) < 1:
            raise InvalidArgumentError("kernel extents and dilations must be >= 1")
        if min(self.padding) < 0:
            raise InvalidArgumentError("padding must be >= 0")

    def out_extent(self, in_extent):
        fo = in_extent[0] + 2 * self.padding[0] - self.dilation[0] * (self.kernel[0] - 1)
        to = in_extent[1] + 2 * self.padding[1] - self.dilation[1] * (self.kernel[1] - 1)
        if fo < 1 or to < 1:
            raise InvalidArgumentError(
                f"convolution output extent ({fo}, {to}) < 1 for input {in_extent}"
            )
        return fo, to

    def weight_count(self):
        n = self.in_channels * self.out_channels * self.kernel[0] * self.kernel[1]
        return n + (self.out_channels if self.bias else 0)


def conv2d(x, spec, weights, bias=None):
    """Dilated cross-correlation with zero padding over a [C, F, T] tensor.

    Differentiable w.r.t. x, weights and bias; the heavy lifting is
    dispatched to the active kernel backend.
    """
    if x.data.ndim != 3:
        raise InvalidArgumentError(f"conv2d input must be [C, F, T], got {x.data.shape}")
    if x.data.shape[0] != spec.in_channels:
        raise InvalidArgumentError(
            f"input has {x.data.shape[0]} channels, spec expects {spec.in_channels}"
        )
    wshape = (spec.out_channels, spec.in_channels, spec.kernel[0], spec.kernel[1])
    if weights.data.shape != wshape:
        raise InvalidArgumentError(
            f"weights shaped {weights.data.shape}, expected {wshape}"
        )
    if bias is not None and bias.data.shape != (spec.out_channels,):
        raise InvalidArgumentError(
            f"bias shaped {bias.data.shape}, expected ({spec.out_channels},)"
        )
    spec.out_extent(x.data.shape[1:])

    y = backend.conv_forward(x.data, weights.data, spec.padding, spec.dilation)
    if bias is not None:
        y = y + bias.data[:, None, None]

    parents = (x, weights) if bias is None else (x, weights, bias)

    def bw(g, x=x, weights=weights, bias=bias, spec=spec):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            x._accumulate(
                backend.conv_backward_input(
                    g, weights.data, x.data.shape, spec.padding, spec.dilation
                )
            )
        if weights.requires_grad:
            weights._accumulate(
                backend.conv_backward_weights(
                    g, x.data, spec.kernel, spec.padding, spec.dilation
                )
            )
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(1, 2)))
    return make_op(y, parents, bw)


# -- batch normalization ------------------------------------------------------


class RunningStats:
    """Exponential-moving-average channel statistics owned by one BN layer."""

    def __init__(self, channels, dtype=np.float64):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)


def batch_norm(x, gamma, beta, stats, mode, eps=1e-5, momentum=0.1):
    """Per-channel normalization of a [C, F, T] tensor.

    Train mode normalizes with the batch statistics over (F, T) and
    updates ``stats`` in place via an exponential moving average; eval
    mode applies the frozen running statistics, which makes the op a
    deterministic affine map of the input.
    """
    if eps <= 0:
        raise InvalidArgumentError(f"batch_norm eps must be > 0, got {eps}")
    if mode not in ("train", "eval"):
        raise InvalidArgumentError(f"batch_norm mode must be train|eval, got {mode!r}")
    if x.data.ndim != 3:
        raise InvalidArgumentError(f"batch_norm input must be [C, F, T], got {x.data.shape}")
    C = x.data.shape[0]
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise InvalidArgumentError("gamma/beta must be 1-D of length C")

    if mode == "train":
        mu = x.data.mean(axis=(1, 2))
        var = x.data.var(axis=(1, 2))
        stats.mean[:] = (1.0 - momentum) * stats.mean + momentum * mu
        stats.var[:] = (1.0 - momentum) * stats.var + momentum * var
    else:
        mu = stats.mean.astype(x.data.dtype)
        var = stats.var.astype(x.data.dtype)

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[:, None, None]) * inv[:, None, None]
    y = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

    def bw(g, x=x, gamma=gamma, beta=beta, xhat=xhat, inv=inv, mode=mode):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=(1, 2)))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=(1, 2)))
        if x.requires_grad:
            gxhat = g * gamma.data[:, None, None]
            if mode == "eval":
                x._accumulate(gxhat * inv[:, None, None])
            else:
                n = x.data.shape[1] * x.data.shape[2]
                s1 = gxhat.sum(axis=(1, 2), keepdims=True)
                s2 = (gxhat * xhat).sum(axis=(1, 2), keepdims=True)
                gx = (gxhat - s1 / n - xhat * s2 / n) * inv[:, None, None]
                x._accumulate(gx)
    return make_op(y, (x, gamma, beta), bw)


# -- verification -------------------------------------------------------------


def grad_check(f, x, h=1e-5, sample=None, seed=0):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a Tensor to a scalar Tensor.  All elements of ``x`` are
    probed unless ``sample`` limits the check to that many randomly chosen
    (seeded) positions, which keeps large-graph checks affordable.
    """
    if h <= 0:
        raise InvalidArgumentError("grad_check step h must be > 0")
    base = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    probe = Tensor(base.copy(), requires_grad=True)
    out = f(probe)
    out.backward()
    analytic = probe.grad.reshape(-1).copy()

    n = base.size
    if sample is not None and sample < n:
        rng = np.random.default_rng(seed)
        idxs = rng.choice(n, size=sample, replace=False)
    else:
        idxs = range(n)

    flat = base.reshape(-1)
    worst = 0.0
    for i in idxs:
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(base)).item()
        flat[i] = orig - h
        fm = f(Tensor(base)).item()
        flat[i] = orig
        cd = (fp - fm) / (2.0 * h)
        a = analytic[i]
        err = abs(a - cd) / max(abs(a), abs(cd), 1e-12)
        worst = max(worst, err)
    return worst
