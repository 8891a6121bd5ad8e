"""Complex-valued layer semantics built from paired real layers.

A pseudocomplex layer owns two real sublayers of identical architecture,
h_r and h_i, and combines them with the complex-multiplication pattern:

    out.re = h_r(z.re) - h_i(z.im)
    out.im = h_r(z.im) + h_i(z.re)

so a 1x1 convolution with scalar weights (a, b) acts exactly as
multiplication by the complex scalar a + jb.  Parameterless ops
(activations) and batch normalization act on the real and imaginary
parts independently.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import InvalidArgumentError
from .tensor import RunningStats, Tensor


@dataclass
class ComplexTensor:
    """A complex array held as two same-shaped real tensors."""

    re: Tensor
    im: Tensor

    def __post_init__(self):
        if self.re.data.shape != self.im.data.shape:
            raise InvalidArgumentError(
                f"re/im shape mismatch: {self.re.data.shape} vs {self.im.data.shape}"
            )

    @property
    def shape(self):
        return self.re.data.shape

    @classmethod
    def from_arrays(cls, re, im, requires_grad=False, dtype=None):
        return cls(
            Tensor(re, requires_grad=requires_grad, dtype=dtype),
            Tensor(im, requires_grad=requires_grad, dtype=dtype),
        )

    @classmethod
    def from_complex(cls, z, dtype=None):
        z = np.asarray(z)
        return cls.from_arrays(np.ascontiguousarray(z.real),
                               np.ascontiguousarray(z.imag), dtype=dtype)

    def to_complex(self):
        return self.re.data + 1j * self.im.data


def pc_apply(layer, z):
    """Apply a pseudocomplex layer (paired h_r/h_i sublayers) to z."""
    return ComplexTensor(
        T.sub(layer.h_r(z.re), layer.h_i(z.im)),
        T.add(layer.h_r(z.im), layer.h_i(z.re)),
    )


def pc_activation(h, z):
    """Apply an elementwise real function to both parts separately."""
    return ComplexTensor(h(z.re), h(z.im))


def pc_leaky_relu(z, slope=0.01):
    return pc_activation(lambda x: T.leaky_relu(x, slope), z)


class PCConv:
    """Pseudocomplex dilated convolution: two real conv sublayers."""

    def __init__(self, spec):
        self.spec = spec
        shape = (spec.out_channels, spec.in_channels, spec.kernel[0], spec.kernel[1])
        self.w_r = Tensor(np.zeros(shape), requires_grad=True)
        self.w_i = Tensor(np.zeros(shape), requires_grad=True)
        if spec.bias:
            self.b_r = Tensor(np.zeros(spec.out_channels), requires_grad=True)
            self.b_i = Tensor(np.zeros(spec.out_channels), requires_grad=True)
        else:
            self.b_r = self.b_i = None

    def h_r(self, x):
        return T.conv2d(x, self.spec, self.w_r, self.b_r)

    def h_i(self, x):
        return T.conv2d(x, self.spec, self.w_i, self.b_i)

    def forward(self, z):
        if z.shape[0] != self.spec.in_channels:
            raise InvalidArgumentError(
                f"input has {z.shape[0]} channels, layer expects {self.spec.in_channels}"
            )
        return pc_apply(self, z)

    def init(self, rng):
        fan_in = self.spec.in_channels * self.spec.kernel[0] * self.spec.kernel[1]
        bound = 1.0 / np.sqrt(fan_in)
        for w in (self.w_r, self.w_i):
            w.data[...] = rng.uniform(-bound, bound, size=w.data.shape)

    def named_params(self, prefix):
        yield prefix + ".w_r", self.w_r
        yield prefix + ".w_i", self.w_i
        if self.b_r is not None:
            yield prefix + ".b_r", self.b_r
            yield prefix + ".b_i", self.b_i

    def named_buffers(self, prefix):
        return ()


class PCBatchNorm:
    """Independent real batch normalization of the two parts."""

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma_r = Tensor(np.ones(channels), requires_grad=True)
        self.beta_r = Tensor(np.zeros(channels), requires_grad=True)
        self.gamma_i = Tensor(np.ones(channels), requires_grad=True)
        self.beta_i = Tensor(np.zeros(channels), requires_grad=True)
        self.stats_r = RunningStats(channels)
        self.stats_i = RunningStats(channels)

    def forward(self, z, mode):
        return ComplexTensor(
            T.batch_norm(z.re, self.gamma_r, self.beta_r, self.stats_r, mode,
                         self.eps, self.momentum),
            T.batch_norm(z.im, self.gamma_i, self.beta_i, self.stats_i, mode,
                         self.eps, self.momentum),
        )

    def init(self, rng):
        pass

    def named_params(self, prefix):
        yield prefix + ".gamma_r", self.gamma_r
        yield prefix + ".beta_r", self.beta_r
        yield prefix + ".gamma_i", self.gamma_i
        yield prefix + ".beta_i", self.beta_i

    def named_buffers(self, prefix):
        yield prefix + ".rmean_r", self.stats_r.mean
        yield prefix + ".rvar_r", self.stats_r.var
        yield prefix + ".rmean_i", self.stats_i.mean
        yield prefix + ".rvar_i", self.stats_i.var


def pc_batch_norm(z, bn, mode):
    return bn.forward(z, mode)


def count_params(module):
    """Total trainable real scalars in a layer or network."""
    if module is None:
        return 0
    return sum(p.data.size for _, p in module.named_params(""))
