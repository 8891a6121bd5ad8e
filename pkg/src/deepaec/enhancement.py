"""Input stacking, complex mask application, and the end-to-end enhance
pipeline: stft -> stack -> network -> mask -> istft.

Masks are unbounded complex TF matrices.  The dual form

    S_hat = A o (P - B o Q)

subtracts a masked copy of the loopback before the enhancement mask; with
B = 0 it reduces exactly to single masking S_hat = A o P.  No delay
compensation or gain adjustment is applied anywhere in the pipeline.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import dsp
from . import tensor as T
from .complexnn import ComplexTensor
from .errors import InvalidArgumentError
from .tensor import Tensor


@dataclass
class MaskPair:
    """Enhancement mask A and optional echo-suppression mask B."""

    A: ComplexTensor
    B: Optional[ComplexTensor] = None

    def __post_init__(self):
        if self.B is not None and self.B.shape != self.A.shape:
            raise InvalidArgumentError("A and B masks must share a shape")


def stack_inputs(P, Q):
    """Stack spectrograms into the 4-channel complex input [P, Q, P+Q, P-Q]."""
    if P.re.shape != Q.re.shape:
        raise InvalidArgumentError(
            f"spectrogram shape mismatch: {P.re.shape} vs {Q.re.shape}"
        )
    re = np.stack([P.re, Q.re, P.re + Q.re, P.re - Q.re])
    im = np.stack([P.im, Q.im, P.im + Q.im, P.im - Q.im])
    return ComplexTensor.from_arrays(re, im)


def _c_mul(a, b):
    return ComplexTensor(
        T.sub(T.mul(a.re, b.re), T.mul(a.im, b.im)),
        T.add(T.mul(a.re, b.im), T.mul(a.im, b.re)),
    )


def _c_sub(a, b):
    return ComplexTensor(T.sub(a.re, b.re), T.sub(a.im, b.im))


def _as_complex_tensor(x, dtype=None):
    if isinstance(x, ComplexTensor):
        return x
    if isinstance(x, dsp.ComplexSpectrogram):
        return ComplexTensor.from_arrays(x.re, x.im, dtype=dtype)
    raise InvalidArgumentError(f"expected spectrogram or complex tensor, got {type(x)!r}")


def apply_single_mask(P, A):
    """S_hat = A o P, elementwise complex multiplication."""
    P = _as_complex_tensor(P, dtype=A.re.data.dtype)
    if P.shape != A.shape:
        raise InvalidArgumentError(f"mask shape {A.shape} != input {P.shape}")
    return _c_mul(A, P)


def apply_dual_mask(P, Q, masks):
    """S_hat = A o (P - B o Q); differentiable w.r.t. both masks."""
    if masks.B is None:
        raise InvalidArgumentError("dual masking requires mask B")
    dtype = masks.A.re.data.dtype
    P = _as_complex_tensor(P, dtype=dtype)
    Q = _as_complex_tensor(Q, dtype=dtype)
    if P.shape != Q.shape or P.shape != masks.A.shape:
        raise InvalidArgumentError(
            f"shape mismatch: P {P.shape}, Q {Q.shape}, mask {masks.A.shape}"
        )
    return _c_mul(masks.A, _c_sub(P, _c_mul(masks.B, Q)))


def apply_masks(P, Q, masks):
    """Dispatch on the mask pair: dual when B is present, else single."""
    if masks.B is None:
        return apply_single_mask(P, masks.A)
    return apply_dual_mask(P, Q, masks)


def mask_and_resynth(P, Q, masks):
    s_hat = apply_masks(P, Q, masks)
    return dsp.istft_op(s_hat.re, s_hat.im)


def enhance(p, q, model, mode="eval"):
    """Run the full pipeline on time-domain mic and loopback signals.

    The shorter signal is zero-padded to the longer; the output covers the
    whole frames of the input (shorter by the sub-hop remainder, under one
    frame).  Returns a numpy signal when no gradient is requested.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    n = max(len(p), len(q))
    if len(p) < n:
        p = np.concatenate([p, np.zeros(n - len(p))])
    if len(q) < n:
        q = np.concatenate([q, np.zeros(n - len(q))])
    P = dsp.stft(p)
    Q = dsp.stft(q)
    x = stack_inputs(P, Q)
    dtype = next(model.named_params())[1].data.dtype
    x = ComplexTensor(Tensor(x.re.data.astype(dtype)), Tensor(x.im.data.astype(dtype)))
    masks = model.forward(x, mode=mode)
    est = mask_and_resynth(P, Q, masks)
    return est.data.astype(np.float64)


def oracle_echo_mask(E, Q, floor=None):
    """Per-bin least-squares echo mask B = E/Q where |Q| clears the floor.

    ``floor`` defaults to 1e-3 of the peak |Q|; bins below it get B = 0.
    Returns a complex numpy matrix suitable for wrapping into a MaskPair.
    """
    if E.re.shape != Q.re.shape:
        raise InvalidArgumentError("E and Q must share a shape")
    e = E.to_complex()
    qc = Q.to_complex()
    mag = np.abs(qc)
    if floor is None:
        floor = 1e-3 * mag.max()
    if floor <= 0:
        raise InvalidArgumentError("oracle mask floor must be > 0")
    lit = mag >= floor
    b = np.zeros_like(qc)
    np.divide(e, qc, out=b, where=lit)
    return b


def mask_pair_from_complex(a, b=None):
    """Wrap constant complex matrices as a (non-trainable) mask pair."""
    A = ComplexTensor.from_complex(a)
    B = ComplexTensor.from_complex(b) if b is not None else None
    return MaskPair(A, B)
