"""Training losses and evaluation metrics.

The training loss is a weighted blend of the negative scale-dependent SDR
(which penalizes amplitude mismatch, keeping the estimate on the target's
scale) and a bark-band spectral distance standing in for a full perceptual
model.  SI-SDR and SDR are evaluation-only metrics, clamped to +/-60 dB.

Signals are zero-meaned before every SDR-family computation; the formulas
assume it.
"""

from dataclasses import dataclass

import numpy as np

from . import dsp
from . import tensor as T
from .errors import InvalidArgumentError
from .tensor import Tensor

EPS = 1e-8
DB_CLAMP = 60.0
_LN10 = float(np.log(10.0))

BARK_BANDS = 24
ASYM_WEIGHT = 0.5


@dataclass(frozen=True)
class LossWeights:
    """Blend weights (alpha for NegSDR, beta for the perceptual term)."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise InvalidArgumentError("loss weights must lie in [0, 1]")
        if abs(self.alpha + self.beta - 1.0) > 1e-9:
            raise InvalidArgumentError(
                f"weights must sum to one, got {self.alpha} + {self.beta}"
            )


def _as_tensor(est):
    return est if isinstance(est, Tensor) else Tensor(np.asarray(est, dtype=np.float64))


def _check_pair(est_len, ref):
    ref = np.asarray(ref, dtype=np.float64)
    if ref.ndim != 1 or est_len != ref.size:
        raise InvalidArgumentError(
            f"estimate/reference length mismatch: {est_len} vs {ref.size}"
        )
    return ref


def neg_sd_sdr(est, ref, eps=EPS):
    """Negative scale-dependent SDR, differentiable w.r.t. the estimate.

    gamma = <est, ref> / <ref, ref>;
    loss = -10 log10( sum((gamma ref)^2) / (sum((est - ref)^2) + eps) + eps ).
    """
    est = _as_tensor(est)
    ref = _check_pair(est.data.size, ref)
    ref = ref - ref.mean()
    refsq = float(np.dot(ref, ref))
    if refsq == 0.0:
        raise InvalidArgumentError("reference signal is all zero")

    est = T.sub_mean(est)
    reft = Tensor(ref.astype(est.data.dtype))
    gamma = T.tsum(T.mul(est, reft)) * (1.0 / refsq)
    num = T.mul(gamma, gamma) * refsq
    diff = T.sub(est, reft)
    den = T.tsum(T.mul(diff, diff)) + eps
    ratio = T.div(num, den) + eps
    return T.log(ratio) * (-10.0 / _LN10)


def sd_sdr(est, ref, eps=EPS):
    """Scale-dependent SDR in dB (metric form of the loss above)."""
    return -neg_sd_sdr(est, ref, eps).item()


def _zero_mean_pair(est, ref):
    est = np.asarray(est, dtype=np.float64)
    ref = _check_pair(est.size, ref)
    if not np.any(ref):
        raise InvalidArgumentError("reference signal is all zero")
    return est - est.mean(), ref - ref.mean()


def _clamped_db(num, den):
    if den <= num * 10.0 ** (-DB_CLAMP / 10.0):
        return DB_CLAMP
    if num <= den * 10.0 ** (-DB_CLAMP / 10.0):
        return -DB_CLAMP
    return 10.0 * np.log10(num / den)


def si_sdr(est, ref):
    """Scale-invariant SDR in dB, clamped to +/-60."""
    est, ref = _zero_mean_pair(est, ref)
    gamma = np.dot(est, ref) / np.dot(ref, ref)
    proj = gamma * ref
    return _clamped_db(np.dot(proj, proj), np.sum((est - proj) ** 2))


def sdr(est, ref):
    """Standard SDR in dB, clamped to +/-60."""
    est, ref = _zero_mean_pair(est, ref)
    return _clamped_db(np.dot(ref, ref), np.sum((est - ref) ** 2))


def bark_filterbank(n_bands=BARK_BANDS, n_bins=dsp.N_BINS, sample_rate=dsp.SAMPLE_RATE):
    """Triangular filters equally spaced on the bark scale, rows sum to 1.

    Uses the Traunmueller bark approximation z(f) = 26.81 f / (1960 + f).
    """
    freqs = np.arange(n_bins) * sample_rate / (2.0 * (n_bins - 1))
    z = 26.81 * freqs / (1960.0 + freqs)
    edges = np.linspace(0.0, z[-1], n_bands + 2)
    fb = np.zeros((n_bands, n_bins))
    for b in range(n_bands):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        rising = (z - lo) / (mid - lo)
        falling = (hi - z) / (hi - mid)
        fb[b] = np.clip(np.minimum(rising, falling), 0.0, None)
    fb /= fb.sum(axis=1, keepdims=True)
    return fb


_FILTERBANK = None


def _filterbank():
    global _FILTERBANK
    if _FILTERBANK is None:
        _FILTERBANK = bark_filterbank()
    return _FILTERBANK


def _log_band_energies(x):
    """Tensor path: signal -> power spectrogram -> bark bands -> log."""
    spec = dsp.stft_op(x)
    re = T.reshape(T.channel_slice(spec, 0, 1), spec.data.shape[1:])
    im = T.reshape(T.channel_slice(spec, 1, 2), spec.data.shape[1:])
    power = T.add(T.mul(re, re), T.mul(im, im))
    bands = T.linear_bins(_filterbank(), power)
    return T.log(bands + EPS)


def perceptual_loss(est, ref, asym_weight=ASYM_WEIGHT):
    """Bark-band log-spectral distance with an asymmetric artifact penalty.

    Symmetric term: mean squared log-band difference.  Asymmetric term:
    mean squared positive part of the difference, penalizing energy the
    estimate adds over the reference.  Differentiable w.r.t. the estimate.
    """
    est = _as_tensor(est)
    ref = _check_pair(est.data.size, ref)
    if est.data.size < dsp.FFT_SIZE:
        raise InvalidArgumentError(
            f"signals must cover at least one frame ({dsp.FFT_SIZE} samples)"
        )
    log_est = _log_band_energies(est)
    log_ref = _log_band_energies(Tensor(ref.astype(est.data.dtype)))
    diff = T.sub(log_est, log_ref)
    sym = T.mean(T.mul(diff, diff))
    pos = T.relu(diff)
    asym = T.mean(T.mul(pos, pos))
    return T.add(sym, asym * asym_weight)


def composite_loss(est, ref, weights):
    """alpha * neg_sd_sdr + beta * perceptual_loss; pure terms short-circuit."""
    if weights.beta == 0.0:
        return neg_sd_sdr(est, ref)
    if weights.alpha == 0.0:
        return perceptual_loss(est, ref)
    return T.add(
        neg_sd_sdr(est, ref) * weights.alpha,
        perceptual_loss(est, ref) * weights.beta,
    )
