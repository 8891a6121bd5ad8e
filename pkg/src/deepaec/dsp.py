"""Audio I/O and the STFT/ISTFT analysis-synthesis pair.

Fixed configuration throughout: 16 kHz mono audio, 512-sample square-root
Hann window, hop 256 (50% overlap), 257 retained bins.  Frames start at
k*256 with no center padding; the trailing partial frame is dropped.  The
squared window satisfies COLA at this hop, so istft(stft(x)) reproduces
interior samples exactly.

``stft``/``istft`` are plain numpy; ``stft_op``/``istft_op`` are the
differentiable counterparts used inside the training graph.
"""

import wave
from dataclasses import dataclass

import numpy as np

from .errors import DataError, InvalidArgumentError, UnsupportedFormatError
from .tensor import make_op

SAMPLE_RATE = 16000
FFT_SIZE = 512
HOP = 256
N_BINS = FFT_SIZE // 2 + 1


def read_wav(path):
    """Read a mono 16-bit 16 kHz PCM WAV into float64 samples in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            nframes = w.getnframes()
            raw = w.readframes(nframes)
    except (wave.Error, EOFError) as exc:
        raise UnsupportedFormatError(f"{path}: not a readable PCM WAV ({exc})") from exc
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if channels != 1:
        raise UnsupportedFormatError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise UnsupportedFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if rate != SAMPLE_RATE:
        raise UnsupportedFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate}")
    if len(raw) < 2 * nframes:
        raise DataError(f"{path}: truncated data chunk")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return samples


def write_wav(path, samples):
    """Write float samples to mono 16-bit 16 kHz PCM with saturating quantization."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise InvalidArgumentError("write_wav expects a 1-D signal")
    if not np.all(np.isfinite(samples)):
        raise InvalidArgumentError("write_wav: signal contains NaN/Inf")
    q = np.clip(np.rint(samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(q.tobytes())


def sqrt_hann(n):
    """Square root of the periodic Hann window."""
    if n <= 0 or n % 2 != 0:
        raise InvalidArgumentError(f"sqrt_hann length must be even and positive, got {n}")
    t = np.arange(n)
    return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * t / n))


_WINDOW = sqrt_hann(FFT_SIZE)


def num_frames(n_samples):
    if n_samples < FFT_SIZE:
        raise InvalidArgumentError(
            f"signal too short for one frame: {n_samples} < {FFT_SIZE}"
        )
    return (n_samples - FFT_SIZE) // HOP + 1


@dataclass
class ComplexSpectrogram:
    """Complex F x K time-frequency matrix stored as a (real, imag) pair."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        self.re = np.asarray(self.re, dtype=np.float64)
        self.im = np.asarray(self.im, dtype=np.float64)
        if self.re.shape != self.im.shape or self.re.ndim != 2:
            raise InvalidArgumentError("re/im must be identically shaped 2-D arrays")
        if self.re.shape[0] != N_BINS:
            raise InvalidArgumentError(
                f"expected {N_BINS} bins, got {self.re.shape[0]}"
            )

    @property
    def bins(self):
        return self.re.shape[0]

    @property
    def frames(self):
        return self.re.shape[1]

    def to_complex(self):
        return self.re + 1j * self.im

    @classmethod
    def from_complex(cls, z):
        z = np.asarray(z)
        return cls(z.real.copy(), z.imag.copy())


def _frame_signal(x):
    k = num_frames(len(x))
    idx = np.arange(FFT_SIZE)[None, :] + HOP * np.arange(k)[:, None]
    return x[idx]  # [K, 512]


def stft(x):
    """Windowed real FFT; frame k covers samples [k*256, k*256+512)."""
    x = np.asarray(x, dtype=np.float64)
    frames = _frame_signal(x) * _WINDOW[None, :]
    spec = np.fft.rfft(frames, axis=1).T  # [F, K]
    return ComplexSpectrogram.from_complex(spec)


def istft(spec):
    """Inverse FFT per frame, second window application, overlap-add."""
    z = spec.to_complex().T  # [K, F]
    frames = np.fft.irfft(z, n=FFT_SIZE, axis=1) * _WINDOW[None, :]
    k = frames.shape[0]
    out = np.zeros((k - 1) * HOP + FFT_SIZE, dtype=np.float64)
    for i in range(k):
        out[i * HOP:i * HOP + FFT_SIZE] += frames[i]
    return out


def istft_length(n_frames):
    return (n_frames - 1) * HOP + FFT_SIZE


# -- differentiable ops -------------------------------------------------------
#
# Both transforms are linear, so the backward passes are their exact
# adjoints.  np.fft.irfft ignores the imaginary parts of the DC and
# Nyquist bins, hence the per-bin weights below: interior bins enter the
# inverse transform with weight 2/N, the edge bins with weight 1/N and a
# real part only.


def _irfft_adjoint(g_frames):
    """Gradient of irfft output frames [K, 512] w.r.t. (re, im) bins [F, K]."""
    G = np.fft.rfft(g_frames, axis=1)  # [K, F]
    scale = np.full(N_BINS, 2.0 / FFT_SIZE)
    scale[0] = scale[-1] = 1.0 / FFT_SIZE
    g_re = (G.real * scale[None, :]).T
    g_im = (G.imag * scale[None, :]).T
    g_im[0] = 0.0
    g_im[-1] = 0.0
    return np.ascontiguousarray(g_re), np.ascontiguousarray(g_im)


def _rfft_adjoint(g_re, g_im):
    """Gradient of rfft bins w.r.t. the input frames; returns [K, 512]."""
    H = 0.5 * (g_re + 1j * g_im)
    H[0] = g_re[0] + 1j * g_im[0]
    H[-1] = g_re[-1] + 1j * g_im[-1]
    return np.fft.irfft(H.T, n=FFT_SIZE, axis=1) * FFT_SIZE


def stft_op(x):
    """Differentiable STFT of a 1-D signal tensor; returns a [2, F, K] tensor
    stacking the real and imaginary planes."""
    if x.data.ndim != 1:
        raise InvalidArgumentError("stft_op expects a 1-D signal tensor")
    k = num_frames(x.data.size)
    frames = _frame_signal(x.data) * _WINDOW[None, :]
    spec = np.fft.rfft(frames, axis=1).T
    out = np.stack([spec.real, spec.imag]).astype(x.data.dtype)

    def bw(g, x=x, k=k):
        if not x.requires_grad:
            return
        g_frames = _rfft_adjoint(g[0].astype(np.float64), g[1].astype(np.float64))
        g_frames *= _WINDOW[None, :]
        gx = np.zeros(x.data.size, dtype=np.float64)
        for i in range(k):
            gx[i * HOP:i * HOP + FFT_SIZE] += g_frames[i]
        x._accumulate(gx.astype(x.data.dtype))
    return make_op(out, (x,), bw)


def istft_op(re, im):
    """Differentiable ISTFT of (re, im) tensors shaped [F, K]."""
    if re.data.shape != im.data.shape or re.data.ndim != 2:
        raise InvalidArgumentError("istft_op expects matching [F, K] tensors")
    if re.data.shape[0] != N_BINS:
        raise InvalidArgumentError(f"expected {N_BINS} bins, got {re.data.shape[0]}")
    z = (re.data + 1j * im.data).T
    frames = np.fft.irfft(z, n=FFT_SIZE, axis=1) * _WINDOW[None, :]
    k = frames.shape[0]
    out = np.zeros((k - 1) * HOP + FFT_SIZE, dtype=re.data.dtype)
    for i in range(k):
        out[i * HOP:i * HOP + FFT_SIZE] += frames[i]

    def bw(g, re=re, im=im, k=k):
        if not (re.requires_grad or im.requires_grad):
            return
        idx = np.arange(FFT_SIZE)[None, :] + HOP * np.arange(k)[:, None]
        g_frames = g.astype(np.float64)[idx] * _WINDOW[None, :]
        g_re, g_im = _irfft_adjoint(g_frames)
        if re.requires_grad:
            re._accumulate(g_re.astype(re.data.dtype))
        if im.requires_grad:
            im._accumulate(g_im.astype(im.data.dtype))
    return make_op(out, (re, im), bw)
