"""Synthetic full-duplex scene generation and the on-disk scene format.

A scene follows the mixture model  mic = clean + noise + echo  where the
echo is a distorted copy of the farend loopback.  The distortion chain is
hard clipping (loudspeaker stage), convolution with a sparse exponentially
decaying impulse response (room stage), and an integer delay; each stage
is independently disableable so tests can build linear-only or
nonlinear-only echo paths.

Sources are synthetic at desk scale: speech-like signals are
amplitude-modulated harmonic bursts separated by pauses, noise is
lowpass-filtered pseudo-random noise.  Everything is a pure function of
(plan, seed).
"""

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import dsp
from .errors import DataError, InvalidArgumentError

_SPEECH_STREAM = 1
_FAREND_STREAM = 2
_NOISE_STREAM = 3
_RIR_STREAM = 4


def _rng(seed, stream):
    return np.random.default_rng([int(seed) & 0x7FFFFFFF, stream])


def _is_off(level_db):
    return level_db is None or np.isinf(level_db)


@dataclass(frozen=True)
class ScenePlan:
    """Deterministic recipe for one acoustic scene."""

    seed: int
    duration: float = 1.0
    ser_db: Optional[float] = 0.0
    snr_db: Optional[float] = 20.0
    delay_samples: int = 0
    clip_level: float = 1.0
    rir_decay: float = 0.0
    doubletalk: bool = True

    def __post_init__(self):
        if self.duration <= 0:
            raise InvalidArgumentError("duration must be > 0")
        if self.delay_samples < 0:
            raise InvalidArgumentError("delay_samples must be >= 0")
        if not (0.0 < self.clip_level <= 1.0):
            raise InvalidArgumentError("clip_level must be in (0, 1]")
        if self.rir_decay < 0:
            raise InvalidArgumentError("rir_decay must be >= 0")
        if not self.doubletalk and not _is_off(self.ser_db):
            raise InvalidArgumentError(
                "finite ser_db requires doubletalk=True (no farend source otherwise)"
            )

    @classmethod
    def sample(cls, seed, duration=1.0, ser_db=None, snr_db=None, delay_max=256,
               doubletalk=True):
        """Draw a plan from the default desk-scale distribution.

        Fixed ser_db/snr_db override the random draw; delay is uniform on
        [0, delay_max].
        """
        rng = _rng(seed, 0)
        ser = rng.uniform(-5.0, 10.0) if ser_db is None else ser_db
        snr = rng.uniform(5.0, 25.0) if snr_db is None else snr_db
        delay = int(rng.integers(0, delay_max + 1)) if delay_max > 0 else 0
        clip = float(rng.uniform(0.6, 1.0))
        rir = float(rng.uniform(0.03, 0.12))
        if not doubletalk:
            ser = None
        return cls(seed=seed, duration=duration, ser_db=ser, snr_db=snr,
                   delay_samples=delay, clip_level=clip, rir_decay=rir,
                   doubletalk=doubletalk)


@dataclass
class SceneQuad:
    """One scene: training target, mic mixture, loopback reference, echo."""

    clean: np.ndarray
    mic: np.ndarray
    loopback: np.ndarray
    echo: np.ndarray
    target_scale: float = 1.0
    noise: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.mic)
        for name in ("clean", "loopback", "echo"):
            if len(getattr(self, name)) != n:
                raise DataError(f"scene signal length mismatch on {name!r}")


def synth_source(kind, seed, duration):
    """Deterministic synthetic source, peak-normalized to 0.5."""
    if duration < 0.5:
        raise InvalidArgumentError("source duration must be >= 0.5 s")
    n = int(round(duration * dsp.SAMPLE_RATE))
    if kind == "speech":
        x = _speech_like(_rng(seed, _SPEECH_STREAM), n)
    elif kind == "noise":
        x = _filtered_noise(_rng(seed, _NOISE_STREAM), n)
    else:
        raise InvalidArgumentError(f"unknown source kind {kind!r}")
    peak = np.abs(x).max()
    if peak > 0:
        x *= 0.5 / peak
    return x


def _speech_like(rng, n):
    fs = dsp.SAMPLE_RATE
    x = np.zeros(n)
    pos = int(rng.uniform(0.0, 0.05) * fs)
    while pos < n:
        burst = int(rng.uniform(0.15, 0.40) * fs)
        burst = min(burst, n - pos)
        if burst < 64:
            break
        f0 = rng.uniform(90.0, 280.0)
        t = np.arange(burst) / fs
        # syllabic amplitude modulation plus a short fade at both ends
        env = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(2.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
        fade = min(burst // 4, 320)
        ramp = np.ones(burst)
        ramp[:fade] = np.linspace(0.0, 1.0, fade)
        ramp[burst - fade:] = np.linspace(1.0, 0.0, fade)
        seg = np.zeros(burst)
        n_harm = int(min(12, 7400.0 // f0))
        for h in range(1, n_harm + 1):
            amp = rng.uniform(0.3, 1.0) / h
            seg += amp * np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi))
        x[pos:pos + burst] += seg * env * ramp
        pos += burst + int(rng.uniform(0.05, 0.25) * fs)
    if not np.any(x):  # degenerate short duration: fall back to one tone
        t = np.arange(n) / fs
        x = np.sin(2 * np.pi * 220.0 * t)
    return x


def _filtered_noise(rng, n):
    cutoff = rng.uniform(1500.0, 5000.0)
    taps = 63
    t = np.arange(taps) - (taps - 1) / 2
    sinc = np.sinc(2 * cutoff / dsp.SAMPLE_RATE * t)
    kernel = sinc * np.hamming(taps)
    kernel /= kernel.sum()
    white = rng.standard_normal(n + taps)
    return np.convolve(white, kernel, mode="same")[:n]


def _fft_convolve(x, h):
    m = len(x) + len(h) - 1
    nfft = 1 << (m - 1).bit_length()
    y = np.fft.irfft(np.fft.rfft(x, nfft) * np.fft.rfft(h, nfft), nfft)
    return y[:len(x)]


def _sparse_rir(rng, n_taps):
    h = np.zeros(n_taps)
    h[0] = 1.0
    if n_taps > 1:
        count = max(1, n_taps // 50)
        taps = rng.integers(1, n_taps, size=count)
        amps = rng.standard_normal(count) * 0.6 * np.exp(-3.0 * taps / n_taps)
        np.add.at(h, taps, amps)
    return h


def distortion_f(q, plan):
    """Echo-path distortion: hard clip, room response, integer delay."""
    q = np.asarray(q, dtype=np.float64)
    x = np.clip(q, -plan.clip_level, plan.clip_level)
    n_taps = int(round(plan.rir_decay * dsp.SAMPLE_RATE))
    if n_taps > 1:
        x = _fft_convolve(x, _sparse_rir(_rng(plan.seed, _RIR_STREAM), n_taps))
    if plan.delay_samples > 0:
        x = shift_signal(x, plan.delay_samples)
    return x


def shift_signal(x, d):
    """Shift by d samples (positive delays), zero-filling exposed samples."""
    out = np.zeros_like(x)
    if d == 0:
        out[:] = x
    elif d > 0:
        out[d:] = x[:len(x) - d]
    else:
        out[:len(x) + d] = x[-d:]
    return out


def _scale_to_ratio(x, reference_energy, ratio_db):
    """Scale x so that reference_energy / energy(x) == ratio_db."""
    e = float(np.dot(x, x))
    if e == 0.0:
        return x
    target = reference_energy * 10.0 ** (-ratio_db / 10.0)
    return x * np.sqrt(target / e)


def make_scene(plan):
    """Synthesize one SceneQuad from a plan.  Deterministic per plan."""
    s = synth_source("speech", plan.seed * 2 + 1, plan.duration)
    n = len(s)
    e_speech = float(np.dot(s, s))

    if plan.doubletalk:
        q = synth_source("speech", plan.seed * 2 + 2, plan.duration)
        echo = distortion_f(q, plan)
        if _is_off(plan.ser_db):
            echo = np.zeros(n)
        else:
            echo = _scale_to_ratio(echo, e_speech, plan.ser_db)
    else:
        q = np.zeros(n)
        echo = np.zeros(n)

    if _is_off(plan.snr_db):
        noise = np.zeros(n)
    else:
        noise = synth_source("noise", plan.seed * 2 + 1, plan.duration)
        noise = _scale_to_ratio(noise, e_speech, plan.snr_db)

    mic = s + noise + echo
    peak = np.abs(mic).max()
    c = float(0.99 / peak) if peak > 0.99 else 1.0
    return SceneQuad(
        clean=c * s,
        mic=c * mic,
        loopback=q,
        echo=c * echo,
        target_scale=c,
        noise=c * noise,
    )


def augment_shift(q, rng, max_shift=512, prob=0.5):
    """With probability prob, shift by a uniform integer in [-max, +max]."""
    if max_shift < 0:
        raise InvalidArgumentError("max_shift must be >= 0")
    if rng.random() < prob:
        d = int(rng.integers(-max_shift, max_shift + 1))
        return shift_signal(np.asarray(q, dtype=np.float64), d)
    return np.array(q, dtype=np.float64, copy=True)


def augment_scale(q, rng, scale_range=(0.5, 1.5), prob=0.5):
    """With probability prob, multiply by a uniform factor from the range."""
    lo, hi = scale_range
    if lo <= 0 or hi < lo:
        raise InvalidArgumentError("scale range must satisfy 0 < lo <= hi")
    if rng.random() < prob:
        return np.asarray(q, dtype=np.float64) * rng.uniform(lo, hi)
    return np.array(q, dtype=np.float64, copy=True)


# -- on-disk format -----------------------------------------------------------
#
# A scene directory holds <id>_mic.wav, <id>_lpb.wav, <id>_clean.wav, an
# optional <id>_echo.wav, and <id>_meta.txt with 'target_scale = <float>'.


def save_scene_dir(path, scene):
    os.makedirs(path, exist_ok=True)
    sid = os.path.basename(os.path.normpath(path))
    dsp.write_wav(os.path.join(path, f"{sid}_mic.wav"), scene.mic)
    dsp.write_wav(os.path.join(path, f"{sid}_lpb.wav"), scene.loopback)
    dsp.write_wav(os.path.join(path, f"{sid}_clean.wav"), scene.clean)
    if scene.echo is not None and np.any(scene.echo):
        dsp.write_wav(os.path.join(path, f"{sid}_echo.wav"), scene.echo)
    with open(os.path.join(path, f"{sid}_meta.txt"), "w") as f:
        f.write(f"target_scale = {float(scene.target_scale)!r}\n")


def _find_part(path, sid, part, required=True):
    name = os.path.join(path, f"{sid}_{part}")
    if not os.path.exists(name):
        if required:
            raise FileNotFoundError(f"scene {path}: missing {sid}_{part}")
        return None
    return name


def load_scene_dir(path):
    if not os.path.isdir(path):
        raise FileNotFoundError(f"no such scene directory: {path}")
    sid = os.path.basename(os.path.normpath(path))
    mic = dsp.read_wav(_find_part(path, sid, "mic.wav"))
    lpb = dsp.read_wav(_find_part(path, sid, "lpb.wav"))
    clean = dsp.read_wav(_find_part(path, sid, "clean.wav"))
    echo_path = _find_part(path, sid, "echo.wav", required=False)
    echo = dsp.read_wav(echo_path) if echo_path else np.zeros(len(mic))
    meta_path = _find_part(path, sid, "meta.txt")
    target_scale = None
    with open(meta_path) as f:
        for raw in f:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{meta_path}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key == "target_scale":
                target_scale = float(value)
    if target_scale is None:
        raise DataError(f"{meta_path}: missing target_scale")
    if not (len(mic) == len(lpb) == len(clean) == len(echo)):
        raise DataError(f"scene {path}: signal lengths differ across files")
    return SceneQuad(clean=clean, mic=mic, loopback=lpb, echo=echo,
                     target_scale=target_scale)
