"""Deterministic signal-processing primitives.

Radix-2 FFT, short-time magnitude spectra (differentiable through to the
waveform), Butterworth biquad design via bilinear transform with cutoff
prewarping, zero-state IIR filtering, factor-4 windowed-sinc resampling,
and linear convolution.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .audio import AudioBuffer
from .tensor import Tensor


class NonPowerOfTwoLength(ValueError):
    pass


class TooShort(ValueError):
    pass


class InvalidCutoff(ValueError):
    pass


class UnsupportedOrder(ValueError):
    pass


class LengthNotDivisible(ValueError):
    pass


# -- FFT -----------------------------------------------------------------------


@functools.lru_cache(maxsize=32)
def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    rev.setflags(write=False)
    return rev


def fft(x, inverse: bool = False) -> np.ndarray:
    """Radix-2 Cooley-Tukey DFT over the last axis.

    Forward transform is unscaled, inverse is scaled by 1/N. Length must be
    a power of two.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n == 0 or n & (n - 1):
        raise NonPowerOfTwoLength(f"FFT length {n} is not a power of two")
    y = np.ascontiguousarray(x[..., _bit_reverse_indices(n)])
    sign = 1.0 if inverse else -1.0
    m = 2
    while m <= n:
        half = m // 2
        w = np.exp(sign * 2j * np.pi * np.arange(half) / m)
        yv = y.reshape(y.shape[:-1] + (n // m, m))
        even = yv[..., :half].copy()
        odd = yv[..., half:] * w
        yv[..., :half] = even + odd
        yv[..., half:] = even - odd
        m *= 2
    if inverse:
        y /= n
    return y


@functools.lru_cache(maxsize=32)
def _hann_periodic(n: int) -> np.ndarray:
    w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    w.setflags(write=False)
    return w


# -- STFT magnitude ---------------------------------------------------------------


@dataclass(frozen=True)
class StftConfig:
    fft_bins: int
    hop: int
    window_len: int
    window: str = "hann"

    def __post_init__(self):
        if self.fft_bins & (self.fft_bins - 1) or self.fft_bins <= 0:
            raise NonPowerOfTwoLength(f"fft_bins={self.fft_bins} must be a power of two")
        if not (0 < self.window_len <= self.fft_bins):
            raise ValueError("require window_len <= fft_bins")
        if not (0 < self.hop <= self.window_len):
            raise ValueError("require hop <= window_len")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")

    @property
    def bins(self) -> int:
        return self.fft_bins // 2 + 1


def stft_frame_count(length: int, cfg: StftConfig) -> int:
    return 1 + (length - cfg.window_len) // cfg.hop


def stft_magnitude(x, cfg: StftConfig) -> Tensor:
    """One-sided magnitude spectrogram [frames x bins] of a 1-D waveform.

    Frames are Hann-windowed and zero-padded to ``fft_bins``. Differentiable
    with respect to the waveform: the backward pass maps the magnitude
    gradient through the DFT analytically (one forward FFT per frame) and
    overlap-adds frame gradients back onto the signal.
    """
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.data.ndim != 1:
        raise ValueError(f"waveform must be 1-D, got {x.shape}")
    length = x.shape[0]
    if length < cfg.window_len:
        raise TooShort(f"waveform length {length} < window {cfg.window_len}")
    n_frames = stft_frame_count(length, cfg)
    win = _hann_periodic(cfg.window_len)
    data = x.data
    s = data.strides[0]
    frames = as_strided(data, (n_frames, cfg.window_len), (cfg.hop * s, s))
    padded = np.zeros((n_frames, cfg.fft_bins))
    padded[:, :cfg.window_len] = frames * win
    spec = fft(padded)[:, :cfg.bins]
    mag = np.abs(spec).astype(x.dtype)

    def backward(g):
        # d|X_k|/dx_n = Re(conj(X_k) e^{-i w_k n}) / |X_k|; summing over the
        # one-sided bins is a forward DFT of the weighted spectrum.
        safe = np.where(mag > 0, mag, 1.0)
        c = np.where(mag > 0, g * np.conj(spec) / safe, 0.0)
        full = np.zeros((n_frames, cfg.fft_bins), dtype=np.complex128)
        full[:, :cfg.bins] = c
        gframes = fft(full).real[:, :cfg.window_len] * win
        gx = np.zeros(length)
        for t in range(n_frames):
            gx[t * cfg.hop:t * cfg.hop + cfg.window_len] += gframes[t]
        x._accum(gx.astype(x.dtype))

    return Tensor._make(mag, (x,), backward, "stft_magnitude")


# -- Butterworth biquads -------------------------------------------------------------


@dataclass
class BiquadCascade:
    """Second-order sections (b0, b1, b2, a1, a2), a1/a2 normalized by a0."""
    sections: list = field(default_factory=list)
    order: int = 0
    cutoff_hz: object = None
    kind: str = ""
    sample_rate: float = 0.0


_ORDERS = (2, 4, 6, 8)


def _butterworth_sections(order: int, cutoff_hz: float, sr_hz: float, highpass: bool):
    c = 1.0 / np.tan(np.pi * cutoff_hz / sr_hz)  # prewarped bilinear constant
    sections = []
    for k in range(order // 2):
        alpha = 2.0 * np.sin((2 * k + 1) * np.pi / (2 * order))
        a0 = c * c + alpha * c + 1.0
        a1 = 2.0 * (1.0 - c * c) / a0
        a2 = (c * c - alpha * c + 1.0) / a0
        if highpass:
            b0, b1, b2 = c * c / a0, -2.0 * c * c / a0, c * c / a0
        else:
            b0, b1, b2 = 1.0 / a0, 2.0 / a0, 1.0 / a0
        sections.append((b0, b1, b2, a1, a2))
    return sections


def pole_radius(cascade: BiquadCascade) -> float:
    worst = 0.0
    for _, _, _, a1, a2 in cascade.sections:
        roots = np.roots([1.0, a1, a2])
        worst = max(worst, float(np.max(np.abs(roots))))
    return worst


def design_butterworth(order: int, cutoff_hz, sr_hz: float, kind: str) -> BiquadCascade:
    """Stable biquad cascade; magnitude is exactly -3.01 dB at the cutoff.

    ``bandpass`` takes a (low, high) cutoff pair and is realized as a
    highpass-then-lowpass cascade of the same order each.
    """
    if order not in _ORDERS:
        raise UnsupportedOrder(f"order must be one of {_ORDERS}, got {order}")
    nyquist = sr_hz / 2.0
    if kind == "bandpass":
        lo, hi = cutoff_hz
        if not (0.0 < lo < hi < nyquist):
            raise InvalidCutoff(f"bandpass cutoffs {cutoff_hz} invalid for sr {sr_hz}")
        sections = (_butterworth_sections(order, lo, sr_hz, highpass=True)
                    + _butterworth_sections(order, hi, sr_hz, highpass=False))
    elif kind in ("lowpass", "highpass"):
        fc = float(cutoff_hz)
        if not (0.0 < fc < nyquist):
            raise InvalidCutoff(f"cutoff {fc} Hz outside (0, {nyquist})")
        sections = _butterworth_sections(order, fc, sr_hz, highpass=(kind == "highpass"))
    else:
        raise ValueError(f"unknown filter kind {kind!r}")
    cascade = BiquadCascade(sections, order, cutoff_hz, kind, sr_hz)
    if pole_radius(cascade) >= 1.0 - 1e-6:
        raise InvalidCutoff(f"{kind} at {cutoff_hz} Hz yields near-unstable poles")
    return cascade


def frequency_response(cascade: BiquadCascade, freqs_hz) -> np.ndarray:
    """Complex response of the cascade at the given frequencies."""
    w = 2.0 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / cascade.sample_rate
    z1 = np.exp(-1j * w)
    z2 = z1 * z1
    h = np.ones_like(z1)
    for b0, b1, b2, a1, a2 in cascade.sections:
        h = h * (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2)
    return h


def filter_apply(cascade: BiquadCascade, buf: AudioBuffer) -> AudioBuffer:
    """Zero-initial-state direct-form-II-transposed filtering."""
    if cascade.sample_rate and buf.sample_rate != cascade.sample_rate:
        raise ValueError(
            f"sample rate {buf.sample_rate} != filter design rate {cascade.sample_rate}")
    y = [float(v) for v in buf.samples]
    for b0, b1, b2, a1, a2 in cascade.sections:
        s1 = 0.0
        s2 = 0.0
        out = []
        append = out.append
        for xn in y:
            yn = b0 * xn + s1
            s1 = b1 * xn - a1 * yn + s2
            s2 = b2 * xn - a2 * yn
            append(yn)
        y = out
    return AudioBuffer(np.asarray(y, dtype=np.asarray(buf.samples).dtype), buf.sample_rate)


# -- factor-4 resampling ----------------------------------------------------------

RESAMPLE_FACTOR = 4
_ZERO_CROSSINGS = 16
_HALF = RESAMPLE_FACTOR * _ZERO_CROSSINGS  # kernel half-width in high-rate taps
_TAPS = 2 * _HALF + 1


@functools.lru_cache(maxsize=4)
def _sinc_kernels(dtype_name: str):
    """(up, down) Hann-windowed sinc kernels, both DC-normalized.

    The upsampling kernel is normalized per polyphase branch so a constant
    input maps to the same constant; the decimation kernel sums to one.
    """
    t = np.arange(-_HALF, _HALF + 1, dtype=np.float64)
    raw = np.sinc(t / RESAMPLE_FACTOR) * np.hanning(_TAPS)
    up = raw.copy()
    for phase in range(RESAMPLE_FACTOR):
        sel = (np.arange(_TAPS) - _HALF) % RESAMPLE_FACTOR == phase
        up[sel] /= up[sel].sum()
    down = raw / raw.sum()
    dt = np.dtype(dtype_name)
    up = up.astype(dt)
    down = down.astype(dt)
    up.setflags(write=False)
    down.setflags(write=False)
    return up, down


def upsample_4x(x) -> Tensor:
    """Windowed-sinc interpolation, N samples -> 4N; differentiable."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    n = x.shape[0]
    kernel, _ = _sinc_kernels(x.dtype.name)
    full = np.zeros(RESAMPLE_FACTOR * n + _TAPS - RESAMPLE_FACTOR, dtype=x.dtype)
    data = x.data
    for j in range(_TAPS):
        full[j:j + RESAMPLE_FACTOR * (n - 1) + 1:RESAMPLE_FACTOR] += data * kernel[j]
    out = np.ascontiguousarray(full[_HALF:_HALF + RESAMPLE_FACTOR * n])

    def backward(g):
        gfull = np.zeros_like(full)
        gfull[_HALF:_HALF + RESAMPLE_FACTOR * n] = g
        s = gfull.strides[0]
        patches = as_strided(gfull, (n, _TAPS), (RESAMPLE_FACTOR * s, s))
        x._accum(patches @ kernel)

    return Tensor._make(out, (x,), backward, "upsample_4x")


def downsample_4x(x) -> Tensor:
    """Anti-aliased decimation, 4N samples -> N; differentiable."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    n = x.shape[0]
    if n % RESAMPLE_FACTOR:
        raise LengthNotDivisible(f"length {n} not divisible by {RESAMPLE_FACTOR}")
    m = n // RESAMPLE_FACTOR
    _, kernel = _sinc_kernels(x.dtype.name)
    xp = np.pad(x.data, _HALF)
    s = xp.strides[0]
    patches = as_strided(xp, (m, _TAPS), (RESAMPLE_FACTOR * s, s))
    out = patches @ kernel

    def backward(g):
        gxp = np.zeros_like(xp)
        for j in range(_TAPS):
            gxp[j:j + RESAMPLE_FACTOR * (m - 1) + 1:RESAMPLE_FACTOR] += g * kernel[j]
        x._accum(gxp[_HALF:_HALF + n])

    return Tensor._make(out, (x,), backward, "downsample_4x")


# -- linear convolution ------------------------------------------------------------


def convolve_full(x: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Linear convolution of x with r, trimmed to len(x).

    Trimming keeps a reverberated signal aligned with its dry source.
    Computed by pointwise multiplication of zero-padded spectra.
    """
    x = np.asarray(x, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if len(x) == 0 or len(r) == 0:
        raise ValueError("convolve_full requires non-empty inputs")
    full_len = len(x) + len(r) - 1
    n = 1 << (full_len - 1).bit_length()
    fx = fft(np.concatenate([x, np.zeros(n - len(x))]).astype(np.complex128))
    fr = fft(np.concatenate([r, np.zeros(n - len(r))]).astype(np.complex128))
    out = fft(fx * fr, inverse=True).real
    return out[:len(x)]
