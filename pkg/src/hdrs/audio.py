"""Mono waveform container and PCM WAV I/O.

Canonical format is 16-bit little-endian mono at 16 kHz. The reader also
accepts 24-bit PCM; both are converted to float in [-1, 1]. The writer
always emits 16-bit PCM with deterministic rounding, so identical float
input produces byte-identical files.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CANONICAL_RATE = 16000


class WavFormatError(ValueError):
    """Unsupported or malformed WAV content."""


@dataclass
class AudioBuffer:
    samples: np.ndarray  # 1-D float array in [-1, 1]
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise WavFormatError(f"expected mono 1-D samples, got shape {self.samples.shape}")

    def __len__(self) -> int:
        return len(self.samples)


def read_wav(path) -> AudioBuffer:
    with wave.open(str(path), "rb") as w:
        channels = w.getnchannels()
        width = w.getsampwidth()
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    if channels != 1:
        raise WavFormatError(f"{path}: expected mono, got {channels} channels")
    if width == 2:
        data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif width == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3)
        ints = (b[:, 0].astype(np.int32)
                | (b[:, 1].astype(np.int32) << 8)
                | (b[:, 2].astype(np.int32) << 16))
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        data = ints.astype(np.float64) / float(1 << 23)
    else:
        raise WavFormatError(f"{path}: unsupported sample width {width * 8} bits")
    return AudioBuffer(data, rate)


def write_wav(path, buf: AudioBuffer) -> None:
    clipped = np.clip(np.asarray(buf.samples, dtype=np.float64), -1.0, 1.0)
    ints = np.clip(np.rint(clipped * 32768.0), -32768, 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(buf.sample_rate)
        w.writeframes(ints.tobytes())
