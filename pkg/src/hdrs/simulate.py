"""Seedable distortion synthesis: reverb, band-limiting, and noise at SNR.

One utterance is corrupted as ``bandlimit(clean * rir) + scaled_noise``
(reverb first, spectral shaping outermost, noise added last). Every random
draw derives from the record seed alone, so a corpus regenerates
bit-identically from its manifest. Subset tags select which stages apply:
N = noise, R = noise+reverb, B = band-limit only, A = all three.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import CANONICAL_RATE, AudioBuffer, read_wav, write_wav
from .dsp import convolve_full, design_butterworth, filter_apply

SUBSETS = ("N", "R", "B", "A")
TRAIN_SNRS_DB = (0.0, 5.0, 10.0, 15.0)
TEST_SNRS_DB = (2.5, 7.5, 12.5, 17.5)
LOWPASS_RANGE_HZ = (4000.0, 7500.0)
HIGHPASS_RANGE_HZ = (10.0, 100.0)
SUBSET_B_TEST_CUTOFFS_HZ = (4000.0, 5000.0, 6000.0, 7000.0)
T60_RANGE_S = (0.2, 0.8)
FILTER_ORDER = 8
FILTER_KINDS = ("lowpass", "highpass", "bandpass")
PEAK_TARGET = 0.99


class SilentClean(ValueError):
    pass


class SilentNoise(ValueError):
    pass


class Unsupported(ValueError):
    pass


class ManifestError(ValueError):
    pass


@dataclass
class RirSpec:
    t60_seconds: float
    length_samples: int


@dataclass
class BandlimitSpec:
    kind: str  # lowpass | highpass | bandpass
    order: int
    cutoff_hz: object  # float, or (low, high) for bandpass
    family: str = "butterworth"


@dataclass
class DistortionSpec:
    seed: int
    subset: str
    snr_db: float | None = None
    rir: RirSpec | None = None
    bandlimit: BandlimitSpec | None = None

    def __post_init__(self):
        # the tag bounds which stages may appear; sample_spec always fills
        # every allowed stage, but a partial spec (identity pipeline) is legal
        allowed = {"N": (True, False, False), "R": (True, True, False),
                   "B": (False, False, True), "A": (True, True, True)}
        if self.subset not in allowed:
            raise ValueError(f"unknown subset {self.subset!r}")
        has = (self.snr_db is not None, self.rir is not None, self.bandlimit is not None)
        for name, h, a in zip(("snr_db", "rir", "bandlimit"), has, allowed[self.subset]):
            if h and not a:
                raise ValueError(f"subset {self.subset} forbids {name}")


def white_noise(n: int, seed_seq) -> np.ndarray:
    return np.random.default_rng(seed_seq).standard_normal(n)


def mix_at_snr(x: AudioBuffer, noise: AudioBuffer, snr_db: float, seed: int) -> AudioBuffer:
    """Add noise scaled so signal power over noise power hits the target dB.

    A noise track shorter than the signal is tiled; longer tracks are
    cropped from a seeded offset. The gain is computed from the powers of
    the actual segment mixed in.
    """
    if x.sample_rate != noise.sample_rate:
        raise ValueError("sample rates differ between signal and noise")
    sig = np.asarray(x.samples, dtype=np.float64)
    n = np.asarray(noise.samples, dtype=np.float64)
    p_sig = float(np.mean(sig * sig))
    if p_sig == 0.0:
        raise SilentClean("clean signal has zero power")
    if not np.any(n):
        raise SilentNoise("noise signal is all zeros")
    if len(n) < len(sig):
        n = np.tile(n, -(-len(sig) // len(n)) + 1)
    if len(n) > len(sig):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
        ofs = int(rng.integers(0, len(n) - len(sig) + 1))
        n = n[ofs:ofs + len(sig)]
    p_noise = float(np.mean(n * n))
    if p_noise == 0.0:
        raise SilentNoise("selected noise segment has zero power")
    gain = np.sqrt(p_sig / (p_noise * 10.0 ** (snr_db / 10.0)))
    return AudioBuffer(sig + gain * n, x.sample_rate)


def synth_rir(t60: float, length: int, seed, sr: int) -> np.ndarray:
    """Unit direct path followed by noise under an exponential -60 dB/T60
    envelope; tail energy capped at 3x the direct-path energy."""
    if t60 <= 0:
        raise ValueError("t60 must be positive")
    h = np.zeros(max(int(length), 1))
    h[0] = 1.0
    if len(h) > 1:
        t = np.arange(1, len(h), dtype=np.float64)
        env = 10.0 ** (-3.0 * t / (t60 * sr))
        tail = np.random.default_rng(seed).standard_normal(len(h) - 1) * env
        e_tail = float(np.sum(tail * tail))
        if e_tail > 3.0:
            tail *= np.sqrt(3.0 / e_tail)
        h[1:] = tail
    return h


def _design_bandlimit(bl: BandlimitSpec, sr: int):
    if bl.family != "butterworth":
        raise Unsupported(f"filter family {bl.family!r} not implemented")
    return design_butterworth(bl.order, bl.cutoff_hz, float(sr), bl.kind)


def apply_distortion(x: AudioBuffer, spec: DistortionSpec,
                     noise: AudioBuffer | None = None):
    """Run the configured stages in order; returns (distorted, peak gain).

    The peak gain is 1.0 unless the mixture exceeded full scale, in which
    case it was rescaled to a 0.99 peak (recorded in the manifest).
    """
    y = np.asarray(x.samples, dtype=np.float64)
    sr = x.sample_rate
    if spec.rir is not None:
        rir = synth_rir(spec.rir.t60_seconds, spec.rir.length_samples,
                        np.random.SeedSequence([spec.seed, 1]), sr)
        y = convolve_full(y, rir)
    if spec.bandlimit is not None:
        y = filter_apply(_design_bandlimit(spec.bandlimit, sr),
                         AudioBuffer(y, sr)).samples
    if spec.snr_db is not None:
        if noise is None:
            raise ValueError("spec requests noise but none was provided")
        y = mix_at_snr(AudioBuffer(y, sr), noise, spec.snr_db, spec.seed).samples
    peak = float(np.max(np.abs(y))) if len(y) else 0.0
    gain = 1.0
    if peak > 1.0:
        gain = PEAK_TARGET / peak
        y = y * gain
    return AudioBuffer(y, sr), gain


def record_noise(spec: DistortionSpec, n: int, sr: int) -> AudioBuffer | None:
    """The seeded synthetic noise track for a record, or None if unused."""
    if spec.snr_db is None:
        return None
    return AudioBuffer(white_noise(n, np.random.SeedSequence([spec.seed, 3])), sr)


def sample_spec(subset: str, split: str, seed: int,
                sr: int = CANONICAL_RATE) -> DistortionSpec:
    """Draw one distortion recipe; identical seeds give identical specs."""
    if subset not in SUBSETS:
        raise ValueError(f"unknown subset {subset!r}")
    if split not in ("train", "test"):
        raise ValueError(f"unknown split {split!r}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    snr = rir = bandlimit = None
    if subset in ("N", "R", "A"):
        pool = TRAIN_SNRS_DB if split == "train" else TEST_SNRS_DB
        snr = float(pool[rng.integers(len(pool))])
    if subset in ("R", "A"):
        t60 = float(rng.uniform(*T60_RANGE_S))
        rir = RirSpec(t60, int(round(t60 * sr)))
    if subset in ("B", "A"):
        if subset == "B" and split == "test":
            cutoff = float(SUBSET_B_TEST_CUTOFFS_HZ[
                rng.integers(len(SUBSET_B_TEST_CUTOFFS_HZ))])
            bandlimit = BandlimitSpec("lowpass", FILTER_ORDER, cutoff)
        else:
            kind = FILTER_KINDS[rng.integers(len(FILTER_KINDS))]
            lo = float(rng.uniform(*HIGHPASS_RANGE_HZ))
            hi = float(rng.uniform(*LOWPASS_RANGE_HZ))
            cutoff = {"lowpass": hi, "highpass": lo, "bandpass": (lo, hi)}[kind]
            bandlimit = BandlimitSpec(kind, FILTER_ORDER, cutoff)
    return DistortionSpec(seed=seed, subset=subset, snr_db=snr,
                          rir=rir, bandlimit=bandlimit)


def spec_from_fields(seed: int, subset: str, snr_db, t60, filter_kind, cutoffs,
                     sr: int = CANONICAL_RATE) -> DistortionSpec:
    """Rebuild a spec from manifest fields (rir length and filter order
    follow the same fixed rules used when sampling)."""
    rir = None if t60 is None else RirSpec(t60, int(round(t60 * sr)))
    bandlimit = None
    if filter_kind is not None:
        bandlimit = BandlimitSpec(filter_kind, FILTER_ORDER, cutoffs)
    return DistortionSpec(seed=seed, subset=subset, snr_db=snr_db,
                          rir=rir, bandlimit=bandlimit)


# -- manifests -----------------------------------------------------------------


@dataclass
class ManifestRecord:
    clean_path: str
    distorted_path: str
    subset: str
    seed: int
    snr_db: float | None
    t60: float | None
    filter_kind: str | None
    cutoffs: object  # float | (low, high) | None
    norm_gain: float

    def spec(self, sr: int = CANONICAL_RATE) -> DistortionSpec:
        return spec_from_fields(self.seed, self.subset, self.snr_db, self.t60,
                                self.filter_kind, self.cutoffs, sr)


def _fmt_cutoffs(c) -> str:
    # repr round-trips floats exactly; regeneration depends on it
    if c is None:
        return "-"
    if isinstance(c, tuple):
        return f"{c[0]!r}:{c[1]!r}"
    return repr(c)


def _parse_cutoffs(s: str):
    if s == "-":
        return None
    if ":" in s:
        lo, hi = s.split(":")
        return (float(lo), float(hi))
    return float(s)


def write_manifest(path, records: list, sr: int = CANONICAL_RATE) -> None:
    lines = [f"#sample_rate={sr}"]
    for r in records:
        lines.append("\t".join([
            r.clean_path, r.distorted_path, r.subset, str(r.seed),
            "-" if r.snr_db is None else repr(r.snr_db),
            "-" if r.t60 is None else repr(r.t60),
            r.filter_kind or "-", _fmt_cutoffs(r.cutoffs), repr(r.norm_gain),
        ]))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path):
    """Returns (sample_rate, records); malformed lines name their number."""
    sr = CANONICAL_RATE
    records = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition("=")
            if key == "sample_rate":
                sr = int(val)
            continue
        parts = line.split("\t")
        if len(parts) != 9:
            raise ManifestError(f"{path}: line {lineno}: expected 9 fields, got {len(parts)}")
        try:
            records.append(ManifestRecord(
                clean_path=parts[0], distorted_path=parts[1], subset=parts[2],
                seed=int(parts[3]),
                snr_db=None if parts[4] == "-" else float(parts[4]),
                t60=None if parts[5] == "-" else float(parts[5]),
                filter_kind=None if parts[6] == "-" else parts[6],
                cutoffs=_parse_cutoffs(parts[7]),
                norm_gain=float(parts[8]),
            ))
        except (ValueError, IndexError) as e:
            raise ManifestError(f"{path}: line {lineno}: {e}") from None
    return sr, records


def derive_record_seed(corpus_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([corpus_seed, index]).generate_state(1)[0])


def generate_corpus(clean_paths: list, out_dir, subset: str, split: str,
                    seed: int, count: int, sr: int = CANONICAL_RATE):
    """Distort ``count`` utterances (cycling through the clean list) and
    write WAVs plus a manifest; fully determined by ``seed``."""
    if count <= 0:
        raise ValueError("count must be positive")
    if not clean_paths:
        raise ValueError("no clean files supplied")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clean_paths = sorted(str(p) for p in clean_paths)
    records = []
    for i in range(count):
        clean_path = clean_paths[i % len(clean_paths)]
        clean = read_wav(clean_path)
        if clean.sample_rate != sr:
            raise ManifestError(f"{clean_path}: expected {sr} Hz, got {clean.sample_rate}")
        rseed = derive_record_seed(seed, i)
        spec = sample_spec(subset, split, rseed, sr)
        noise = record_noise(spec, len(clean), sr)
        distorted, gain = apply_distortion(clean, spec, noise)
        name = f"{Path(clean_path).stem}_{subset}_{i:05d}.wav"
        dist_path = out_dir / name
        write_wav(dist_path, distorted)
        bl = spec.bandlimit
        records.append(ManifestRecord(
            clean_path=clean_path, distorted_path=str(dist_path), subset=subset,
            seed=rseed, snr_db=spec.snr_db,
            t60=None if spec.rir is None else spec.rir.t60_seconds,
            filter_kind=None if bl is None else bl.kind,
            cutoffs=None if bl is None else bl.cutoff_hz,
            norm_gain=gain,
        ))
    manifest_path = out_dir / "manifest.tsv"
    write_manifest(manifest_path, records, sr)
    return manifest_path, records
