"""Command-line interface wiring simulation, training, inference,
evaluation, and self-verification over WAV files.

Exit codes: 0 success, 2 I/O or configuration failure, 3 empty input,
4 non-finite loss, 5 sample-rate mismatch, 1 failed verification. Unknown
flags and unknown config keys are hard errors. Every effective config value
is echoed at startup.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .audio import AudioBuffer, read_wav, write_wav
from .dsp import StftConfig, stft_magnitude
from .metrics import evaluate, write_report
from .model import ModelConfig, SampleRateMismatch, forward
from .simulate import ManifestError, generate_corpus
from .train import (ManifestEmpty, NonFiniteGradient, NonFiniteLoss, TrainConfig,
                    load_checkpoint, train)
from .verify import dsp_suite, gradcheck_full_model, params_suite

EXIT_IO = 2
EXIT_EMPTY = 3
EXIT_NONFINITE = 4
EXIT_SAMPLE_RATE = 5

SPECTROGRAM_CFG = StftConfig(512, 128, 512)


# -- configuration ---------------------------------------------------------------


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    simulate: dict

    def echo(self, out=None) -> None:
        out = out if out is not None else sys.stdout
        for k, v in sorted(self.model.to_text_dict().items()):
            print(f"config: {k} = {v}", file=out)
        for k, v in sorted(self.train.to_text_dict().items()):
            print(f"config: {k} = {v}", file=out)
        for k, v in sorted(self.simulate.items()):
            print(f"config: simulate.{k} = {v}", file=out)


_SIM_KEYS = {"subset": str, "split": str, "seed": int, "count": int}


def _coerce_field(cls, key: str, raw: str):
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    if key not in types:
        raise ValueError(f"unknown key {key!r} for section [{cls.__name__}]")
    t = str(types[key])
    if key == "refinement_dilations":
        return tuple(int(v) for v in raw.replace(" ", "").split(","))
    if "int" in t:
        return int(raw)
    if "float" in t:
        return float(raw)
    return raw


def load_run_config(path: str | None, overrides: list) -> RunConfig:
    """INI sections [model] [train] [simulate]; --set overrides win."""
    model_kw: dict = {}
    train_kw: dict = {}
    sim_kw: dict = {}
    items = []
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise FileNotFoundError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in ("model", "train", "simulate"):
                raise ValueError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                items.append((section, key, raw))
    for spec in overrides or []:
        key, _, raw = spec.partition("=")
        if not raw:
            raise ValueError(f"--set expects section.key=value, got {spec!r}")
        section, _, key = key.partition(".")
        items.append((section, key, raw))
    for section, key, raw in items:
        if section == "model":
            model_kw[key] = _coerce_field(ModelConfig, key, raw)
        elif section == "train":
            train_kw[key] = _coerce_field(TrainConfig, key, raw)
        elif section == "simulate":
            if key not in _SIM_KEYS:
                raise ValueError(f"unknown key {key!r} for section [simulate]")
            sim_kw[key] = _SIM_KEYS[key](raw)
        else:
            raise ValueError(f"unknown config section [{section}]")
    return RunConfig(ModelConfig(**model_kw), TrainConfig(**train_kw), sim_kw)


# -- commands ---------------------------------------------------------------------


def cmd_simulate(args) -> int:
    run = load_run_config(args.config, args.set)
    sim = dict(run.simulate)
    for key in _SIM_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            sim[key] = flag
    sim.setdefault("seed", 0)
    run.simulate = sim
    run.echo()
    missing = [k for k in ("subset", "split", "count") if k not in sim]
    if missing:
        print(f"error: missing simulate settings: {missing}", file=sys.stderr)
        return EXIT_IO
    if sim["count"] <= 0:
        print("error: --count must be positive", file=sys.stderr)
        return EXIT_EMPTY
    clean_dir = Path(args.clean_dir)
    if not clean_dir.is_dir():
        print(f"error: clean dir not found: {clean_dir}", file=sys.stderr)
        return EXIT_IO
    wavs = sorted(clean_dir.glob("*.wav"))
    if not wavs:
        print(f"error: no WAV files in {clean_dir}", file=sys.stderr)
        return EXIT_EMPTY
    manifest, records = generate_corpus(
        wavs, args.out_dir, sim["subset"], sim["split"], sim["seed"], sim["count"],
        sr=run.model.sample_rate)
    print(f"wrote {len(records)} distorted files; manifest: {manifest}")
    return 0


def cmd_train(args) -> int:
    run = load_run_config(args.config, args.set)
    run.echo()
    manifest = Path(args.manifest)
    if not manifest.is_file():
        print(f"error: manifest not found: {manifest}", file=sys.stderr)
        return EXIT_IO
    try:
        _, state, _ = train(run.model, run.train, manifest, args.out,
                            resume=args.resume, quiet=args.quiet)
    except (NonFiniteLoss, NonFiniteGradient) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NONFINITE
    except ManifestEmpty as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    print(f"finished at step {state.step}; checkpoint: {Path(args.out) / 'final.ckpt'}")
    return 0


def _write_pgm(path, mag: np.ndarray) -> None:
    """P5 grayscale, log magnitude, row = frequency bin."""
    db = 20.0 * np.log10(mag.T + 1e-5)
    lo, hi = db.min(), db.max()
    scale = 255.0 / (hi - lo) if hi > lo else 1.0
    img = ((db - lo) * scale).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def _dump_trace(out_dir: Path, stem: str, buf: AudioBuffer, trace) -> None:
    sr = buf.sample_rate
    for name, sig in (("mask", trace.mask), ("w", trace.w), ("refined", trace.refined)):
        if sig is not None:
            write_wav(out_dir / f"{stem}.{name}.wav", AudioBuffer(sig.data, sr))
    pairs = [("in", np.asarray(buf.samples)), ("out", trace.x_hat.data)]
    for tag, sig in pairs:
        if len(sig) >= SPECTROGRAM_CFG.window_len:
            mag = stft_magnitude(sig.astype(np.float64), SPECTROGRAM_CFG).data
            _write_pgm(out_dir / f"{stem}.{tag}.pgm", mag)


def cmd_restore(args) -> int:
    params, _, model_cfg, _ = load_checkpoint(args.ckpt)
    src = Path(args.infile)
    files = sorted(src.glob("*.wav")) if src.is_dir() else [src]
    if not files or not files[0].exists():
        print(f"error: no input WAVs at {src}", file=sys.stderr)
        return EXIT_EMPTY if src.is_dir() else EXIT_IO
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for f in files:
        buf = read_wav(f)
        try:
            with T.no_grad():
                trace = forward(buf, params, model_cfg)
        except SampleRateMismatch as e:
            print(f"error: {f}: {e}", file=sys.stderr)
            return EXIT_SAMPLE_RATE
        write_wav(out_dir / f.name, AudioBuffer(trace.x_hat.data, buf.sample_rate))
        if args.dump_trace:
            _dump_trace(out_dir, f.stem, buf, trace)
        print(f"restored {f.name} ({len(buf)} samples)")
    return 0


def cmd_evaluate(args) -> int:
    params, _, model_cfg, _ = load_checkpoint(args.ckpt)
    subset = None if args.subset == "all" else args.subset
    report = evaluate(args.manifest, params, model_cfg, subset)
    write_report(args.report, report)
    for tag in report.subsets():
        m = report.means(tag)
        print(f"subset {tag} ({m['count']} files):")
        print(f"  si_sdr   in {m['si_sdr_in']:8.3f} dB   out {m['si_sdr_out']:8.3f} dB"
              f"   improvement {m['si_sdr_impr']:+.3f} dB")
        print(f"  mr-spect in {m['mrsd_in']:8.4f}      out {m['mrsd_out']:8.4f}")
    print(f"report: {args.report}")
    return 0


def cmd_verify(args) -> int:
    results = []
    if args.suite == "gradcheck":
        err, n = gradcheck_full_model()
        results.append((f"full-model gradient check: max rel err {err:.2e} "
                        f"over {n} params (tol 1e-4)", err < 1e-4))
    elif args.suite == "params":
        results.extend(params_suite())
    else:
        results.extend(dsp_suite())
    failed = False
    for msg, ok in results:
        print(("PASS " if ok else "FAIL ") + msg)
        failed = failed or not ok
    return 1 if failed else 0


# -- argument parsing --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hdrs",
                                description="waveform speech restoration engine")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="synthesize a distorted corpus + manifest")
    sp.add_argument("--clean-dir", required=True, help="directory of clean 16 kHz WAVs")
    sp.add_argument("--out-dir", required=True, help="output directory")
    sp.add_argument("--subset", choices=("N", "R", "B", "A"), help="distortion subset")
    sp.add_argument("--split", choices=("train", "test"), help="parameter pools")
    sp.add_argument("--seed", type=int, help="corpus seed")
    sp.add_argument("--count", type=int, help="number of utterances to generate")
    sp.add_argument("--config", help="INI config file")
    sp.add_argument("--set", action="append", metavar="SEC.KEY=VAL",
                    help="override a config value")
    sp.set_defaults(fn=cmd_simulate)

    tp = sub.add_parser("train", help="run the optimization loop")
    tp.add_argument("--config", help="INI config file ([model]/[train] sections)")
    tp.add_argument("--manifest", required=True, help="training corpus manifest")
    tp.add_argument("--out", required=True, help="run directory (checkpoints, log)")
    tp.add_argument("--resume", help="checkpoint to resume from")
    tp.add_argument("--quiet", action="store_true", help="suppress per-step lines")
    tp.add_argument("--set", action="append", metavar="SEC.KEY=VAL",
                    help="override a config value")
    tp.set_defaults(fn=cmd_train)

    rp = sub.add_parser("restore", help="run inference on WAV file(s)")
    rp.add_argument("--ckpt", required=True, help="checkpoint path")
    rp.add_argument("--in", dest="infile", required=True, help="input WAV or directory")
    rp.add_argument("--out", required=True, help="output directory")
    rp.add_argument("--dump-trace", action="store_true",
                    help="also write mask/w/refined WAVs and PGM spectrograms")
    rp.set_defaults(fn=cmd_restore)

    ep = sub.add_parser("evaluate", help="score restored outputs against references")
    ep.add_argument("--ckpt", required=True, help="checkpoint path")
    ep.add_argument("--manifest", required=True, help="evaluation manifest")
    ep.add_argument("--subset", default="all", choices=("N", "R", "B", "A", "all"))
    ep.add_argument("--report", required=True, help="output report path (TSV)")
    ep.set_defaults(fn=cmd_evaluate)

    vp = sub.add_parser("verify", help="run self-check suites")
    vp.add_argument("--suite", required=True, choices=("gradcheck", "params", "dsp"))
    vp.set_defaults(fn=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ManifestError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (FileNotFoundError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
