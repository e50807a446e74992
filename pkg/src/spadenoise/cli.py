"""Command-line entry point: ``spadenoise <command> ...``.

Commands
    dwt / idwt / pyramid   Haar analysis and synthesis on image or tensor files
    gradcheck              finite-difference verification of every backward pass
    train                  train a model from a ``key = value`` config
    denoise                run a checkpoint on one image
    eval                   PSNR / SSIM over a ``clean/`` + ``noisy/`` pair directory
    ablate                 one model per SPA level, identical budgets, PSNR table

Errors in user input print ``error: ...`` and exit with status 2.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as X
from . import fileio as F
from . import gradcheck as G
from . import metrics as M
from . import network as N
from . import training as T
from . import wavelet as W

IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm")


class CliError(Exception):
    pass


def _load_chw(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise CliError(f"no such file: {path}")
    arr = F.load_array(path)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise CliError(f"{path}: expected an H x W or C x H x W array, got shape {arr.shape}")
    return arr


def _band_name(level: int, band: str) -> str:
    return f"l{level}_{band}.spat"


def _write_pyramid(pyr: W.SubbandPyramid, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "ll.spat"]
    F.save_tensor(written[0], pyr.top_ll)
    for i, sub in enumerate(pyr.highs, start=1):
        for band, t in zip(W.BANDS[1:], sub.as_tuple()):
            written.append(out / _band_name(i, band))
            F.save_tensor(written[-1], t)
    return written


def _read_pyramid(src: Path) -> W.SubbandPyramid:
    if not (src / "ll.spat").exists():
        raise CliError(f"{src}: no ll.spat band file")
    highs = []
    level = 1
    while (src / _band_name(level, "lh")).exists():
        bands = []
        for band in W.BANDS[1:]:
            path = src / _band_name(level, band)
            if not path.exists():
                raise CliError(f"{src}: level {level} is missing {path.name}")
            bands.append(F.load_tensor(path))
        highs.append(W.SubbandSet(*bands))
        level += 1
    return W.SubbandPyramid(F.load_tensor(src / "ll.spat"), highs)


def _save_reconstruction(x: np.ndarray, out: Path) -> None:
    F.save_array(out, x)
    print(f"wrote {out}")


def cmd_dwt(args) -> int:
    return _analyse(args.input, 1, Path(args.out))


def cmd_idwt(args) -> int:
    pyr = _read_pyramid(Path(args.input))
    if pyr.levels != 1:
        raise CliError(f"idwt expects a single-level band directory, found {pyr.levels} levels")
    _save_reconstruction(W.reconstruct_pyramid(pyr), Path(args.out))
    return 0


def cmd_pyramid(args) -> int:
    if args.reconstruct:
        _save_reconstruction(W.reconstruct_pyramid(_read_pyramid(Path(args.input))), Path(args.out))
        return 0
    return _analyse(args.input, args.levels, Path(args.out))


def _analyse(path, levels: int, out: Path) -> int:
    x = _load_chw(path)
    for p in _write_pyramid(W.build_pyramid(x, levels), out):
        print(f"wrote {p}")
    return 0


def cmd_gradcheck(args) -> int:
    sign = -1.0 if args.corrupt_backward else 1.0
    ok = True
    for res in G.SUITES[args.module](args.seed, sign):
        print(res.line())
        ok &= res.passed
    if not ok:
        print(f"gradcheck FAILED (threshold rel {G.RTOL:g})", file=sys.stderr)
    return 0 if ok else 1


def _run_config(args) -> X.RunConfig:
    if args.config is None:
        run = X.RunConfig()
    else:
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"no such config file: {path}")
        try:
            run = X.RunConfig.from_kv(F.parse_kv(path.read_text(), str(path)))
        except ValueError as exc:
            raise CliError(f"{path}: {exc}") from exc
    if getattr(args, "seed", None) is not None:
        run.train.seed = args.seed
    return run


def cmd_train(args) -> int:
    run = _run_config(args)
    out = Path(args.out)
    try:
        result = T.train(run.model, run.train, run.noise, out_dir=out)
    except T.TrainingDiverged as exc:
        raise CliError(f"{exc}; last good weights saved to {out / 'model.ckpt'}") from exc
    losses = result.losses
    if losses.size:
        print(f"trained {run.train.iterations} iterations, final loss {losses[-1]:.5f}")
    print(f"wrote {out / 'model.ckpt'} and {out / 'loss.tsv'}")
    return 0


def _load_model(path) -> tuple[N.ModelConfig, N.ModelWeights]:
    path = Path(path)
    if not path.exists():
        raise CliError(f"no such checkpoint: {path}")
    return F.load_checkpoint(path)


def cmd_denoise(args) -> int:
    cfg, weights = _load_model(args.checkpoint)
    x = _load_chw(args.input)
    if x.shape[0] != cfg.input_channels:
        raise CliError(f"checkpoint expects {cfg.input_channels} channels, image has {x.shape[0]}")
    F.save_array(args.out, N.denoise_image(x, weights, cfg))
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    root = Path(args.pairs)
    clean_dir, noisy_dir = root / "clean", root / "noisy"
    for d in (clean_dir, noisy_dir):
        if not d.is_dir():
            raise CliError(f"{root}: missing directory {d.name}/")
    names = sorted(p.name for p in clean_dir.iterdir() if p.is_file())
    if not names:
        raise CliError(f"{clean_dir}: no images")
    model = _load_model(args.checkpoint) if args.checkpoint else None
    report = M.MetricReport()
    for name in names:
        if not (noisy_dir / name).exists():
            raise CliError(f"{noisy_dir}: missing counterpart for {name}")
        clean, noisy = _load_chw(clean_dir / name), _load_chw(noisy_dir / name)
        if model is not None:
            noisy = N.denoise_image(noisy, model[1], model[0])
        report.add(name, clean, noisy, args.peak)
    print(report.to_text())
    if args.out:
        Path(args.out).write_text(report.to_kv())
        print(f"wrote {args.out}")
    return 0


def cmd_ablate(args) -> int:
    run = _run_config(args)
    try:
        levels = [int(v) for v in args.levels.split(",")]
        seeds = [int(v) for v in args.seeds.split(",")] if args.seeds else [run.train.seed]
    except ValueError as exc:
        raise CliError(f"bad level/seed list: {exc}") from exc
    rows = X.ablate(run, levels, seeds)
    table = X.ablation_table(rows)
    print(table)
    if args.out:
        Path(args.out).write_text(table + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spadenoise", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("dwt", help="one-level Haar analysis into ll / l1_* band files")
    s.add_argument("input")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_dwt)

    s = sub.add_parser("idwt", help="invert a one-level band directory")
    s.add_argument("input", help="band directory")
    s.add_argument("--out", required=True, help="output .spat / .pgm / .ppm")
    s.set_defaults(func=cmd_idwt)

    s = sub.add_parser("pyramid", help="multi-level analysis, or synthesis with --reconstruct")
    s.add_argument("input")
    s.add_argument("--levels", type=int, default=1)
    s.add_argument("--reconstruct", action="store_true", help="input is a band directory")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pyramid)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    s.add_argument("--module", choices=sorted(G.SUITES), default="layers")
    s.add_argument("--seed", type=int, default=0)
    # negative control: flips the sign of every analytic gradient
    s.add_argument("--corrupt-backward", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("train", help="train on synthetic pairs")
    s.add_argument("--config", required=True, help="key = value config file")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="directory for model.ckpt and loss.tsv")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("denoise", help="denoise one image with a checkpoint")
    s.add_argument("input")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_denoise)

    s = sub.add_parser("eval", help="PSNR / SSIM over a pair directory")
    s.add_argument("pairs", help="directory holding clean/ and noisy/ with matching file names")
    s.add_argument("--checkpoint", help="denoise the noisy images first")
    s.add_argument("--peak", type=float, default=1.0)
    s.add_argument("--out", help="also write the report as key = value text")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="train one model per SPA level and tabulate held-out PSNR")
    s.add_argument("--levels", required=True, help="comma-separated, e.g. 0,1,2")
    s.add_argument("--seeds", help="comma-separated training seeds (default: --seed)")
    s.add_argument("--seed", type=int)
    s.add_argument("--config", help="key = value config file (budget, noise, held-out set)")
    s.add_argument("--out", help="also write the table here")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CliError, F.FormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
