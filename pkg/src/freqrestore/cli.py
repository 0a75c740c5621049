"""Command-line entry point: ``freqrestore <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("freqrestore")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _images_in(directory):
    from .trainer import list_images

    return list_images(directory)


def _luma_u8(path, multiple: int):
    from .imgio import U8, ImageBuffer, load_image, luma
    from .jpegsim import prepare_dims

    img = luma(load_image(path))
    return prepare_dims(ImageBuffer(img.to_u8().data, U8), multiple)


def _out_dir(path) -> Path:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _map_jobs(fn, items, jobs: int):
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _write_text(text: str, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


# --- subcommands -------------------------------------------------------------------

def cmd_degrade(args):
    from .imgio import save_image
    from .jpegsim import jpeg_degrade

    out = _out_dir(args.out)

    def one(path):
        save_image(jpeg_degrade(_luma_u8(path, 8), args.qf), out / f"{path.stem}.png")

    _map_jobs(one, _images_in(args.input), args.jobs)


def cmd_fit_bins(args):
    from .freqlab import fit_bins, patch_dct
    from .imgio import laplacian

    def coeffs(path):
        return patch_dct(laplacian(_luma_u8(path, 4)), 4, 4).values.reshape(-1, 16)

    samples = np.concatenate(_map_jobs(coeffs, _images_in(args.input), args.jobs))
    bins = fit_bins(samples, args.n_cl)
    bins.save(args.out)
    log.info("fitted %d classes on %d samples per channel", args.n_cl, samples.shape[0])


def cmd_label(args):
    from .freqlab import BinSpec
    from .imgio import REAL, ImageBuffer
    from .trainer import make_labels

    bins = BinSpec.load(args.bins)
    out = _out_dir(args.out)
    paths = [Path(args.input)] if Path(args.input).is_file() else _images_in(args.input)
    for path in paths:
        target = ImageBuffer(_luma_u8(path, 4).data, REAL)
        y, q = make_labels(target, bins, q_source=args.q_source)
        np.savez(out / f"{path.stem}.npz", labels=y.labels, coeffs=q.values)


def _config(args):
    from .trainer import TrainConfig, load_config

    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, raw = (s.strip() for s in item.split("=", 1))
        overrides[key] = _typed(key, raw)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        return load_config(args.config, overrides)
    return TrainConfig(**overrides)


def _typed(key, raw):
    from dataclasses import fields

    from .trainer import TrainConfig, _parse_value

    types = {f.name: f.type for f in fields(TrainConfig)}
    if key not in types:
        raise UsageError(f"unknown config key {key!r}")
    try:
        return _parse_value(raw, types[key])
    except ValueError as exc:
        raise UsageError(f"--set {key}: {exc}")


def _dataset(args, config):
    from .freqlab import BinSpec
    from .trainer import build_dataset

    bins = BinSpec.load(args.bins) if args.bins else None
    return build_dataset(args.data, config, bins=bins, jobs=args.jobs)


def cmd_train_classifier(args):
    from .trainer import train_classifier

    config = _config(args)
    train_classifier(_dataset(args, config), config, args.out, args.log)


def cmd_train_ced(args):
    from .checkpoint import load_checkpoint
    from .trainer import train_ced

    config = _config(args)
    classifier = None
    if args.mode == "est":
        if not args.classifier:
            raise UsageError("--mode est requires --classifier")
        classifier, _, _ = load_checkpoint(args.classifier)
    train_ced(_dataset(args, config), config, args.mode, classifier, args.out, args.log)


def cmd_restore(args):
    from .checkpoint import load_checkpoint
    from .imgio import save_image
    from .models import restore

    classifier, bins, _ = load_checkpoint(args.classifier)
    ced, _, cfg = load_checkpoint(args.ced)
    zero = args.zero_coeffs or cfg.get("ced_mode") == "ed"
    out = _out_dir(args.out)

    def one(path):
        save_image(restore(classifier, ced, bins, _luma_u8(path, 8), zero_coeffs=zero), out / f"{path.stem}.png")

    _map_jobs(one, _images_in(args.input), args.jobs)


def cmd_evaluate(args):
    from .metrics import evaluate_dataset

    result = evaluate_dataset(args.restored, args.reference, args.degraded, jobs=args.jobs)
    _write_text(result["restored"].to_csv(), args.out)
    if result["degraded"] is not None:
        target = None if args.out is None else Path(args.out).with_name(Path(args.out).stem + "_degraded.csv")
        _write_text(result["degraded"].to_csv(), target)


def _pair(text):
    try:
        u, v = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected u,v, got {text!r}")
    return u, v


def cmd_freq_hist(args):
    from .freqlab import freq_histogram, frequency_samples
    from .imgio import load_image

    u, v = args.channel
    if not (0 <= u < args.block and 0 <= v < args.block):
        raise UsageError(f"channel {u},{v} outside a {args.block}x{args.block} block")
    sets = {Path(d).name: [load_image(p) for p in _images_in(d)] for d in args.input}
    lo, hi, n = args.range
    if lo is None:
        allv = np.concatenate([frequency_samples(imgs, args.block, (u, v)) for imgs in sets.values()])
        lo, hi = float(allv.min()), float(allv.max())
        if lo == hi:
            lo, hi = lo - 1.0, hi + 1.0
    edges = np.linspace(lo, hi, int(n) + 1)
    lines = ["set,bin_lo,bin_hi,count"]
    for name, imgs in sets.items():
        counts = freq_histogram(imgs, args.block, (u, v), edges)
        lines += [f"{name},{float(edges[k])!r},{float(edges[k + 1])!r},{int(c)}" for k, c in enumerate(counts)]
    _write_text("\n".join(lines) + "\n", args.out)


def cmd_grad_check(args):
    from .gradsuite import run_suite

    errors = run_suite(seeds=tuple(range(args.seed or 0, (args.seed or 0) + args.seeds)))
    worst = 0.0
    for name, err in errors.items():
        print(f"{name}\t{err:.3e}")
        worst = max(worst, err)
    print(f"max\t{worst:.3e}")
    if worst > args.tolerance:
        log.error("max relative error %.3e exceeds %.1e", worst, args.tolerance)
        return EXIT_NUMERIC
    return EXIT_OK


def _range(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("--range expects lo,hi,n")
    return float(parts[0]), float(parts[1]), int(parts[2])


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for every random draw")
    common.add_argument("--jobs", type=int, default=1, help="per-image worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="freqrestore", description="JPEG artifact removal with frequency-class guidance")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("degrade", parents=[common], help="JPEG-degrade a directory of images")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--qf", type=int, default=10)
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("fit-bins", parents=[common], help="fit equal-frequency coefficient bins")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--n-cl", type=int, default=7)
    s.set_defaults(func=cmd_fit_bins)

    s = sub.add_parser("label", parents=[common], help="write class and coefficient maps as .npz")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--bins", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--q-source", choices=("quantized", "raw"), default="quantized")
    s.set_defaults(func=cmd_label)

    for name, func in (("train-classifier", cmd_train_classifier), ("train-ced", cmd_train_ced)):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--data", required=True, help="directory of training images")
        s.add_argument("--out", required=True, help="checkpoint path")
        s.add_argument("--config")
        s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        s.add_argument("--bins", help="reuse a fitted BinSpec instead of fitting")
        s.add_argument("--log", help="per-epoch CSV log")
        if name == "train-ced":
            s.add_argument("--mode", choices=("gt", "est", "ed"), default="gt")
            s.add_argument("--classifier")
        s.set_defaults(func=func)

    s = sub.add_parser("restore", parents=[common], help="restore degraded images")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--classifier", required=True)
    s.add_argument("--ced", required=True)
    s.add_argument("--zero-coeffs", action="store_true", help="feed a zero coefficient map (ED baseline)")
    s.set_defaults(func=cmd_restore)

    s = sub.add_parser("evaluate", parents=[common], help="PSNR, PSNR-B, SSIM and BEF per image")
    s.add_argument("--restored", required=True)
    s.add_argument("--reference", required=True)
    s.add_argument("--degraded")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("freq-hist", parents=[common], help="histogram of one Laplacian-DCT channel")
    s.add_argument("--in", dest="input", action="append", required=True, help="image directory (repeatable)")
    s.add_argument("--channel", type=_pair, default=(7, 7))
    s.add_argument("--block", type=int, choices=(4, 8), default=8)
    s.add_argument("--range", type=_range, default=(None, None, 41), metavar="LO,HI,N")
    s.add_argument("--out")
    s.set_defaults(func=cmd_freq_hist)

    s = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient checks")
    s.add_argument("--seeds", type=int, default=3)
    s.add_argument("--tolerance", type=float, default=1e-4)
    s.set_defaults(func=cmd_grad_check)
    return p


def run(argv=None) -> int:
    from .imgio import ImageFormatError
    from .trainer import DivergenceError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        code = args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (DivergenceError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (FileNotFoundError, ImageFormatError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    return EXIT_OK if code is None else code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
