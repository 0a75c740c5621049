"""PSNR, blocking effect factor, PSNR-B, SSIM and the mean BEF/MSE lower bound."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, astuple, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imgio import as_array, load_image, luma

PEAK = 255.0


@dataclass
class MetricReport:
    psnr: float
    psnr_b: float
    ssim: float
    bef: float
    bef_over_mse: float


def _pair(a, b):
    a, b = as_array(a), as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError("metrics expect single-plane images")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """PSNR in dB on the [0, 255] scale; ``inf`` for identical images."""
    err = mse(a, b)
    if err == 0:
        return math.inf
    return 10.0 * math.log10(PEAK**2 / err)


def _boundary_stats(img: np.ndarray, block: int):
    dh = np.diff(img, axis=1) ** 2  # pair (x, x+1) at column x
    dv = np.diff(img, axis=0) ** 2
    hmask = (np.arange(1, img.shape[1]) % block) == 0
    vmask = (np.arange(1, img.shape[0]) % block) == 0
    b_sum = dh[:, hmask].sum() + dv[vmask, :].sum()
    b_cnt = dh[:, hmask].size + dv[vmask, :].size
    c_sum = dh[:, ~hmask].sum() + dv[~vmask, :].sum()
    c_cnt = dh[:, ~hmask].size + dv[~vmask, :].size
    d_b = b_sum / b_cnt if b_cnt else 0.0
    d_c = c_sum / c_cnt if c_cnt else 0.0
    return float(d_b), float(d_c)


def bef(img, block: int = 8) -> float:
    """Blocking effect factor: eta * (D_B - D_B^C), eta = 0 unless D_B > D_B^C."""
    data = as_array(img)
    if data.ndim != 2:
        raise ValueError("bef expects a single-plane image")
    if min(data.shape) < 2 * block:
        raise ValueError(f"image {data.shape} smaller than two {block}-pixel blocks")
    d_b, d_c = _boundary_stats(data, block)
    if d_b <= d_c:
        return 0.0
    eta = math.log2(block) / math.log2(min(data.shape))
    return eta * (d_b - d_c)


def psnr_b(reference, distorted) -> float:
    a, b = _pair(reference, distorted)
    denom = mse(a, b) + bef(b)
    if denom == 0:
        return math.inf
    return 10.0 * math.log10(PEAK**2 / denom)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def ssim(a, b, k1: float = 0.01, k2: float = 0.03, win: int = 11, sigma: float = 1.5) -> float:
    """Single-scale SSIM, Gaussian window, mean over valid window positions."""
    a, b = _pair(a, b)
    if min(a.shape) < win:
        raise ValueError(f"images must be at least {win}x{win}")
    g = _gaussian_window(win, sigma)
    r = win // 2

    def filt(x):
        y = ndimage.correlate1d(x, g, axis=0, mode="constant")
        y = ndimage.correlate1d(y, g, axis=1, mode="constant")
        return y[r : x.shape[0] - r, r : x.shape[1] - r]

    c1 = (k1 * PEAK) ** 2
    c2 = (k2 * PEAK) ** 2
    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a * mu_a
    sbb = filt(b * b) - mu_b * mu_b
    sab = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def bef_over_mse(reference, distorted) -> float:
    a, b = _pair(reference, distorted)
    err = mse(a, b)
    blk = bef(b)
    if err == 0:
        return math.inf if blk > 0 else math.nan
    return blk / err


def report(reference, distorted) -> MetricReport:
    a, b = _pair(reference, distorted)
    return MetricReport(
        psnr=psnr(a, b),
        psnr_b=psnr_b(a, b),
        ssim=ssim(a, b),
        bef=bef(b),
        bef_over_mse=bef_over_mse(a, b),
    )


def bef_mse_lower_bound(mean_psnr: float, mean_psnr_b: float) -> float:
    """Jensen lower bound on the mean per-image BEF/MSE from mean PSNR and PSNR-B.

    Per image, BEF/MSE = 10**((PSNR - PSNR_B)/10) - 1; convexity of the
    exponential bounds the mean from below by the value at the mean gap.
    """
    if mean_psnr < mean_psnr_b:
        raise ValueError("mean PSNR must be >= mean PSNR-B")
    return 10.0 ** ((mean_psnr - mean_psnr_b) / 10.0) - 1.0


# --- dataset evaluation --------------------------------------------------------

CSV_COLUMNS = ["filename"] + [f.name for f in fields(MetricReport)]
IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm")


@dataclass
class EvaluationTable:
    rows: list  # (filename, MetricReport)

    def finite_rows(self):
        return [r for _, r in self.rows if math.isfinite(r.psnr) and math.isfinite(r.psnr_b)]

    def means(self) -> MetricReport:
        finite = self.finite_rows()
        ssims = [r.ssim for _, r in self.rows]
        if not finite:
            nan = math.nan
            return MetricReport(nan, nan, float(np.mean(ssims)) if ssims else nan, nan, nan)
        return MetricReport(
            psnr=float(np.mean([r.psnr for r in finite])),
            psnr_b=float(np.mean([r.psnr_b for r in finite])),
            ssim=float(np.mean(ssims)),
            bef=float(np.mean([r.bef for r in finite])),
            bef_over_mse=float(np.mean([r.bef_over_mse for r in finite])),
        )

    def bound(self) -> float:
        m = self.means()
        if not math.isfinite(m.psnr):
            return math.nan
        return bef_mse_lower_bound(m.psnr, m.psnr_b)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for name, r in self.rows:
            w.writerow([name] + [_fmt(v) for v in astuple(r)])
        w.writerow(["#mean"] + [_fmt(v) for v in astuple(self.means())])
        bound = self.bound()
        w.writerow(["#bound", "", "", "", "", _fmt(bound)])
        return buf.getvalue()


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return repr(float(v))


def _list_images(directory) -> dict:
    d = Path(directory)
    return {p.name: p for p in sorted(d.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def _evaluate_pairs(reference: dict, other: dict, jobs: int = 1) -> EvaluationTable:
    names = sorted(reference)

    def one(name):
        ref = luma(load_image(reference[name])).data
        img = luma(load_image(other[name])).data
        return name, report(ref, img)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as pool:
            rows = list(pool.map(one, names))
    else:
        rows = [one(n) for n in names]
    return EvaluationTable(rows)


def evaluate_dataset(restored_dir, reference_dir, degraded_dir=None, jobs: int = 1):
    """Per-image metrics of restored (and optionally degraded) images against references.

    Returns ``{"restored": EvaluationTable, "degraded": EvaluationTable | None}``.
    Filenames must match across directories.
    """
    reference = _list_images(reference_dir)
    if not reference:
        raise ValueError(f"no images in {reference_dir}")
    out = {}
    for key, directory in (("restored", restored_dir), ("degraded", degraded_dir)):
        if directory is None:
            out[key] = None
            continue
        images = _list_images(directory)
        if set(images) != set(reference):
            missing = sorted(set(reference) ^ set(images))
            raise ValueError(f"filename mismatch between {directory} and {reference_dir}: {missing[:5]}")
        out[key] = _evaluate_pairs(reference, images, jobs)
    return out
