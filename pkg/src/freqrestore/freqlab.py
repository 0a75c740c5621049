"""Blockwise DCT, equal-frequency coefficient classes and coefficient histograms.

Layout conventions used throughout the package:

* A ``CoeffMap`` stores ``values`` with shape ``(n_rows, n_cols, n_ch)``: the
  patch grid (row-major, patch ``(i, j)`` covers pixel rows ``i*h_b..`` and
  columns ``j*w_b..``) and one channel per DCT frequency.
* Channel ``c`` holds frequency ``(u, v)`` with ``c = u * w_b + v``, ``u`` the
  vertical frequency, ``v`` the horizontal one, ``(0, 0)`` the DC term.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .imgio import ImageBuffer, REAL, as_array, laplacian, luma

SUPPORTED_DCT_SIZES = (4, 8)


@lru_cache(maxsize=None)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix ``C`` so that ``dct(x) = C @ x``."""
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    c = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * x + 1) * k / (2 * n))
    c[0] /= np.sqrt(2.0)
    c.flags.writeable = False
    return c


def _check_block(block) -> np.ndarray:
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2 or block.shape[0] != block.shape[1]:
        raise ValueError(f"expected a square block, got shape {block.shape}")
    if block.shape[0] not in SUPPORTED_DCT_SIZES:
        raise ValueError(f"unsupported block size {block.shape[0]}")
    return block


def dct2(block) -> np.ndarray:
    block = _check_block(block)
    c = dct_matrix(block.shape[0])
    return c @ block @ c.T


def idct2(coeffs) -> np.ndarray:
    coeffs = _check_block(coeffs)
    c = dct_matrix(coeffs.shape[0])
    return c.T @ coeffs @ c


def blockwise_dct(data: np.ndarray, w_b: int, h_b: int, inverse: bool = False) -> np.ndarray:
    """Apply the (inverse) DCT to every ``h_b x w_b`` tile of a 2-D array in place of the tile."""
    h, w = data.shape
    if h % h_b or w % w_b:
        raise ValueError(f"image {w}x{h} not divisible by patch {w_b}x{h_b}")
    cv, ch = dct_matrix(h_b), dct_matrix(w_b)
    tiles = data.reshape(h // h_b, h_b, w // w_b, w_b)
    if inverse:
        out = np.einsum("ka,ikjl,lb->iajb", cv, tiles, ch)
    else:
        out = np.einsum("ak,ikjl,bl->iajb", cv, tiles, ch)
    return out.reshape(h, w)


@dataclass
class CoeffMap:
    values: np.ndarray
    w_b: int = 4
    h_b: int = 4

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[2] != self.w_b * self.h_b:
            raise ValueError(
                f"CoeffMap needs (rows, cols, {self.w_b * self.h_b}) values, got {self.values.shape}"
            )

    @property
    def n_h(self) -> int:
        return self.values.shape[0]

    @property
    def n_w(self) -> int:
        return self.values.shape[1]

    @property
    def n_ch(self) -> int:
        return self.values.shape[2]


@dataclass
class ClassMap:
    labels: np.ndarray
    n_cl: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 3:
            raise ValueError("ClassMap labels must be (rows, cols, n_ch)")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_cl):
            raise ValueError(f"labels must lie in [0, {self.n_cl})")

    @property
    def n_ch(self) -> int:
        return self.labels.shape[2]


@dataclass
class ClassDistMap:
    """Per-patch, per-channel class probabilities, shape ``(rows, cols, n_ch, n_cl)``."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 4:
            raise ValueError("ClassDistMap probs must be (rows, cols, n_ch, n_cl)")
        if np.any(self.probs < 0) or not np.allclose(self.probs.sum(-1), 1.0, rtol=0, atol=1e-6):
            raise ValueError("class distributions must be nonnegative and sum to 1")

    @property
    def n_cl(self) -> int:
        return self.probs.shape[3]

    def argmax(self) -> ClassMap:
        # np.argmax returns the first maximum: ties resolve to the lowest class
        return ClassMap(np.argmax(self.probs, axis=-1), self.n_cl)


def patch_dct(img, w_b: int = 4, h_b: int = 4) -> CoeffMap:
    data = as_array(img)
    if data.ndim != 2:
        raise ValueError("patch_dct expects a single-plane image")
    h, w = data.shape
    if h % h_b or w % w_b:
        raise ValueError(f"image {w}x{h} not divisible by patch {w_b}x{h_b}")
    coeffs = blockwise_dct(data, w_b, h_b)
    grid = coeffs.reshape(h // h_b, h_b, w // w_b, w_b).transpose(0, 2, 1, 3)
    return CoeffMap(grid.reshape(h // h_b, w // w_b, h_b * w_b), w_b, h_b)


def patch_idct(coeffs: CoeffMap, w_b: int = 4, h_b: int = 4) -> ImageBuffer:
    if coeffs.n_ch != w_b * h_b:
        raise ValueError(f"CoeffMap has {coeffs.n_ch} channels, patch {w_b}x{h_b} needs {w_b * h_b}")
    rows, cols = coeffs.n_h, coeffs.n_w
    tiles = coeffs.values.reshape(rows, cols, h_b, w_b).transpose(0, 2, 1, 3)
    spatial = tiles.reshape(rows * h_b, cols * w_b)
    return ImageBuffer(blockwise_dct(spatial, w_b, h_b, inverse=True), REAL)


# --- equal-frequency bins ------------------------------------------------------

BINSPEC_MAGIC = b"FRBINS\x00\x00"
BINSPEC_VERSION = 1


@dataclass
class BinSpec:
    """Per-channel class boundaries, class representatives and channel statistics.

    A value ``x`` of channel ``c`` is in class ``k`` iff
    ``boundaries[c, k-1] <= x < boundaries[c, k]``.
    """

    boundaries: np.ndarray  # (n_ch, n_cl - 1)
    representatives: np.ndarray  # (n_ch, n_cl)
    channel_mean: np.ndarray
    channel_std: np.ndarray
    warnings: list = field(default_factory=list, compare=False)

    @property
    def n_ch(self) -> int:
        return self.representatives.shape[0]

    @property
    def n_cl(self) -> int:
        return self.representatives.shape[1]

    def to_bytes(self) -> bytes:
        head = BINSPEC_MAGIC + struct.pack("<III", BINSPEC_VERSION, self.n_ch, self.n_cl)
        rows = [
            np.concatenate(
                [self.boundaries[c], self.representatives[c], [self.channel_mean[c], self.channel_std[c]]]
            )
            for c in range(self.n_ch)
        ]
        return head + np.asarray(rows, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> BinSpec:
        if raw[:8] != BINSPEC_MAGIC:
            raise ValueError("not a BinSpec blob")
        version, n_ch, n_cl = struct.unpack("<III", raw[8:20])
        if version != BINSPEC_VERSION:
            raise ValueError(f"unsupported BinSpec version {version}")
        width = 2 * n_cl + 1
        body = np.frombuffer(raw[20 : 20 + 8 * n_ch * width], dtype="<f8")
        if body.size != n_ch * width:
            raise ValueError("truncated BinSpec blob")
        table = body.reshape(n_ch, width).astype(np.float64)
        return cls(
            boundaries=table[:, : n_cl - 1].copy(),
            representatives=table[:, n_cl - 1 : 2 * n_cl - 1].copy(),
            channel_mean=table[:, -2].copy(),
            channel_std=table[:, -1].copy(),
        )

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> BinSpec:
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _fit_channel(samples: np.ndarray, n_cl: int):
    s = np.sort(samples)
    n = s.size
    # boundary k sits at order statistic ceil(k*n/n_cl) (0-based index)
    idx = np.array([-(-k * n // n_cl) for k in range(1, n_cl)], dtype=np.int64)
    bounds = s[idx].astype(np.float64)
    for k in range(1, bounds.size):
        if bounds[k] <= bounds[k - 1]:
            # ties collapse quantiles; keep boundaries strictly increasing
            bounds[k] = np.nextafter(bounds[k - 1], np.inf)
    edges = np.searchsorted(s, bounds, side="left")
    starts = np.concatenate([[0], edges])
    stops = np.concatenate([edges, [n]])
    reps = np.empty(n_cl)
    empty = 0
    for k in range(n_cl):
        members = s[starts[k] : stops[k]]
        if members.size:
            reps[k] = np.median(members)
        else:
            empty += 1
            reps[k] = bounds[k - 1] if k else np.nextafter(bounds[0], -np.inf)
    return bounds, reps, empty


def fit_bins(samples, n_cl: int = 7) -> BinSpec:
    """Fit equal-frequency class bins per channel.

    ``samples`` is either a ``(n, n_ch)`` array or a sequence of per-channel
    1-D arrays. Representatives are the median of each bin's samples.
    """
    if isinstance(samples, np.ndarray) and samples.ndim == 2:
        channels = [samples[:, c] for c in range(samples.shape[1])]
    else:
        channels = [np.asarray(s, dtype=np.float64).ravel() for s in samples]
    if n_cl < 1:
        raise ValueError("n_cl must be at least 1")
    bounds, reps, means, stds, notes = [], [], [], [], []
    for c, x in enumerate(channels):
        x = np.asarray(x, dtype=np.float64)
        if x.size < n_cl:
            raise ValueError(f"channel {c} has {x.size} samples, fewer than n_cl={n_cl}")
        b, r, empty = _fit_channel(x, n_cl)
        if empty:
            notes.append(f"channel {c}: {empty} empty bin(s) from tied samples")
        std = float(np.std(x))
        if std < 1e-6:
            notes.append(f"channel {c}: zero variance, std floored at 1e-6")
            std = 1e-6
        bounds.append(b)
        reps.append(r)
        means.append(float(np.mean(x)))
        stds.append(std)
    for note in notes:
        warnings.warn(note, RuntimeWarning, stacklevel=2)
    return BinSpec(
        boundaries=np.asarray(bounds, dtype=np.float64).reshape(len(channels), n_cl - 1),
        representatives=np.asarray(reps, dtype=np.float64),
        channel_mean=np.asarray(means),
        channel_std=np.asarray(stds),
        warnings=notes,
    )


def coeff_to_class(coeffs: CoeffMap, bins: BinSpec) -> ClassMap:
    if coeffs.n_ch != bins.n_ch:
        raise ValueError(f"CoeffMap has {coeffs.n_ch} channels, BinSpec {bins.n_ch}")
    labels = np.empty(coeffs.values.shape, dtype=np.int64)
    for c in range(bins.n_ch):
        # side="right" counts boundaries <= x, i.e. the lower-inclusive rule
        labels[..., c] = np.searchsorted(bins.boundaries[c], coeffs.values[..., c], side="right")
    return ClassMap(labels, bins.n_cl)


def class_to_coeff(labels: ClassMap, bins: BinSpec, w_b: int = 4, h_b: int = 4) -> CoeffMap:
    if labels.n_ch != bins.n_ch:
        raise ValueError(f"ClassMap has {labels.n_ch} channels, BinSpec {bins.n_ch}")
    lab = labels.labels
    if lab.size and lab.max() >= bins.n_cl:
        raise ValueError(f"label {lab.max()} out of range for n_cl={bins.n_cl}")
    chan = np.arange(bins.n_ch)
    return CoeffMap(bins.representatives[chan, lab], w_b, h_b)


def normalize_coeffs(coeffs: CoeffMap, bins: BinSpec) -> np.ndarray:
    return (coeffs.values - bins.channel_mean) / bins.channel_std


# --- frequency histograms ------------------------------------------------------

def frequency_samples(images, block: int = 8, channel=(7, 7)) -> np.ndarray:
    """Coefficient ``channel`` of the block DCT of each image's Laplacian, over all blocks.

    Images are reduced to luma and cropped (top-left) to multiples of ``block``.
    """
    images = list(images)
    if not images:
        raise ValueError("empty image list")
    u, v = channel
    if not (0 <= u < block and 0 <= v < block):
        raise ValueError(f"channel {channel} outside a {block}x{block} block")
    out = []
    for img in images:
        data = luma(img).data if isinstance(img, ImageBuffer) else np.asarray(img, dtype=np.float64)
        h, w = (data.shape[0] // block) * block, (data.shape[1] // block) * block
        lap = laplacian(data[:h, :w]).data
        coeffs = patch_dct(lap, block, block).values
        out.append(coeffs[..., u * block + v].ravel())
    return np.concatenate(out)


def freq_histogram(images, block: int = 8, channel=(7, 7), bin_edges=None) -> np.ndarray:
    """Histogram counts of one block-DCT channel of Laplacian images.

    Values below the first edge or above the last are counted in the outermost
    bins, so the total always equals the number of blocks.
    """
    samples = frequency_samples(images, block, channel)
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin_edges must be a strictly increasing array of length >= 2")
    idx = np.searchsorted(edges, samples, side="right") - 1
    idx = np.clip(idx, 0, edges.size - 2)
    return np.bincount(idx, minlength=edges.size - 1)
