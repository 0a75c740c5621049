"""JPEG-equivalent luminance degradation (quantize/dequantize in the 8x8 DCT domain)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .freqlab import blockwise_dct
from .imgio import ImageBuffer, U8, as_array, quantize_u8

# ITU-T T.81 Annex K, Table K.1
STANDARD_LUMINANCE_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)
STANDARD_LUMINANCE_TABLE.flags.writeable = False

# Multiplier taking orthonormal DCT-II coefficients to the JPEG FDCT convention.
# For 8x8 blocks the JPEG normalisation (1/4 C(u) C(v), C(0) = 1/sqrt(2)) is
# exactly the orthonormal one, so the factor is 1 everywhere.
JPEG_COEFF_SCALE = np.ones((8, 8))


@dataclass(frozen=True)
class QTable:
    entries: np.ndarray
    quality_factor: int


def quality_table(qf: int) -> QTable:
    """IJG quality scaling of the Annex K luminance table (integer arithmetic)."""
    if not isinstance(qf, (int, np.integer)) or not 1 <= qf <= 100:
        raise ValueError(f"quality factor must be an integer in [1, 100], got {qf!r}")
    scale = 5000 // qf if qf < 50 else 200 - 2 * qf
    entries = np.clip((STANDARD_LUMINANCE_TABLE * scale + 50) // 100, 1, 255)
    return QTable(entries, int(qf))


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def jpeg_degrade(img, qf: int) -> ImageBuffer:
    """Quantize each 8x8 block's DCT with the QF table and reconstruct as 8-bit."""
    data = as_array(img)
    if data.ndim != 2:
        raise ValueError("jpeg_degrade expects a single-plane image")
    h, w = data.shape
    if h % 8 or w % 8:
        raise ValueError(f"image {w}x{h} not divisible by 8; crop with prepare_dims first")
    table = quality_table(qf).entries / JPEG_COEFF_SCALE
    divisors = np.tile(table, (h // 8, w // 8))
    coeffs = blockwise_dct(quantize_u8(data) - 128.0, 8, 8)
    dequant = round_half_away(coeffs / divisors) * divisors
    pixels = blockwise_dct(dequant, 8, 8, inverse=True) + 128.0
    return ImageBuffer(quantize_u8(pixels), U8)


def prepare_dims(img: ImageBuffer, multiple: int = 8) -> ImageBuffer:
    """Center-crop to the largest size divisible by ``multiple``."""
    if multiple not in (4, 8):
        raise ValueError(f"multiple must be 4 or 8, got {multiple}")
    if img.width < multiple or img.height < multiple:
        raise ValueError(f"image {img.width}x{img.height} smaller than {multiple}x{multiple}")
    h = img.height - img.height % multiple
    w = img.width - img.width % multiple
    top = (img.height - h) // 2
    left = (img.width - w) // 2
    return ImageBuffer(img.data[top : top + h, left : left + w].copy(), img.domain)
