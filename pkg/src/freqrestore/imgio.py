"""Image buffers, PNM/PNG persistence, luma extraction and the Laplacian filter."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

U8 = "u8"
REAL = "real"

LAPLACIAN_KERNEL = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class ImageFormatError(ValueError):
    """Raised for unreadable, truncated or unsupported image files."""


@dataclass
class ImageBuffer:
    """A single- or three-plane image.

    ``data`` is ``(height, width)`` for one plane and ``(height, width, 3)``
    for color. ``domain`` is ``"u8"`` (integer values in [0, 255]) or
    ``"real"`` (unbounded floats).
    """

    data: np.ndarray
    domain: str = REAL

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim not in (2, 3) or (self.data.ndim == 3 and self.data.shape[2] != 3):
            raise ValueError(f"expected (H, W) or (H, W, 3) data, got {self.data.shape}")
        if self.domain not in (U8, REAL):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.domain == U8:
            d = self.data
            if d.size and (d.min() < 0 or d.max() > 255 or np.any(d != np.round(d))):
                raise ValueError("u8 buffer holds values outside the integers 0..255")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def planes(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    def to_u8(self) -> ImageBuffer:
        """Round half up, then clamp to [0, 255]."""
        return ImageBuffer(quantize_u8(self.data), U8)


def quantize_u8(values) -> np.ndarray:
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) + 0.5), 0, 255)


def as_array(img) -> np.ndarray:
    if isinstance(img, ImageBuffer):
        return img.data
    return np.asarray(img, dtype=np.float64)


# --- PNM ---------------------------------------------------------------------

def _read_pnm(raw: bytes, path) -> ImageBuffer:
    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: not a binary PGM/PPM file")
    fields = []
    pos = 2
    n = len(raw)
    while len(fields) < 3:
        while pos < n and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < n and raw[pos : pos + 1] == b"#":
            while pos < n and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and raw[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated or malformed header")
        fields.append(int(raw[start:pos]))
    if pos >= n or not raw[pos : pos + 1].isspace():
        raise ImageFormatError(f"{path}: truncated or malformed header")
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"{path}: unsupported maxval {maxval} (only 8-bit)")
    planes = 1 if magic == b"P5" else 3
    count = width * height * planes
    payload = raw[pos : pos + count]
    if len(payload) != count:
        raise ImageFormatError(f"{path}: truncated pixel data")
    data = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    shape = (height, width) if planes == 1 else (height, width, 3)
    return ImageBuffer(data.reshape(shape), U8)


def _write_pnm(data: np.ndarray, path: Path) -> None:
    magic = b"P5" if data.ndim == 2 else b"P6"
    header = magic + f"\n{data.shape[1]} {data.shape[0]}\n255\n".encode()
    path.write_bytes(header + data.astype(np.uint8).tobytes())


def load_image(path) -> ImageBuffer:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"{path}: cannot read ({exc})") from exc
    if raw[:2] in (b"P5", b"P6"):
        return _read_pnm(raw, path)
    if raw[:8] != b"\x89PNG\r\n\x1a\n":
        raise ImageFormatError(f"{path}: unsupported format (expected P5, P6 or PNG)")

    from PIL import Image

    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I", "I;16", "I;16B", "I;16L", "F") or im.info.get("bits", 8) > 8:
                raise ImageFormatError(f"{path}: unsupported bit depth (mode {mode})")
            if mode in ("L", "1"):
                arr = np.asarray(im.convert("L"))
            elif mode == "LA":
                arr = np.asarray(im.convert("L"))
            else:
                arr = np.asarray(im.convert("RGB"))
    except ImageFormatError:
        raise
    except Exception as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc
    return ImageBuffer(arr.astype(np.float64), U8)


def save_image(img: ImageBuffer, path) -> None:
    """Write as PGM/PPM (by ``.pgm``/``.ppm``/``.pnm`` suffix) or PNG otherwise.

    Real buffers are rounded half up and clamped to [0, 255].
    """
    path = Path(path)
    data = quantize_u8(as_array(img))
    if path.suffix.lower() in (".pgm", ".ppm", ".pnm"):
        _write_pnm(data, path)
        return
    from PIL import Image

    Image.fromarray(data.astype(np.uint8)).save(path, format="PNG")


def rgb_to_luma(img: ImageBuffer) -> ImageBuffer:
    """Full-range BT.601 luma, as in JPEG's YCbCr. Kept real-valued."""
    if img.planes != 3:
        raise ValueError(f"rgb_to_luma needs 3 planes, got {img.planes}")
    return ImageBuffer(img.data @ LUMA_WEIGHTS, REAL)


def luma(img: ImageBuffer) -> ImageBuffer:
    """Luma of a color image, or the image itself (as Real) if already gray."""
    if img.planes == 3:
        return rgb_to_luma(img)
    return ImageBuffer(img.data.copy(), REAL)


def laplacian(img) -> ImageBuffer:
    """4-neighbour discrete Laplacian with replicated borders; same size as input."""
    data = as_array(img)
    if data.ndim != 2:
        raise ValueError("laplacian expects a single-plane image")
    return ImageBuffer(ndimage.correlate(data, LAPLACIAN_KERNEL, mode="nearest"), REAL)
