"""Deterministic toy corpus of natural image crops (needs scikit-image's bundled images)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .imgio import ImageBuffer, U8, save_image

# Bundled scikit-image photographs that need no download.
SOURCES = (
    "astronaut",
    "camera",
    "coffee",
    "chelsea",
    "rocket",
    "brick",
    "grass",
    "gravel",
    "coins",
    "clock",
    "moon",
    "immunohistochemistry",
)


def source_images() -> dict:
    from skimage import data

    out = {}
    for name in SOURCES:
        arr = np.asarray(getattr(data, name)())
        if arr.ndim == 3:
            arr = arr[..., :3]
        out[name] = arr.astype(np.float64)
    return out


def make_toy_corpus(out_dir, n_images: int = 64, size: int = 96, seed: int = 0, min_std: float = 12.0) -> list:
    """Write ``n_images`` random ``size`` x ``size`` crops as PNG files; returns the paths.

    Crops cycle over the source photographs; near-flat crops (luma std below
    ``min_std``) are rejected and redrawn.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    sources = source_images()
    names = list(sources)
    paths = []
    for i in range(n_images):
        src = names[i % len(names)]
        img = sources[src]
        h, w = img.shape[:2]
        for _ in range(100):
            top = int(rng.integers(0, h - size + 1))
            left = int(rng.integers(0, w - size + 1))
            crop = img[top : top + size, left : left + size]
            gray = crop @ np.array([0.299, 0.587, 0.114]) if crop.ndim == 3 else crop
            if gray.std() >= min_std:
                break
        path = out / f"{i:03d}_{src}.png"
        save_image(ImageBuffer(crop, U8), path)
        paths.append(path)
    return paths
