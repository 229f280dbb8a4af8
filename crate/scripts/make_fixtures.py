#!/usr/bin/env python3
"""Regenerate the grayscale natural-image test fixtures from scikit-image's sample data."""
import pathlib

import numpy as np
import skimage.data as data
from skimage.color import rgb2gray
from skimage.transform import resize
from PIL import Image

OUT = pathlib.Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures/natural"
SIZE = 160
SOURCES = ["camera", "coins", "moon", "astronaut", "chelsea", "coffee", "grass", "gravel", "brick", "rocket"]


def gray(name):
    img = getattr(data, name)()
    if img.ndim == 3:
        img = rgb2gray(img[..., :3])
    else:
        img = img.astype(np.float64) / 255.0
    return img


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name in SOURCES:
        img = gray(name)
        h, w = img.shape
        scale = 2 * SIZE / min(h, w)
        img = resize(img, (round(h * scale), round(w * scale)), anti_aliasing=True)
        h, w = img.shape
        crops = [(0, 0), (h - SIZE, w - SIZE)]
        for i, (y, x) in enumerate(crops):
            patch = np.clip(img[y:y + SIZE, x:x + SIZE] * 255.0 + 0.5, 0, 255).astype(np.uint8)
            Image.fromarray(patch, mode="L").save(OUT / f"{name}_{i}.png", optimize=True)


if __name__ == "__main__":
    main()
