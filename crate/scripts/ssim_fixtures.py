#!/usr/bin/env python3
"""Reference SSIM values from scikit-image for pairs derived from the natural fixtures."""
import pathlib

import numpy as np
from PIL import Image
from skimage.metrics import structural_similarity

ROOT = pathlib.Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures"
TRANSFORMS = {
    "invert": lambda x: 1.0 - x,
    "square": lambda x: x * x,
    "contrast": lambda x: 0.5 * x + 0.25,
    "roll3": lambda x: np.roll(x, 3, axis=1),
}


def main():
    lines = ["# file transform ssim (11x11 Gaussian window, sigma 1.5, population covariance, data range 1)"]
    for path in sorted((ROOT / "natural").glob("*_0.png")):
        x = np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0
        for name, f in TRANSFORMS.items():
            y = f(x)
            s = structural_similarity(
                x, y, data_range=1.0, gaussian_weights=True, sigma=1.5, use_sample_covariance=False
            )
            lines.append(f"{path.name} {name} {s:.12f}")
    (ROOT / "ssim_reference.txt").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
