# Crops natural photographs bundled with scikit-image into small PNG tiles
# used by the photometric acceptance check. Re-running reproduces the files.
import pathlib
import sys

import numpy as np
from PIL import Image
from skimage import data

NAMES = ["astronaut", "coffee", "chelsea", "rocket", "retina", "immunohistochemistry", "hubble_deep_field"]
TILE = 48
COUNT = 100


def main(out):
    out = pathlib.Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20240601)
    photos = [getattr(data, n)()[..., :3] for n in NAMES]
    i = 0
    while i < COUNT:
        img = photos[rng.integers(len(photos))]
        y = rng.integers(img.shape[0] - TILE)
        x = rng.integers(img.shape[1] - TILE)
        tile = img[y:y + TILE, x:x + TILE]
        # Skip flat background patches.
        if tile.std() < 8.0:
            continue
        Image.fromarray(np.ascontiguousarray(tile)).save(out / f"tile_{i:03d}.png", optimize=True)
        i += 1


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data/real")
