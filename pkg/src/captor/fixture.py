"""Deterministic synthetic dataset so every test runs with zero external data.

Each image gets a fixed random feature grid and a caption assembled from a
small word pool; the grid/caption pairing is a function of the seed only, so
training can memorize it and tests can regenerate it bit-identically.
"""

from __future__ import annotations

import os

import numpy as np

from .encoder import FeatureGrid, save_feature_grid

_SUBJECTS = ["a cat", "a dog", "a bird", "a man", "a girl", "a horse"]
_VERBS = ["sits", "runs", "flies", "sleeps", "jumps", "walks"]
_PLACES = ["on the mat", "in the park", "over the water",
           "near the tree", "by the road", "under the sky"]


def make_fixture(n_images: int = 8, seed: int = 42, locations: int = 9,
                 channels: int = 16):
    """Return (grids, caption_lines); grids is a list of FeatureGrid."""
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    rng = np.random.default_rng(seed)
    grids, lines = [], []
    for i in range(n_images):
        image_id = f"img{i:03d}"
        caption = " ".join([
            _SUBJECTS[int(rng.integers(len(_SUBJECTS)))],
            _VERBS[int(rng.integers(len(_VERBS)))],
            _PLACES[int(rng.integers(len(_PLACES)))],
        ])
        values = rng.normal(size=(locations, channels))
        grids.append(FeatureGrid(image_id, values))
        lines.append(f"{image_id}\t{caption}")
    # captions must be distinct or the memorization check is ill-posed
    while len({l.split("\t")[1] for l in lines}) < n_images:
        for i, line in enumerate(lines):
            image_id, caption = line.split("\t")
            if sum(1 for l in lines if l.endswith("\t" + caption)) > 1:
                extra = _VERBS[int(rng.integers(len(_VERBS)))]
                lines[i] = f"{image_id}\t{caption} and {extra}"
                break
    return grids, lines


def write_fixture(out_dir, n_images: int = 8, seed: int = 42,
                  locations: int = 9, channels: int = 16):
    """Write SAF1 grids under out_dir/features and a captions.tsv next to them."""
    grids, lines = make_fixture(n_images, seed, locations, channels)
    features_dir = os.path.join(out_dir, "features")
    os.makedirs(features_dir, exist_ok=True)
    for grid in grids:
        save_feature_grid(grid, os.path.join(features_dir, f"{grid.image_id}.saf1"))
    captions_path = os.path.join(out_dir, "captions.tsv")
    with open(captions_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return features_dir, captions_path
