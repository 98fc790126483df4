"""Feature-grid ingestion and projection.

A FeatureGrid is the L x D matrix of spatial annotation vectors for one image.
Grids normally come from SAF1 files written by an external extractor; a tiny
built-in convolutional encoder exists so the whole engine can run end to end
with no pretrained network anywhere near it.

SAF1 layout (little-endian, one image per file):
    bytes 0-3   magic "SAF1"
    u32         name_len
    name_len    UTF-8 image_id
    u32         L (locations)
    u32         D (channels)
    L*D*4       float32 values, row-major (location-major)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T

MAGIC = b"SAF1"

# name -> (L, D); the toy encoder's geometry is whatever its layers produce
ENCODER_SPECS = {
    "inception_v3": (49, 2048),
    "resnet101": (49, 2048),
    "densenet169": (49, 1664),
    "vgg16": (49, 512),
    "toy": None,
}


class FeatureFileError(ValueError):
    """SAF1 file is malformed (bad magic, truncated, or non-finite values)."""


@dataclass
class FeatureGrid:
    image_id: str
    values: np.ndarray  # (L, D) float64

    @property
    def locations(self):
        return self.values.shape[0]

    @property
    def channels(self):
        return self.values.shape[1]


def check_spec(grid: FeatureGrid, spec_name: str):
    """Reject a grid whose geometry does not match the declared encoder."""
    if spec_name not in ENCODER_SPECS:
        raise ValueError(f"unknown encoder spec {spec_name!r}")
    expected = ENCODER_SPECS[spec_name]
    if expected is not None and (grid.locations, grid.channels) != expected:
        raise FeatureFileError(
            f"grid {grid.image_id!r} is {grid.locations}x{grid.channels}, "
            f"but spec {spec_name!r} requires {expected[0]}x{expected[1]}")


def save_feature_grid(grid: FeatureGrid, path):
    name = grid.image_id.encode("utf-8")
    values = np.ascontiguousarray(grid.values, dtype="<f4")
    l, d = values.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(name)))
        fh.write(name)
        fh.write(struct.pack("<II", l, d))
        fh.write(values.tobytes())


def load_feature_grid(path) -> FeatureGrid:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FeatureFileError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    try:
        (name_len,) = struct.unpack_from("<I", blob, 4)
        name = blob[8:8 + name_len].decode("utf-8")
        l, d = struct.unpack_from("<II", blob, 8 + name_len)
    except (struct.error, UnicodeDecodeError) as exc:
        raise FeatureFileError(f"{path}: truncated or corrupt header") from exc
    if l < 1 or d < 1:
        raise FeatureFileError(f"{path}: non-positive grid dimensions {l}x{d}")
    offset = 8 + name_len + 8
    payload = blob[offset:]
    if len(payload) != l * d * 4:
        raise FeatureFileError(
            f"{path}: payload is {len(payload)} bytes, expected {l * d * 4}")
    values = np.frombuffer(payload, dtype="<f4").reshape(l, d).astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise FeatureFileError(f"{path}: non-finite feature values")
    return FeatureGrid(name, values)


@dataclass
class ConvLayer:
    kernels: T.Tensor  # (K, kh, kw, C_in)
    biases: T.Tensor   # (K,)
    stride: int = 1
    activation: str = "relu"  # relu | none

    def __post_init__(self):
        kh, kw = self.kernels.shape[1], self.kernels.shape[2]
        if kh % 2 == 0 or kw % 2 == 0:
            raise T.ShapeError(f"kernel spatial dims must be odd, got {kh}x{kw}")


def toy_encode(image: T.Tensor, layers) -> T.Tensor:
    """Stack of valid convolutions over an (H, W, C) image, flattened to (L, D)."""
    x = image
    for layer in layers:
        x = T.conv2d_valid(x, layer.kernels, layer.biases, layer.stride)
        if layer.activation == "relu":
            x = T.relu(x)
    h, w, d = x.shape
    return T.reshape(x, (h * w, d))


def project(grid: T.Tensor, w_p: T.Tensor, b_p: T.Tensor) -> T.Tensor:
    """Per-location affine map of an (L, D) grid into the attention dimension."""
    return T.add(T.matmul(grid, w_p), b_p)


def init_hidden(grid: T.Tensor, w_h: T.Tensor, b_h: T.Tensor) -> T.Tensor:
    """Initial decoder state: tanh of an affine map of the mean annotation vector."""
    return T.tanh_op(T.add(T.matmul(T.mean_rows(grid), w_h), b_h))
