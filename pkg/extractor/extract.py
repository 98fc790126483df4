#!/usr/bin/env python3
"""Pretrained-CNN feature extractor.

Runs one of four ImageNet backbones over a directory of images and writes
each image's final convolutional feature map as a portable SAF1 file
(L spatial locations x D channels, float32 little-endian) that the caption
engine can consume directly.

Usage: extract.py --net resnet101 --images DIR --out DIR
"""

from __future__ import annotations

import argparse
import struct
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torchvision.models import densenet169, inception_v3, resnet101, vgg16
from torchvision.models.feature_extraction import create_feature_extractor

IMAGE_EXTS = {".jpg", ".jpeg", ".png", ".bmp", ".gif", ".tiff", ".webp"}

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

SAF1_MAGIC = b"SAF1"


@dataclass(frozen=True)
class Backbone:
    builder: object
    node: str          # graph node carrying the final conv feature map
    input_size: int
    locations: int     # expected L after spatial flattening
    channels: int      # expected D
    post_relu: bool    # backbone leaves features pre-activation


BACKBONES = {
    "inception_v3": Backbone(inception_v3, "Mixed_7c", 299, 49, 2048, False),
    "resnet101": Backbone(resnet101, "layer4", 224, 49, 2048, False),
    "densenet169": Backbone(densenet169, "features", 224, 49, 1664, True),
    "vgg16": Backbone(vgg16, "features", 224, 49, 512, False),
}


def write_saf1(path, image_id: str, grid: np.ndarray) -> None:
    """Serialize an (L, D) float array; format shared with the caption engine."""
    if grid.ndim != 2:
        raise ValueError(f"expected 2-d grid, got shape {grid.shape}")
    if not np.all(np.isfinite(grid)):
        raise ValueError(f"{image_id}: non-finite feature values")
    name = image_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(SAF1_MAGIC)
        fh.write(struct.pack("<I", len(name)))
        fh.write(name)
        fh.write(struct.pack("<II", grid.shape[0], grid.shape[1]))
        fh.write(grid.astype("<f4").tobytes())


def build_model(net: str, pretrained: bool = True):
    spec = BACKBONES[net]
    torch.manual_seed(0)  # reproducible init when weights are random
    kwargs = {"weights": "DEFAULT" if pretrained else None}
    if net == "inception_v3" and not pretrained:
        kwargs["init_weights"] = False  # default module init; much faster
    try:
        model = spec.builder(**kwargs)
    except Exception as exc:  # weight download failure aborts the whole job
        raise RuntimeError(f"could not load weights for {net}: {exc}") from exc
    model.eval()
    return create_feature_extractor(model, {spec.node: "feat"})


def preprocess(image: Image.Image, size: int) -> torch.Tensor:
    image = image.convert("RGB").resize((size, size), Image.BILINEAR)
    arr = np.asarray(image, dtype=np.float32) / 255.0
    arr = (arr - np.array(IMAGENET_MEAN, dtype=np.float32)) \
        / np.array(IMAGENET_STD, dtype=np.float32)
    return torch.from_numpy(arr.transpose(2, 0, 1)).unsqueeze(0)


def extract_grid(model, spec: Backbone, image: Image.Image) -> np.ndarray:
    with torch.no_grad():
        feat = model(preprocess(image, spec.input_size))["feat"]
        if spec.post_relu:
            feat = F.relu(feat)
        side = int(round(spec.locations ** 0.5))
        if feat.shape[-2:] != (side, side):
            print(f"warning: raw feature map {feat.shape[-2]}x{feat.shape[-1]} "
                  f"pooled to {side}x{side} to match the declared geometry",
                  file=sys.stderr)
            feat = F.adaptive_avg_pool2d(feat, (side, side))
    # (1, D, h, w) -> (h*w, D)
    arr = feat.squeeze(0).numpy()
    return arr.reshape(arr.shape[0], -1).T.astype(np.float64)


def run_job(net: str, images_dir, out_dir, pretrained: bool = True) -> int:
    spec = BACKBONES[net]
    images_dir = Path(images_dir)
    out_dir = Path(out_dir)
    paths = sorted(p for p in images_dir.iterdir()
                   if p.suffix.lower() in IMAGE_EXTS)
    if not paths:
        raise FileNotFoundError(f"{images_dir}: no image files")
    out_dir.mkdir(parents=True, exist_ok=True)

    model = build_model(net, pretrained)
    written = 0
    for path in paths:
        try:
            image = Image.open(path)
            image.load()
        except Exception as exc:
            print(f"warning: skipping unreadable image {path}: {exc}",
                  file=sys.stderr)
            continue
        grid = extract_grid(model, spec, image)
        if grid.shape != (spec.locations, spec.channels):
            raise RuntimeError(f"{path}: unexpected feature shape {grid.shape}, "
                               f"wanted ({spec.locations}, {spec.channels})")
        write_saf1(out_dir / f"{path.stem}.saf1", path.stem, grid)
        written += 1
    if written == 0:
        raise RuntimeError(f"{images_dir}: no readable images")
    return written


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="extract.py",
        description="Export CNN feature grids as SAF1 files")
    parser.add_argument("--net", required=True, choices=sorted(BACKBONES))
    parser.add_argument("--images", required=True, help="directory of images")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--no-pretrained", action="store_true",
                        help="use randomly initialized weights (testing only)")
    args = parser.parse_args(argv)
    try:
        n = run_job(args.net, args.images, args.out,
                    pretrained=not args.no_pretrained)
    except FileNotFoundError as exc:
        print(f"extract.py: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"extract.py: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {n} feature files to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
