"""Additive attention over the spatial annotation vectors.

Scores are v . tanh(W_dec s_prev + W_enc f_j + b) per location, softmaxed over
the location axis; the context vector is the weight-averaged feature row.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T


@dataclass
class AttentionParams:
    w_dec: T.Tensor  # (H, A)
    w_enc: T.Tensor  # (A_in, A)
    bias: T.Tensor   # (A,)
    v: T.Tensor      # (A,)


@dataclass
class AttentionOutput:
    context: T.Tensor  # (A_in,)
    weights: T.Tensor  # (L,), nonnegative, sums to 1


def score(s_prev: T.Tensor, features: T.Tensor, p: AttentionParams) -> T.Tensor:
    """Unnormalized relevance of every location given the previous decoder state.

    Computed for the whole grid in one fused pass; equivalent to evaluating
    v . tanh(W_dec s + W_enc f_j + b) per location j.
    """
    dec = T.matmul(s_prev, p.w_dec)                 # (A,)
    enc = T.add(T.matmul(features, p.w_enc), p.bias)  # (L, A)
    return T.matmul(T.tanh_op(T.add(enc, dec)), p.v)  # (L,)


def attend(s_prev: T.Tensor, features: T.Tensor, p: AttentionParams) -> AttentionOutput:
    alpha = T.softmax_axis(score(s_prev, features, p), axis=0)
    context = T.matmul(alpha, features)
    return AttentionOutput(context=context, weights=alpha)


def export_attention(image_id, words, alphas, grid_shape, out_dir, write_pgm=False):
    """Write one JSON attention record per image; optional PGM per step.

    alphas: one weight vector per generated word, each of length h*w.
    """
    h, w = grid_shape
    if len(words) != len(alphas):
        raise ValueError("one weight vector per generated word required")
    steps = []
    for word, alpha in zip(words, alphas):
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.size != h * w:
            raise ValueError(f"weights length {alpha.size} != grid {h}x{w}")
        steps.append({"word": word, "weights": [float(x) for x in alpha]})
    record = {"image_id": image_id, "grid": [h, w], "steps": steps}
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, f"{image_id}.attention.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(record, fh)
    if write_pgm:
        for step_no, (word, alpha) in enumerate(zip(words, alphas)):
            _write_pgm(np.asarray(alpha).reshape(h, w),
                       os.path.join(out_dir, f"{image_id}.{step_no:02d}.{word}.pgm"))
    return json_path


def _write_pgm(weights, path):
    peak = weights.max()
    scaled = np.zeros_like(weights) if peak <= 0 else weights / peak * 255.0
    gray = np.rint(scaled).astype(int)
    h, w = weights.shape
    lines = [f"P2", f"{w} {h}", "255"]
    lines += [" ".join(str(v) for v in row) for row in gray]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
