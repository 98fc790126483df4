"""Named parameter store for the whole captioning model.

Parameters live as plain float64 numpy arrays keyed by name; a BoundModel view
wraps them in Tensors, watched on a Tape during training or tape-free for
decoding, and exposes the projection / initial-state helpers the decoder needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionParams
from .decoder import GruParams, OutputHead
from .encoder import init_hidden, project


@dataclass
class ModelDims:
    vocab_size: int
    feature_dim: int
    embed_dim: int
    hidden_dim: int
    attention_dim: int


def _xavier(rng, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_parameters(dims: ModelDims, rng: np.random.Generator) -> dict:
    k, d = dims.vocab_size, dims.feature_dim
    e, h, a = dims.embed_dim, dims.hidden_dim, dims.attention_dim
    x = e + a  # decoder input: [embedding ; context]
    params = {
        "embed": rng.uniform(-0.5 / e, 0.5 / e, size=(k, e)),
        "proj.w": _xavier(rng, d, a),
        "proj.b": np.zeros(a),
        "init.w": _xavier(rng, d, h),
        "init.b": np.zeros(h),
        "att.w_dec": _xavier(rng, h, a),
        "att.w_enc": _xavier(rng, a, a),
        "att.b": np.zeros(a),
        "att.v": _xavier(rng, a, 1)[:, 0],
        "head.w": _xavier(rng, h, k),
        "head.b": np.zeros(k),
    }
    for gate in ("z", "r", "c"):
        params[f"gru.w_{gate}"] = _xavier(rng, x, h)
        params[f"gru.u_{gate}"] = _xavier(rng, h, h)
        params[f"gru.b_{gate}"] = np.zeros(h)
    return params


def parameter_count(dims: ModelDims) -> int:
    return sum(arr.size for arr in init_parameters(dims, np.random.default_rng(0)).values())


class BoundModel:
    """Tensor view over a parameter dict, optionally watched on a tape."""

    def __init__(self, params: dict, tape: T.Tape | None = None):
        self.tensors = {}
        for name, arr in params.items():
            t = T.Tensor(arr)
            if tape is not None:
                tape.watch(t)
            self.tensors[name] = t
        g = self.tensors
        self.emb = g["embed"]
        self.gru = GruParams(
            w_z=g["gru.w_z"], u_z=g["gru.u_z"], b_z=g["gru.b_z"],
            w_r=g["gru.w_r"], u_r=g["gru.u_r"], b_r=g["gru.b_r"],
            w_c=g["gru.w_c"], u_c=g["gru.u_c"], b_c=g["gru.b_c"])
        self.att = AttentionParams(w_dec=g["att.w_dec"], w_enc=g["att.w_enc"],
                                   bias=g["att.b"], v=g["att.v"])
        self.head = OutputHead(w_o=g["head.w"], b_o=g["head.b"])

    def project(self, grid_values: np.ndarray) -> T.Tensor:
        return project(T.Tensor(grid_values), self.tensors["proj.w"], self.tensors["proj.b"])

    def initial_hidden(self, grid_values: np.ndarray) -> T.Tensor:
        return init_hidden(T.Tensor(grid_values), self.tensors["init.w"], self.tensors["init.b"])
