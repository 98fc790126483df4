"""GRU cell and the per-step caption decoder.

The decoder input at step t is the previous word's embedding concatenated with
the attention context vector; the GRU mixes it into the hidden state, and an
affine head maps the state to next-word logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionParams, attend
from .text import PAD


@dataclass
class GruParams:
    w_z: T.Tensor
    u_z: T.Tensor
    b_z: T.Tensor
    w_r: T.Tensor
    u_r: T.Tensor
    b_r: T.Tensor
    w_c: T.Tensor
    u_c: T.Tensor
    b_c: T.Tensor


@dataclass
class OutputHead:
    w_o: T.Tensor  # (H, K)
    b_o: T.Tensor  # (K,)


@dataclass
class DecoderState:
    h: T.Tensor
    prev_token: int


def gru_step(x_t: T.Tensor, h_prev: T.Tensor, p: GruParams) -> T.Tensor:
    """One GRU update.

    z and r are sigmoid gates over affine maps of (x_t, h_prev); the candidate
    state passes h_prev through the reset gate before the tanh; the new state
    is the z-weighted convex combination of h_prev and the candidate.
    """
    z = T.sigmoid(T.add(T.add(T.matmul(x_t, p.w_z), T.matmul(h_prev, p.u_z)), p.b_z))
    r = T.sigmoid(T.add(T.add(T.matmul(x_t, p.w_r), T.matmul(h_prev, p.u_r)), p.b_r))
    cand = T.tanh_op(T.add(T.add(T.matmul(x_t, p.w_c),
                                 T.mul(r, T.matmul(h_prev, p.u_c))), p.b_c))
    keep = T.mul(z, h_prev)
    take = T.mul(T.sub(T.Tensor(np.ones(z.shape)), z), cand)
    return T.add(keep, take)


def decode_step(state: DecoderState, grid_proj: T.Tensor, emb_table: T.Tensor,
                gru: GruParams, att: AttentionParams, head: OutputHead):
    """One decoder step: attend, embed the previous token, advance the GRU.

    Returns (logits, new_state, attention_weights). The new state keeps the
    incoming prev_token; the caller swaps in whichever token it commits to.
    """
    out = attend(state.h, grid_proj, att)
    x_t = T.concat(T.embedding_lookup(emb_table, state.prev_token), out.context, axis=0)
    h_new = gru_step(x_t, state.h, gru)
    logits = T.add(T.matmul(h_new, head.w_o), head.b_o)
    return logits, DecoderState(h=h_new, prev_token=state.prev_token), out.weights


def sequence_nll(pairs, model) -> tuple[T.Tensor, int]:
    """Teacher-forced negative log-likelihood, averaged over real tokens.

    pairs: list of (FeatureGrid-values ndarray, token-id sequence). Trailing
    PAD ids are ignored, so padding a batch entry never changes the loss.
    Returns (mean-per-token loss tensor, token count).
    """
    if not pairs:
        raise ValueError("sequence_nll needs a non-empty batch")
    total = None
    count = 0
    for grid_values, ids in pairs:
        ids = [i for i in ids if i != PAD]
        if len(ids) < 2:
            raise ValueError("caption must contain at least START and END")
        grid_proj = model.project(grid_values)
        state = DecoderState(h=model.initial_hidden(grid_values), prev_token=ids[0])
        for t in range(len(ids) - 1):
            state.prev_token = ids[t]
            logits, state, _ = decode_step(state, grid_proj, model.emb,
                                           model.gru, model.att, model.head)
            step_nll = T.scale(T.pick(T.log_softmax_axis(logits, axis=0), ids[t + 1]), -1.0)
            total = step_nll if total is None else T.add(total, step_nll)
            count += 1
    return T.scale(total, 1.0 / count), count
