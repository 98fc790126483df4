"""Caption generation: greedy and length-normalized beam decoding.

Decoding is read-only over the model (no tape); control tokens are masked out
of the logits so a caption can never contain PAD/START/UNK.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .decoder import DecoderState, decode_step
from .model import BoundModel
from .text import END, PAD, START, UNK, Vocabulary

MASKED_TOKENS = (PAD, START, UNK)


@dataclass
class DecodeConfig:
    mode: str = "greedy"  # greedy | beam
    beam_width: int = 1
    max_len: int = 20
    length_norm_alpha: float = 0.0

    def validate(self):
        if self.mode not in ("greedy", "beam"):
            raise ValueError(f"unknown decode mode {self.mode!r}")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.mode == "beam" and self.beam_width < 2:
            raise ValueError("beam mode requires beam_width >= 2")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.length_norm_alpha < 0:
            raise ValueError("length_norm_alpha must be >= 0")


@dataclass
class DecodedCaption:
    tokens: list           # words, control tokens excluded
    log_prob: float        # total log-likelihood incl. the END step when taken
    attention_trace: list  # one weight vector per reported word

    def text(self):
        return " ".join(self.tokens)


def _step_logprobs(state, grid_proj, bound):
    logits, new_state, alpha = decode_step(state, grid_proj, bound.emb,
                                           bound.gru, bound.att, bound.head)
    masked = logits.data.copy()
    masked[list(MASKED_TOKENS)] = -np.inf
    logp = T.log_softmax_axis(T.Tensor(masked), axis=0).data
    return logp, new_state.h, alpha.data


def greedy_decode(trained, grid, cfg: DecodeConfig) -> DecodedCaption:
    """Argmax decoding; ties resolve to the lowest token id."""
    cfg.validate()
    bound = BoundModel(trained.params)
    grid_proj = bound.project(grid.values)
    vocab = trained.vocab
    state = DecoderState(h=bound.initial_hidden(grid.values), prev_token=START)
    words, trace, total = [], [], 0.0
    while len(words) < cfg.max_len:
        logp, h, alpha = _step_logprobs(state, grid_proj, bound)
        choice = int(np.argmax(logp))
        total += float(logp[choice])
        if choice == END:
            break
        words.append(vocab.token_of(choice))
        trace.append(alpha)
        state = DecoderState(h=h, prev_token=choice)
    return DecodedCaption(tokens=words, log_prob=total, attention_trace=trace)


@dataclass
class _Hypothesis:
    ids: tuple
    log_prob: float
    state: DecoderState
    trace: list = field(default_factory=list)
    done: bool = False

    def score(self, alpha):
        length = max(len(self.ids), 1)
        return self.log_prob / length ** alpha


def beam_decode(trained, grid, cfg: DecodeConfig) -> DecodedCaption:
    """Length-normalized beam search; beam_width 1 degenerates to greedy."""
    cfg.validate()
    bound = BoundModel(trained.params)
    grid_proj = bound.project(grid.values)
    vocab = trained.vocab
    h0 = bound.initial_hidden(grid.values)
    live = [_Hypothesis(ids=(), log_prob=0.0,
                        state=DecoderState(h=h0, prev_token=START))]
    completed = []
    for _ in range(cfg.max_len):
        expansions = []
        for hyp in live:
            logp, h, alpha = _step_logprobs(hyp.state, grid_proj, bound)
            order = sorted(range(len(logp)), key=lambda i: (-logp[i], i))
            for tok in order[:cfg.beam_width]:
                if not np.isfinite(logp[tok]):
                    continue
                total = hyp.log_prob + float(logp[tok])
                if tok == END:
                    expansions.append(_Hypothesis(
                        ids=hyp.ids, log_prob=total, state=hyp.state,
                        trace=hyp.trace, done=True))
                else:
                    expansions.append(_Hypothesis(
                        ids=hyp.ids + (tok,), log_prob=total,
                        state=DecoderState(h=h, prev_token=tok),
                        trace=hyp.trace + [alpha]))
        expansions.sort(key=lambda x: (-x.log_prob, x.ids))
        live = []
        for hyp in expansions:
            if hyp.done:
                completed.append(hyp)
            elif len(live) < cfg.beam_width:
                live.append(hyp)
        if not live:
            break
    candidates = completed + live  # live ones ran out of length without END
    if not candidates:
        return DecodedCaption(tokens=[], log_prob=0.0, attention_trace=[])
    best = min(candidates, key=lambda x: (-x.score(cfg.length_norm_alpha), x.ids))
    return DecodedCaption(tokens=[vocab.token_of(i) for i in best.ids],
                          log_prob=best.log_prob, attention_trace=best.trace)


def decode(trained, grid, cfg: DecodeConfig) -> DecodedCaption:
    if cfg.mode == "beam" and cfg.beam_width > 1:
        return beam_decode(trained, grid, cfg)
    return greedy_decode(trained, grid, cfg)


@dataclass
class BatchItem:
    image_id: str
    caption: DecodedCaption | None
    error: Exception | None = None


def caption_batch(trained, grids, cfg: DecodeConfig) -> list:
    """Order-preserving decode over many grids; per-image errors are collected."""
    results = []
    for grid in grids:
        try:
            results.append(BatchItem(grid.image_id, decode(trained, grid, cfg)))
        except Exception as exc:  # noqa: BLE001 - contract: collect, don't fail fast
            results.append(BatchItem(grid.image_id, None, exc))
    return results


def rescore(trained, grid, word_tokens, ended: bool = True) -> float:
    """Independent log-likelihood of a decoded caption (oracle for log_prob).

    ended=False scores a caption that was cut off at max_len without END.
    """
    vocab: Vocabulary = trained.vocab
    bound = BoundModel(trained.params)
    grid_proj = bound.project(grid.values)
    ids = [vocab.token_to_id[w] for w in word_tokens]
    if ended:
        ids.append(END)
    state = DecoderState(h=bound.initial_hidden(grid.values), prev_token=START)
    total = 0.0
    for tok in ids:
        logp, h, _ = _step_logprobs(state, grid_proj, bound)
        total += float(logp[tok])
        state = DecoderState(h=h, prev_token=tok)
    return total
