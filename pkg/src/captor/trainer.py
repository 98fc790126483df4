"""Training loop: Adam over teacher-forced caption likelihood, plus checkpoints.

Checkpoint layout (little-endian):
    bytes 0-3  magic "CAPT"
    u32        format version (currently 1)
    u32        header_len
    header_len UTF-8 JSON header: encoder spec name, config echo, vocabulary,
               model dims, tensor manifest (name, shape, offset), payload size
    payload    concatenated float64 tensor data, manifest order
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .decoder import sequence_nll
from .model import BoundModel, ModelDims, init_parameters
from .text import RESERVED, Vocabulary, build_vocab, encode

CHECKPOINT_MAGIC = b"CAPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file cannot be read."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


class NumericError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 4
    lr: float = 1e-3
    seed: int = 0
    grad_clip_norm: float = 5.0
    max_caption_len: int = 20
    embed_dim: int = 32
    hidden_dim: int = 64
    attention_dim: int = 32
    min_count: int = 1

    def validate(self):
        for name in ("epochs", "batch_size", "lr", "grad_clip_norm",
                     "max_caption_len", "embed_dim", "hidden_dim",
                     "attention_dim", "min_count"):
            if getattr(self, name) <= 0:
                raise ValueError(f"config field {name} must be positive")
        if self.max_caption_len < 2:
            raise ValueError("max_caption_len must be >= 2")


def load_config_file(path) -> dict:
    """Flat key=value config file; '#' starts a comment."""
    values = {}
    defaults = TrainConfig()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, raw = (s.strip() for s in line.split("=", 1))
            if not hasattr(defaults, key):
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = float(raw) if isinstance(getattr(defaults, key), float) else int(raw)
    return values


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(params: dict, grads: dict, st: AdamState):
    """In-place Adam step with bias correction; one step counter per call."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    st.step += 1
    t = st.step
    for name, g in grads.items():
        m = st.m.setdefault(name, np.zeros_like(params[name]))
        v = st.v.setdefault(name, np.zeros_like(params[name]))
        m += (1.0 - st.beta1) * (g - m)
        v += (1.0 - st.beta2) * (g * g - v)
        m_hat = m / (1.0 - st.beta1 ** t)
        v_hat = v / (1.0 - st.beta2 ** t)
        params[name] -= st.lr * m_hat / (np.sqrt(v_hat) + st.eps)


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


@dataclass
class TrainedModel:
    params: dict
    vocab: Vocabulary
    dims: ModelDims
    config: TrainConfig
    encoder_spec: str
    loss_history: list


def fit(grids, records, cfg: TrainConfig, encoder_spec: str = "toy",
        vocab: Vocabulary | None = None, init_embeddings=None) -> TrainedModel:
    """Train a captioning model on (FeatureGrid, CaptionRecord) data.

    grids: dict image_id -> FeatureGrid; records: list of CaptionRecord.
    Deterministic under cfg.seed. Optional init_embeddings seeds the word
    embedding table (e.g. from skip-gram pretraining).
    """
    cfg.validate()
    if not records:
        raise ValueError("empty training set")
    missing = sorted({r.image_id for r in records} - set(grids))
    if missing:
        raise ValueError(f"no feature grid for image ids: {', '.join(missing)}")

    if vocab is None:
        vocab = build_vocab([r.tokens for r in records], min_count=cfg.min_count)
    pairs = []
    for r in records:
        tokens = r.tokens[:cfg.max_caption_len - 2]
        pairs.append((grids[r.image_id].values, encode(vocab, tokens).ids))

    feature_dim = next(iter(grids.values())).channels
    dims = ModelDims(vocab_size=len(vocab), feature_dim=feature_dim,
                     embed_dim=cfg.embed_dim, hidden_dim=cfg.hidden_dim,
                     attention_dim=cfg.attention_dim)
    rng = np.random.default_rng(cfg.seed)
    params = init_parameters(dims, rng)
    if init_embeddings is not None:
        if init_embeddings.shape != params["embed"].shape:
            raise ValueError(
                f"pretrained embeddings are {init_embeddings.shape}, "
                f"model needs {params['embed'].shape}")
        params["embed"] = np.array(init_embeddings, dtype=np.float64)

    state = AdamState(lr=cfg.lr)
    history = []
    order = np.arange(len(pairs))
    for epoch in range(cfg.epochs):
        rng.shuffle(order)
        epoch_nll, epoch_tokens = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [pairs[i] for i in order[start:start + cfg.batch_size]]
            loss, grads, count = _batch_step(params, batch)
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}")
            clip_gradients(grads, cfg.grad_clip_norm)
            adam_update(params, grads, state)
            epoch_nll += loss * count
            epoch_tokens += count
        history.append(epoch_nll / epoch_tokens)
    return TrainedModel(params=params, vocab=vocab, dims=dims, config=cfg,
                        encoder_spec=encoder_spec, loss_history=history)


def _batch_step(params, batch):
    from . import tensor as T
    tape = T.Tape()
    bound = BoundModel(params, tape)
    loss, count = sequence_nll(batch, bound)
    T.backward(tape, loss)
    grads = {name: t.grad for name, t in bound.tensors.items()}
    return loss.item(), grads, count


def save_checkpoint(trained: TrainedModel, path):
    manifest = []
    chunks = []
    offset = 0
    for name in sorted(trained.params):
        arr = np.ascontiguousarray(trained.params[name], dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format_version": CHECKPOINT_VERSION,
        "encoder_spec": trained.encoder_spec,
        "config": asdict(trained.config),
        "dims": asdict(trained.dims),
        "vocab": trained.vocab.id_to_token[len(RESERVED):],
        "tensors": manifest,
        "payload_bytes": offset,
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path) -> TrainedModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    try:
        version, header_len = struct.unpack_from("<II", blob, 4)
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, expected {CHECKPOINT_VERSION}")
    try:
        header = json.loads(blob[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    payload = blob[12 + header_len:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(
            f"{path}: payload is {len(payload)} bytes, "
            f"expected {header['payload_bytes']}")
    params = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 8
        raw = payload[entry["offset"]:entry["offset"] + size]
        params[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return TrainedModel(
        params=params,
        vocab=Vocabulary(header["vocab"]),
        dims=ModelDims(**header["dims"]),
        config=TrainConfig(**header["config"]),
        encoder_spec=header["encoder_spec"],
        loss_history=[],
    )
