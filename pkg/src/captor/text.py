"""Caption text handling: normalization, vocabulary, and sequence encoding.

Normalization is intentionally aggressive: lowercase, strip everything that is
not an ASCII letter, split on whitespace. Both training and metric scoring go
through the same function so the two pipelines can never diverge.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass

PAD, START, END, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")

_NON_ALPHA = re.compile(r"[^a-z\s]+")


class CaptionFormatError(ValueError):
    """Malformed captions file."""


def normalize(raw: str) -> list[str]:
    """Lowercase, drop non-alphabetic characters, split on whitespace runs."""
    cleaned = _NON_ALPHA.sub("", raw.lower())
    return cleaned.split()


@dataclass(frozen=True)
class CaptionSequence:
    ids: tuple
    # length including START/END
    @property
    def length(self):
        return len(self.ids)


@dataclass(frozen=True)
class CaptionRecord:
    image_id: str
    raw: str
    tokens: tuple


class Vocabulary:
    """Dense bidirectional token<->id map with fixed reserved ids 0..3."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(RESERVED) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.id_to_token)

    @property
    def size(self):
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self.id_to_token):
            raise ValueError(f"token id {idx} out of range (vocab size {len(self)})")
        return self.id_to_token[idx]


def build_vocab(corpus, min_count: int = 1) -> Vocabulary:
    """Vocabulary from token lists; frequency-descending ids, ties lexicographic."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter()
    n_lists = 0
    for tokens in corpus:
        n_lists += 1
        counts.update(tokens)
    if n_lists == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


def encode(vocab: Vocabulary, tokens) -> CaptionSequence:
    ids = [START] + [vocab.id_of(t) for t in tokens] + [END]
    return CaptionSequence(tuple(ids))


def decode(vocab: Vocabulary, ids) -> str:
    words = []
    for i in ids:
        if not 0 <= i < len(vocab):
            raise ValueError(f"token id {i} out of range (vocab size {len(vocab)})")
        if i in (PAD, START, END, UNK):
            continue
        words.append(vocab.id_to_token[i])
    return " ".join(words)


def load_captions(path) -> list[CaptionRecord]:
    """Read `image_id<TAB>caption` lines; order preserved, blank lines skipped."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            if "\t" not in line:
                raise CaptionFormatError(f"{path}:{lineno}: expected image_id<TAB>caption")
            image_id, raw = line.split("\t", 1)
            if not image_id:
                raise CaptionFormatError(f"{path}:{lineno}: empty image_id")
            records.append(CaptionRecord(image_id, raw, tuple(normalize(raw))))
    return records
