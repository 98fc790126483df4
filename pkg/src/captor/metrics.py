"""Corpus-level caption metrics: BLEU-1..4, ROUGE-L, CIDEr, and METEOR-lite.

All metrics tokenize through text.normalize (callers pass token lists that
already went through it), are deterministic, and are invariant to the order
of references within a pair and of pairs within the corpus.

METEOR is implemented in exact-match-only form: unigram alignment by surface
identity, harmonic mean 10PR/(R+9P), fragmentation penalty 0.5*(chunks/m)^3.
Stem and synonym matching need external resources and are out of scope.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass

from .text import load_captions


@dataclass
class EvalPair:
    image_id: str
    hypothesis: list
    references: list  # list of token lists, at least one non-empty

    def __post_init__(self):
        if not self.references or all(len(r) == 0 for r in self.references):
            raise ValueError(f"{self.image_id}: at least one non-empty reference required")


@dataclass
class ScoreReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    cider: float
    meteor: float

    def as_dict(self):
        return {"bleu1": self.bleu1, "bleu2": self.bleu2, "bleu3": self.bleu3,
                "bleu4": self.bleu4, "rouge_l": self.rouge_l,
                "cider": self.cider, "meteor": self.meteor}


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(pairs, n: int) -> float:
    """Corpus BLEU-n: clipped k-gram precisions for k=1..n, brevity penalty,
    no smoothing (any zero precision gives 0)."""
    if not 1 <= n <= 4:
        raise ValueError("BLEU order must be in 1..4")
    matched = [0] * n
    possible = [0] * n
    hyp_len = 0
    ref_len = 0
    for pair in pairs:
        hyp = pair.hypothesis
        hyp_len += len(hyp)
        # closest reference length; ties go to the shorter reference
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in pair.references)[1]
        for k in range(1, n + 1):
            hyp_counts = _ngrams(hyp, k)
            max_ref = Counter()
            for ref in pair.references:
                for gram, cnt in _ngrams(ref, k).items():
                    max_ref[gram] = max(max_ref[gram], cnt)
            matched[k - 1] += sum(min(cnt, max_ref[g]) for g, cnt in hyp_counts.items())
            possible[k - 1] += max(sum(hyp_counts.values()), 0)
    if any(p == 0 or m == 0 for m, p in zip(matched, possible)):
        return 0.0
    log_prec = sum(math.log(m / p) for m, p in zip(matched, possible)) / n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / max(hyp_len, 1))
    return bp * math.exp(log_prec)


def _lcs_len(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(pairs, beta: float = 1.2) -> float:
    """Mean over pairs of the best LCS F-measure against any reference."""
    total = 0.0
    for pair in pairs:
        best = 0.0
        for ref in pair.references:
            lcs = _lcs_len(pair.hypothesis, ref)
            if lcs == 0 or not pair.hypothesis or not ref:
                continue
            p = lcs / len(pair.hypothesis)
            r = lcs / len(ref)
            f = (1 + beta * beta) * p * r / (r + beta * beta * p)
            best = max(best, f)
        total += best
    return total / len(pairs) if pairs else 0.0


def cider(pairs, max_n: int = 4) -> float:
    """Consensus TF-IDF cosine over n-grams 1..4, averaged and scaled by 10.

    IDF comes from the reference corpus: document frequency is the number of
    images whose reference set contains the n-gram at least once. A
    single-image corpus degenerates (all idf = 0); it is computed anyway.
    """
    pairs = list(pairs)
    n_images = len(pairs)
    if n_images == 0:
        return 0.0
    doc_freq = [defaultdict(int) for _ in range(max_n)]
    for pair in pairs:
        for n in range(1, max_n + 1):
            seen = set()
            for ref in pair.references:
                seen.update(_ngrams(ref, n).keys())
            for gram in seen:
                doc_freq[n - 1][gram] += 1

    def tfidf(tokens, n):
        counts = _ngrams(tokens, n)
        length = max(sum(counts.values()), 1)
        vec = {}
        for gram, cnt in counts.items():
            idf = math.log(n_images / max(doc_freq[n - 1].get(gram, 0), 1))
            vec[gram] = (cnt / length) * idf
        return vec

    def cosine(u, v):
        dot = sum(val * v.get(gram, 0.0) for gram, val in u.items())
        nu = math.sqrt(sum(val * val for val in u.values()))
        nv = math.sqrt(sum(val * val for val in v.values()))
        if nu == 0.0 or nv == 0.0:
            return 0.0
        return dot / (nu * nv)

    total = 0.0
    for pair in pairs:
        per_n = 0.0
        for n in range(1, max_n + 1):
            hyp_vec = tfidf(pair.hypothesis, n)
            sims = [cosine(hyp_vec, tfidf(ref, n)) for ref in pair.references]
            per_n += sum(sims) / len(sims)
        total += per_n / max_n
    return 10.0 * total / n_images


def _align(hyp, ref):
    """Greedy left-to-right exact alignment: (matches, chunks)."""
    used = [False] * len(ref)
    mapping = []  # hyp position -> ref position
    for word in hyp:
        pos = -1
        for j, r in enumerate(ref):
            if not used[j] and r == word:
                pos = j
                used[j] = True
                break
        mapping.append(pos)
    matches = sum(1 for p in mapping if p >= 0)
    chunks = 0
    prev = None
    for p in mapping:
        if p < 0:
            prev = None
            continue
        if prev is None or p != prev + 1:
            chunks += 1
        prev = p
    return matches, chunks


def meteor_lite(pairs) -> float:
    """Exact-match METEOR: F_mean = 10PR/(R+9P), penalty 0.5*(chunks/m)^3."""
    total = 0.0
    for pair in pairs:
        best = 0.0
        for ref in pair.references:
            matches, chunks = _align(pair.hypothesis, ref)
            if matches == 0 or not pair.hypothesis or not ref:
                continue
            p = matches / len(pair.hypothesis)
            r = matches / len(ref)
            f_mean = 10 * p * r / (r + 9 * p)
            penalty = 0.5 * (chunks / matches) ** 3
            best = max(best, f_mean * (1.0 - penalty))
        total += best
    return total / len(pairs) if pairs else 0.0


def score_pairs(pairs) -> ScoreReport:
    pairs = list(pairs)
    return ScoreReport(
        bleu1=bleu(pairs, 1), bleu2=bleu(pairs, 2),
        bleu3=bleu(pairs, 3), bleu4=bleu(pairs, 4),
        rouge_l=rouge_l(pairs), cider=cider(pairs), meteor=meteor_lite(pairs))


def pairs_from_files(hyp_path, ref_path) -> list:
    """Assemble EvalPairs from two captions TSV files (normalize both sides)."""
    hyp_records = load_captions(hyp_path)
    if not hyp_records:
        raise ValueError(f"{hyp_path}: no hypotheses")
    refs = defaultdict(list)
    for rec in load_captions(ref_path):
        refs[rec.image_id].append(list(rec.tokens))
    missing = sorted({r.image_id for r in hyp_records} - set(refs))
    if missing:
        raise ValueError(f"no references for image ids: {', '.join(missing)}")
    pairs = []
    for rec in hyp_records:
        pairs.append(EvalPair(rec.image_id, list(rec.tokens), refs[rec.image_id]))
    return pairs


def score_files(hyp_path, ref_path) -> ScoreReport:
    return score_pairs(pairs_from_files(hyp_path, ref_path))
