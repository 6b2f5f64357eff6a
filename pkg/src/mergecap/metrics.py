"""Corpus-level caption metrics over multi-reference ground truth.

BLEU follows the COCO evaluation convention: pooled clipped n-gram
precision, uniform geometric mean, closest-reference-length brevity
penalty, and no smoothing. ROUGE-L uses the LCS F-measure with beta 1.2.
CIDEr is the original consensus formulation (no clipping or length
penalty), with document frequencies taken over distinct image ids so the
score ignores duplicated pairs.

Corpus reductions use math.fsum, so every score is exactly invariant
under permutation of the pairs and of each reference list.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

from .errors import EmptyCorpus

ROUGE_BETA = 1.2
CIDER_MAX_N = 4


@dataclass(frozen=True)
class EvalPair:
    """One image's candidate tokens against its reference token lists."""

    image_id: str
    candidate: list[str]
    references: list[list[str]]

    def __post_init__(self):
        if not self.references:
            raise ValueError(f"pair {self.image_id!r} has no references")


@dataclass
class MetricReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    cider: float
    meteor: None = None
    spice: None = None
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "bleu1": self.bleu1,
            "bleu2": self.bleu2,
            "bleu3": self.bleu3,
            "bleu4": self.bleu4,
            "rouge_l": self.rouge_l,
            "cider": self.cider,
            "meteor": self.meteor,
            "spice": self.spice,
            "counts": self.counts,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _require_pairs(pairs) -> None:
    if not pairs:
        raise EmptyCorpus("metric requested over an empty pair list")


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# --- BLEU ---

def bleu_stats(pairs: list[EvalPair], max_n: int) -> tuple[list[int], list[int], int, int]:
    """Pooled corpus statistics: clipped numerators and candidate-ngram
    denominators per n, plus effective reference length r and candidate
    length c. The numerators are what "adding a reference never decreases"
    applies to."""
    _require_pairs(pairs)
    numer = [0] * max_n
    denom = [0] * max_n
    ref_len, cand_len = 0, 0
    for pair in pairs:
        cand = pair.candidate
        cand_len += len(cand)
        # closest reference length; ties go to the shorter reference
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in pair.references)[1]
        for n in range(1, max_n + 1):
            cand_counts = _ngrams(cand, n)
            if not cand_counts:
                continue
            max_ref = Counter()
            for ref in pair.references:
                for gram, count in _ngrams(ref, n).items():
                    if count > max_ref[gram]:
                        max_ref[gram] = count
            numer[n - 1] += sum(min(c, max_ref[g]) for g, c in cand_counts.items())
            denom[n - 1] += sum(cand_counts.values())
    return numer, denom, ref_len, cand_len


def bleu(pairs: list[EvalPair], max_n: int = 4) -> float:
    """Corpus BLEU with uniform weights and no smoothing; any zero
    n-gram precision zeroes the score.

    Raises:
        EmptyCorpus: pairs is empty.
        ValueError: max_n outside 1..4.
    """
    if not 1 <= max_n <= 4:
        raise ValueError(f"max_n must be in 1..4, got {max_n}")
    numer, denom, ref_len, cand_len = bleu_stats(pairs, max_n)
    if cand_len == 0:
        return 0.0
    precisions = []
    for num, den in zip(numer, denom):
        if den == 0 or num == 0:
            return 0.0
        precisions.append(num / den)
    brevity = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return brevity * math.exp(math.fsum(math.log(p) for p in precisions) / max_n)


# --- ROUGE-L ---

def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        current = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                current.append(prev[j - 1] + 1)
            else:
                current.append(max(prev[j], current[j - 1]))
        prev = current
    return prev[-1]


def rouge_l(pairs: list[EvalPair]) -> float:
    """Mean over pairs of the best LCS F-measure across references."""
    _require_pairs(pairs)
    beta_sq = ROUGE_BETA**2
    scores = []
    for pair in pairs:
        best = 0.0
        for ref in pair.references:
            lcs = _lcs_length(pair.candidate, ref)
            if lcs == 0:
                continue
            precision = lcs / len(pair.candidate)
            recall = lcs / len(ref)
            f = (1 + beta_sq) * precision * recall / (recall + beta_sq * precision)
            best = max(best, f)
        scores.append(best)
    return math.fsum(scores) / len(scores)


# --- CIDEr ---

def _cider_doc_frequency(pairs: list[EvalPair]) -> tuple[list[Counter], int]:
    """Per-n document frequencies over distinct image ids (first wins)."""
    seen: dict[str, list[list[str]]] = {}
    for pair in pairs:
        seen.setdefault(pair.image_id, pair.references)
    df = [Counter() for _ in range(CIDER_MAX_N)]
    for references in seen.values():
        for n in range(1, CIDER_MAX_N + 1):
            grams = set()
            for ref in references:
                grams.update(_ngrams(ref, n).keys())
            for gram in grams:
                df[n - 1][gram] += 1
    return df, len(seen)


def _tfidf(tokens: list[str], n: int, df: Counter, n_images: int) -> dict:
    vec = {}
    for gram, count in _ngrams(tokens, n).items():
        # unseen n-grams keep idf = ln(N); matches the COCO tooling floor
        vec[gram] = count * math.log(n_images / max(df[gram], 1))
    return vec


def _cosine(a: dict, b: dict) -> float:
    norm_a = math.sqrt(math.fsum(v * v for v in a.values()))
    norm_b = math.sqrt(math.fsum(v * v for v in b.values()))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    dot = math.fsum(v * b[g] for g, v in a.items() if g in b)
    return dot / (norm_a * norm_b)


def cider(pairs: list[EvalPair]) -> float:
    """Consensus TF-IDF n-gram similarity, scaled by 10.

    For each n in 1..4 a pair scores the mean cosine similarity between its
    candidate's TF-IDF vector and each reference's; the corpus score is 10
    times the mean over n of the mean over pairs. A single-image corpus has
    all-zero IDF and scores 0 by construction.
    """
    _require_pairs(pairs)
    df, n_images = _cider_doc_frequency(pairs)
    per_n_means = []
    for n in range(1, CIDER_MAX_N + 1):
        pair_scores = []
        for pair in pairs:
            cand_vec = _tfidf(pair.candidate, n, df[n - 1], n_images)
            sims = [
                _cosine(cand_vec, _tfidf(ref, n, df[n - 1], n_images))
                for ref in pair.references
            ]
            pair_scores.append(math.fsum(sims) / len(sims))
        per_n_means.append(math.fsum(pair_scores) / len(pair_scores))
    return 10.0 * math.fsum(per_n_means) / CIDER_MAX_N


def evaluate_corpus(pairs: list[EvalPair]) -> MetricReport:
    """All implemented metrics for one candidate set.

    Raises:
        EmptyCorpus: pairs is empty.
    """
    _require_pairs(pairs)
    return MetricReport(
        bleu1=bleu(pairs, 1),
        bleu2=bleu(pairs, 2),
        bleu3=bleu(pairs, 3),
        bleu4=bleu(pairs, 4),
        rouge_l=rouge_l(pairs),
        cider=cider(pairs),
        counts={
            "pairs": len(pairs),
            "images": len({p.image_id for p in pairs}),
            "references": sum(len(p.references) for p in pairs),
        },
    )
