"""Caption generation: greedy decoding, beam search, and a brute-force oracle.

All three searches share one step function that yields masked next-token
log-probabilities (start and pad get -inf logits, so the distribution is
renormalized over emittable tokens). Scores are raw summed log-probs with
no length normalization; ties always resolve to the lexicographically
smaller id sequence, which keeps every search deterministic and lets the
beam be compared bit-for-bit against the oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import TooLarge
from .model import ModelParams, forward_logits
from .nn import log_softmax
from .text import END, PAD, START

StepFn = Callable[[tuple[int, ...]], np.ndarray]

ENUMERATION_GUARD = 1_000_000


@dataclass(frozen=True)
class Hypothesis:
    """A partial decode: ids always start with the start id.

    log_prob accumulates ln p(token | prefix) for every id after start;
    finished is set once end is emitted or the length cap forces a stop.
    """

    ids: tuple[int, ...]
    log_prob: float
    finished: bool = False


def model_step_fn(params: ModelParams, image_feat, max_len: int) -> StepFn:
    """Step function for one image: prefix ids -> masked log-prob vector."""
    if params.out_b.shape[0] <= END:
        raise ValueError("decoding needs a vocabulary that includes the end id")
    feat = np.asarray(image_feat, dtype=params.dtype)

    def step(prefix: tuple[int, ...]) -> np.ndarray:
        padded = list(prefix) + [PAD] * (max_len - len(prefix))
        logits = forward_logits(params, feat, padded).astype(np.float64)
        logits[START] = -np.inf
        logits[PAD] = -np.inf
        return log_softmax(logits)

    return step


def _emittable(vocab_size: int):
    return [v for v in range(vocab_size) if v not in (START, PAD)]


def _greedy(step: StepFn, vocab_size: int, max_len: int) -> tuple[int, ...]:
    ids = [START]
    while len(ids) < max_len:
        log_probs = step(tuple(ids))
        nxt = int(np.argmax(log_probs))  # NaN-free by construction; ties -> smallest id
        ids.append(nxt)
        if nxt == END:
            break
    return tuple(ids)


def _beam(
    step: StepFn,
    vocab_size: int,
    max_len: int,
    beam_width: int,
    length_normalize: bool = False,
) -> tuple[int, ...]:
    tokens = _emittable(vocab_size)
    live = [Hypothesis(ids=(START,), log_prob=0.0)]
    finished: list[Hypothesis] = []
    while live and len(finished) < beam_width:
        capacity = beam_width - len(finished)
        candidates = []
        for hyp in live:
            log_probs = step(hyp.ids)
            for v in tokens:
                candidates.append((hyp.ids + (v,), hyp.log_prob + float(log_probs[v])))
        candidates.sort(key=lambda c: (-c[1], c[0]))
        live = []
        for ids, score in candidates[:capacity]:
            if ids[-1] == END or len(ids) >= max_len:
                finished.append(Hypothesis(ids=ids, log_prob=score, finished=True))
            else:
                live.append(Hypothesis(ids=ids, log_prob=score))

    def final_key(h: Hypothesis):
        score = h.log_prob / max(1, len(h.ids) - 1) if length_normalize else h.log_prob
        return (-score, h.ids)

    return min(finished, key=final_key).ids


def _oracle(step: StepFn, vocab_size: int, max_len: int) -> tuple[int, ...]:
    tokens = _emittable(vocab_size)
    best: list = [None, -np.inf]  # [ids, score]; first-found wins ties (lex order)

    def dfs(prefix: tuple[int, ...], score: float) -> None:
        log_probs = step(prefix)
        for v in tokens:
            seq = prefix + (v,)
            total = score + float(log_probs[v])
            if v == END or len(seq) >= max_len:
                if total > best[1]:
                    best[0], best[1] = seq, total
            else:
                dfs(seq, total)

    dfs((START,), 0.0)
    return best[0]


def greedy_decode(params: ModelParams, image_feat, max_len: int) -> tuple[int, ...]:
    """Append the argmax token each step until end or the length cap."""
    step = model_step_fn(params, image_feat, max_len)
    return _greedy(step, params.out_b.shape[0], max_len)


def beam_search(
    params: ModelParams,
    image_feat,
    beam_width: int = 5,
    *,
    max_len: int,
    length_normalize: bool = False,
) -> tuple[int, ...]:
    """Breadth-limited search keeping the top hypotheses by summed log-prob.

    Each step expands every live hypothesis over the emittable vocabulary
    and keeps the best (beam_width - finished) candidates. A hypothesis
    that emits end (or hits max_len) moves to the finished pool, freeing
    its slot; the search stops once the pool holds beam_width sequences,
    and the pool's best raw score wins. length_normalize switches the
    final pick to score per generated token (off by default).

    Raises:
        ValueError: beam_width < 1.
    """
    if beam_width < 1:
        raise ValueError(f"beam_width must be >= 1, got {beam_width}")
    step = model_step_fn(params, image_feat, max_len)
    return _beam(step, params.out_b.shape[0], max_len, beam_width, length_normalize)


def exhaustive_oracle(params: ModelParams, image_feat, *, max_len: int) -> tuple[int, ...]:
    """Enumerate every decodable sequence and return the best-scoring one.

    Test oracle only: guarded to vocab_size ** max_len <= 10^6 sequences.

    Raises:
        TooLarge: the guard is exceeded.
    """
    vocab_size = params.out_b.shape[0]
    if vocab_size**max_len > ENUMERATION_GUARD:
        raise TooLarge(
            f"{vocab_size}^{max_len} sequences exceed the enumeration guard of {ENUMERATION_GUARD}"
        )
    step = model_step_fn(params, image_feat, max_len)
    return _oracle(step, vocab_size, max_len)


def sequence_log_prob(params: ModelParams, image_feat, ids, *, max_len: int) -> float:
    """Summed masked log-prob of an id sequence, accumulated like the searches."""
    step = model_step_fn(params, image_feat, max_len)
    score = 0.0
    seq = tuple(int(i) for i in ids)
    for t in range(1, len(seq)):
        log_probs = step(seq[:t])
        score = score + float(log_probs[seq[t]])
    return score
