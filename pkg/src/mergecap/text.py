"""Caption tokenization, vocabulary construction, and id-sequence coding.

Captions are NFC-normalized and split on whitespace; the Bengali danda and
a few ASCII sentence marks act as extra separators. Encoded sequences are
framed as [start, tokens..., end] and right-padded with the pad id to a
fixed length, which is what the convolutional encoder consumes.
"""

from __future__ import annotations

import hashlib
import unicodedata
from collections import Counter
from dataclasses import dataclass, field

from .errors import CorpusEmpty, EmptyCaption, ParseError, UnknownId

PAD, START, END, UNK = 0, 1, 2, 3
PAD_TOKEN, START_TOKEN, END_TOKEN, UNK_TOKEN = "<pad>", "<start>", "<end>", "<unk>"
SPECIAL_TOKENS = (PAD_TOKEN, START_TOKEN, END_TOKEN, UNK_TOKEN)

# Treated as separators wherever they appear: Bengali danda, period,
# comma, question mark, exclamation mark.
_SEPARATORS = "।.,?!"
_SEPARATOR_TABLE = str.maketrans({c: " " for c in _SEPARATORS})


def tokenize(caption: str) -> list[str]:
    """Split a caption into surface tokens.

    NFC-normalizes, replaces separator punctuation with spaces, and splits
    on Unicode whitespace. Case is preserved (Bengali has none).

    Raises:
        EmptyCaption: nothing remains after splitting.
    """
    normalized = unicodedata.normalize("NFC", caption)
    tokens = normalized.translate(_SEPARATOR_TABLE).split()
    if not tokens:
        raise EmptyCaption("caption has no tokens after normalization")
    return tokens


@dataclass(frozen=True)
class Vocabulary:
    """Bidirectional token/id map with the four reserved special tokens.

    Ids are contiguous: specials occupy 0..3, surface tokens 4..size-1 in
    descending-count order (ties broken by token order). Immutable after
    construction; safe to share across threads.
    """

    token_to_id: dict[str, int]
    id_to_token: dict[int, str]
    counts: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.token_to_id)

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    def id_of(self, token: str) -> int:
        """Id for a surface token; out-of-vocabulary tokens map to unk."""
        return self.token_to_id.get(token, UNK)

    def serialize(self) -> str:
        """Canonical text form: one `id\\ttoken\\tcount` line per id, ascending."""
        lines = []
        for i in range(len(self.token_to_id)):
            token = self.id_to_token[i]
            lines.append(f"{i}\t{token}\t{self.counts.get(token, 0)}")
        return "\n".join(lines) + "\n"

    def content_hash(self) -> str:
        """SHA-256 of the canonical serialization; used to pin checkpoints."""
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.serialize())

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        token_to_id: dict[str, int] = {}
        counts: dict[str, int] = {}
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    id_str, token, count_str = line.split("\t")
                    token_to_id[token] = int(id_str)
                    counts[token] = int(count_str)
                except ValueError as exc:
                    raise ParseError(line_no, f"bad vocabulary line: {exc}") from exc
        id_to_token = {i: t for t, i in token_to_id.items()}
        return cls(token_to_id=token_to_id, id_to_token=id_to_token, counts=counts)


def build_vocab(corpus: list[list[str]], min_count: int = 1) -> Vocabulary:
    """Build a Vocabulary from tokenized captions.

    Tokens occurring at least min_count times receive ids from 4 upward,
    ordered by descending count then ascending token. Tokens that collide
    with a special-token sentinel string are never assigned an id (they
    encode as unk), preserving the specials' reserved meaning.

    Raises:
        CorpusEmpty: corpus is empty.
        ValueError: min_count < 1.
    """
    if not corpus:
        raise CorpusEmpty("cannot build a vocabulary from an empty corpus")
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")

    counts: Counter[str] = Counter()
    for tokens in corpus:
        counts.update(tokens)
    for sentinel in SPECIAL_TOKENS:
        counts.pop(sentinel, None)

    token_to_id = {t: i for i, t in enumerate(SPECIAL_TOKENS)}
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    for token in kept:
        token_to_id[token] = len(token_to_id)

    id_to_token = {i: t for t, i in token_to_id.items()}
    return Vocabulary(token_to_id=token_to_id, id_to_token=id_to_token, counts=dict(counts))


@dataclass(frozen=True)
class EncodedCaption:
    """Fixed-length id sequence: [start, tokens..., end, pad...].

    true_length counts the non-pad positions, so ids[true_length - 1] is
    always the end id.
    """

    ids: tuple[int, ...]
    true_length: int


def encode(tokens: list[str], vocab: Vocabulary, max_len: int) -> EncodedCaption:
    """Encode tokens as [start, ids..., end] right-padded to max_len.

    Captions longer than max_len - 2 tokens are truncated before the end
    marker; out-of-vocabulary tokens become unk.

    Raises:
        ValueError: max_len < 3 (no room for start, a token, and end).
    """
    if max_len < 3:
        raise ValueError(f"max_len must be >= 3, got {max_len}")
    body = [vocab.id_of(t) for t in tokens[: max_len - 2]]
    ids = [START, *body, END]
    true_length = len(ids)
    ids.extend([PAD] * (max_len - true_length))
    return EncodedCaption(ids=tuple(ids), true_length=true_length)


def decode_ids(ids, vocab: Vocabulary) -> str:
    """Render an id sequence as text, dropping start/end/pad markers.

    Raises:
        UnknownId: any id outside 0..len(vocab)-1.
    """
    size = len(vocab)
    words = []
    for i in ids:
        i = int(i)
        if not 0 <= i < size:
            raise UnknownId(f"id {i} outside vocabulary of size {size}")
        if i in (PAD, START, END):
            continue
        words.append(vocab.id_to_token[i])
    return " ".join(words)
