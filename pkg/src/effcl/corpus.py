"""Corpus ingestion, anchor sampling, and MLM masking.

Corpus files are UTF-8 text, one document per line, whitespace-separated
tokens.  Vocabulary files hold one token per line; the line number is the
token id, with ids 0/1/2 reserved for PAD/UNK/MASK.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorpusError

logger = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
MASK_ID = 2
RESERVED_TOKENS = ("<pad>", "<unk>", "<mask>")
NUM_RESERVED = len(RESERVED_TOKENS)


class Vocabulary:
    """Bidirectional token-string / token-id map with fixed reserved ids."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:NUM_RESERVED]) != RESERVED_TOKENS:
            raise CorpusError(
                f"vocabulary must start with the reserved tokens {RESERVED_TOKENS}"
            )
        self._tokens = tokens
        self._ids = {t: i for i, t in enumerate(tokens)}
        if len(self._ids) != len(tokens):
            raise CorpusError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self._tokens)

    def token(self, token_id: int) -> str:
        return self._tokens[token_id]

    def id_of(self, token: str) -> int:
        """Id of `token`, or UNK for out-of-vocabulary strings."""
        return self._ids.get(token, UNK_ID)

    def encode(self, tokens) -> np.ndarray:
        return np.array([self.id_of(t) for t in tokens], dtype=np.int64)

    @classmethod
    def from_corpus(cls, path, max_size: int | None = None) -> "Vocabulary":
        """Build a vocabulary from a corpus file, in first-occurrence order.

        `max_size` caps the total size (reserved ids included); later token
        types map to UNK.
        """
        tokens = list(RESERVED_TOKENS)
        seen = set(RESERVED_TOKENS)
        try:
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    for tok in line.split():
                        if tok in seen:
                            continue
                        if max_size is not None and len(tokens) >= max_size:
                            continue
                        seen.add(tok)
                        tokens.append(tok)
        except OSError as exc:
            raise CorpusError(f"cannot read corpus file {path}: {exc}") from exc
        return cls(tokens)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        try:
            with open(path, encoding="utf-8") as fh:
                tokens = [line.rstrip("\n") for line in fh]
        except OSError as exc:
            raise CorpusError(f"cannot read vocabulary file {path}: {exc}") from exc
        return cls(tokens)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self._tokens:
                fh.write(tok + "\n")


@dataclass(frozen=True)
class Document:
    """One corpus document as token ids."""

    id: str
    tokens: np.ndarray

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise CorpusError(f"document {self.id} is empty")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class TokenSequence:
    """A fixed-length contiguous slice of a document (the anchor)."""

    tokens: np.ndarray
    source_doc: str
    offset: int


@dataclass(frozen=True)
class MaskedSequence:
    """An anchor after MLM masking, plus what it should predict."""

    input_tokens: np.ndarray
    target_tokens: np.ndarray
    masked_positions: np.ndarray  # sorted indices into the sequence


def load_corpus(path, min_tokens: int, vocab: Vocabulary) -> list[Document]:
    """Load every document with at least `min_tokens` tokens, in file order.

    Tokens missing from `vocab` map to UNK.  Blank lines are skipped.
    """
    docs = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                toks = line.split()
                if not toks or len(toks) < min_tokens:
                    continue
                docs.append(
                    Document(id=f"doc{lineno:06d}", tokens=vocab.encode(toks))
                )
    except OSError as exc:
        raise CorpusError(f"cannot read corpus file {path}: {exc}") from exc
    return docs


def sample_anchor(doc: Document, anchor_len: int, rng: np.random.Generator) -> TokenSequence:
    """Sample a length-`anchor_len` window uniformly from the document."""
    if len(doc) < anchor_len:
        raise ValueError(
            f"document {doc.id} has {len(doc)} tokens, shorter than anchor_len={anchor_len}"
        )
    offset = int(rng.integers(0, len(doc) - anchor_len + 1))
    return TokenSequence(
        tokens=doc.tokens[offset : offset + anchor_len].copy(),
        source_doc=doc.id,
        offset=offset,
    )


def apply_mlm_mask(
    seq: TokenSequence,
    mask_prob: float,
    rng: np.random.Generator,
    vocab_size: int,
) -> MaskedSequence:
    """BERT-style masking: select positions i.i.d. with `mask_prob`, then
    replace 80% with MASK, 10% with a random non-reserved token, and leave
    10% unchanged.
    """
    if not 0.0 <= mask_prob <= 1.0:
        raise ValueError(f"mask_prob must be in [0, 1], got {mask_prob}")
    target = seq.tokens.copy()
    inputs = seq.tokens.copy()
    selected = rng.random(len(target)) < mask_prob
    positions = np.flatnonzero(selected)
    if positions.size:
        action = rng.random(positions.size)
        mask_it = positions[action < 0.8]
        random_it = positions[(action >= 0.8) & (action < 0.9)]
        inputs[mask_it] = MASK_ID
        if random_it.size:
            if vocab_size <= NUM_RESERVED:
                raise ValueError("vocabulary has no non-reserved tokens to sample")
            inputs[random_it] = rng.integers(
                NUM_RESERVED, vocab_size, size=random_it.size, dtype=np.int64
            )
    return MaskedSequence(
        input_tokens=inputs, target_tokens=target, masked_positions=positions
    )


def generate_toy_corpus(
    path,
    num_docs: int = 2000,
    seed: int = 0,
    doc_len_range: tuple[int, int] = (96, 160),
    num_topics: int = 8,
    words_per_topic: int = 25,
    shared_words: int = 40,
) -> int:
    """Write a synthetic topic-structured corpus; returns the word-type count.

    Each document draws 70% of tokens from one topic's word set and 30%
    from a shared pool, both with 1/rank weights, so documents are
    distinguishable and token statistics are learnable at toy scale.
    """
    rng = np.random.default_rng(seed)
    topics = [
        [f"t{t}w{i}" for i in range(words_per_topic)] for t in range(num_topics)
    ]
    shared = [f"sw{i}" for i in range(shared_words)]

    def ranked_probs(n):
        w = 1.0 / np.arange(1, n + 1)
        return w / w.sum()

    p_topic = ranked_probs(words_per_topic)
    p_shared = ranked_probs(shared_words)
    lo, hi = doc_len_range
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for _ in range(num_docs):
            topic = int(rng.integers(num_topics))
            length = int(rng.integers(lo, hi + 1))
            from_topic = rng.random(length) < 0.7
            words = [
                topics[topic][rng.choice(words_per_topic, p=p_topic)]
                if ft
                else shared[rng.choice(shared_words, p=p_shared)]
                for ft in from_topic
            ]
            fh.write(" ".join(words) + "\n")
    return num_topics * words_per_topic + shared_words
