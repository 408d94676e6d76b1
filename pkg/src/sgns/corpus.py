"""Corpus ingestion: vocabulary, subsampling, negative table, window iteration.

Tokenization is whitespace splitting only (corpora like text8 arrive
pre-normalized).  Lines are the sentence unit; lines longer than
MAX_SENTENCE_TOKENS are split so context memory stays bounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np
from numba import njit

from .rng import next_below, next_u64, next_uniform

MAX_SENTENCE_TOKENS = 1000
NEGATIVE_POWER = 0.75
FULL_TABLE_LENGTH = 100_000_000


class EmptyVocabularyError(ValueError):
    """No token survived the min_count filter."""


class TableLengthError(ValueError):
    """Requested negative-table length is smaller than the vocabulary."""


class PartitionError(ValueError):
    """Corpus cannot be split into the requested number of shards."""


@dataclass
class Vocabulary:
    """Token <-> id mapping ordered by descending count.

    Ties are broken by first occurrence in the corpus, so construction is
    deterministic.  Word id i is the position of tokens[i]; counts[i] is its
    corpus frequency after min_count filtering.
    """

    tokens: list[str]
    counts: np.ndarray  # int64, count per word id
    index: dict[str, int]
    total_tokens: int

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def keep_probs(self, threshold: float) -> np.ndarray:
        """Per-word keep probability under frequent-word subsampling."""
        freqs = self.counts / float(self.total_tokens)
        return np.array([keep_probability(f, threshold) for f in freqs])

    def save(self, path: str) -> None:
        """Write one "token<TAB>count" line per entry, in id order."""
        with open(path, "w", encoding="utf-8") as fh:
            for token, count in zip(self.tokens, self.counts):
                fh.write(f"{token}\t{int(count)}\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        tokens: list[str] = []
        counts: list[int] = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                token, _, count = line.rstrip("\n").partition("\t")
                tokens.append(token)
                counts.append(int(count))
        if not tokens:
            raise EmptyVocabularyError(f"no vocabulary entries in {path}")
        index = {t: i for i, t in enumerate(tokens)}
        return cls(tokens, np.asarray(counts, dtype=np.int64), index, int(sum(counts)))


def build_vocab(token_stream: Iterable[str], min_count: int) -> Vocabulary:
    """Count tokens and keep those seen at least min_count times.

    Entries are sorted by count descending; equal counts keep their first
    occurrence order, so the result is deterministic for a given corpus.
    """
    counts: dict[str, int] = {}
    for token in token_stream:
        counts[token] = counts.get(token, 0) + 1
    # dict preserves insertion (first occurrence) order; stable sort keeps it for ties
    kept = [(t, c) for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda item: -item[1])
    if not kept:
        raise EmptyVocabularyError(
            f"no token appears at least min_count={min_count} times"
        )
    tokens = [t for t, _ in kept]
    count_arr = np.array([c for _, c in kept], dtype=np.int64)
    index = {t: i for i, t in enumerate(tokens)}
    return Vocabulary(tokens, count_arr, index, int(count_arr.sum()))


def keep_probability(word_frequency_fraction: float, threshold: float) -> float:
    """Probability of keeping a word occurrence during subsampling.

    p = (sqrt(f/t) + 1) * (t/f), clamped to [0, 1]; decreasing in f, so only
    words more frequent than ~2.6*t are ever dropped.
    """
    f = word_frequency_fraction
    t = threshold
    p = (math.sqrt(f / t) + 1.0) * (t / f)
    return min(1.0, p)


@dataclass
class NegativeTable:
    """Unigram-power sampling table: slot composition encodes P(w) ~ count^power."""

    slots: np.ndarray  # int32 word ids, length L
    power: float
    source_vocab_size: int

    def __len__(self) -> int:
        return len(self.slots)


def default_table_length(vocab_size: int) -> int:
    """Full-size table for realistic vocabularies, proportionally smaller below 10^4 words."""
    if vocab_size >= 10_000:
        return FULL_TABLE_LENGTH
    return max(vocab_size, 10_000 * vocab_size)


def build_negative_table(
    vocab: Vocabulary, power: float = NEGATIVE_POWER, length: int | None = None
) -> NegativeTable:
    """Fill a length-L array so word w owns a count^power share of slots (±1 slot)."""
    if length is None:
        length = default_table_length(vocab.size)
    if length < vocab.size:
        raise TableLengthError(
            f"table length {length} is smaller than vocabulary size {vocab.size}"
        )
    weights = np.power(vocab.counts.astype(np.float64), power)
    cumulative = np.cumsum(weights)
    boundaries = np.floor(length * cumulative / cumulative[-1]).astype(np.int64)
    boundaries[-1] = length
    slot_counts = np.diff(boundaries, prepend=0)
    slots = np.repeat(np.arange(vocab.size, dtype=np.int32), slot_counts)
    return NegativeTable(slots, power, vocab.size)


@njit(cache=True, nogil=True, inline="always")
def _draw_slot(slots, state):
    return slots[next_u64(state) % np.uint64(slots.shape[0])]


def sample_negative(table: NegativeTable, rng_state: np.ndarray) -> int:
    """Uniform pick over table slots."""
    return int(_draw_slot(table.slots, rng_state))


@njit(cache=True, nogil=True)
def _subsample(ids, start, stop, keep_probs, state, out):
    """Keep/drop decision per token; one draw is consumed per token.

    Returns the number of surviving tokens written to out.
    """
    kept = 0
    for i in range(start, stop):
        w = ids[i]
        u = next_uniform(state)
        if u < keep_probs[w]:
            out[kept] = w
            kept += 1
    return kept


def subsample_sentence(
    sentence_ids: np.ndarray, keep_probs: np.ndarray, rng_state: np.ndarray
) -> np.ndarray:
    """Drop frequent-word occurrences; survivors keep their relative order."""
    out = np.empty(len(sentence_ids), dtype=np.int32)
    kept = _subsample(
        np.ascontiguousarray(sentence_ids, dtype=np.int32),
        0,
        len(sentence_ids),
        keep_probs,
        rng_state,
        out,
    )
    return out[:kept].copy()


@dataclass
class WindowContext:
    """One training step: the center word as target, its neighbors as inputs."""

    target: int
    inputs: np.ndarray  # int32 word ids, 1..2c of them

    def __post_init__(self) -> None:
        self.inputs = np.asarray(self.inputs, dtype=np.int32)


def iterate_windows(
    sentence: np.ndarray,
    window: int,
    rng_state: np.ndarray,
    dynamic: bool = True,
) -> Iterator[WindowContext]:
    """Slide a (possibly shrunk) window over the sentence.

    For each position one half-width b is drawn uniformly from {1..window}
    (or fixed at window when dynamic=False); the context pairs the center
    word as target with the <=2b in-sentence neighbors as inputs.  Positions
    with no neighbors yield nothing but still consume their b draw, keeping
    the stream aligned with the fused training loop.
    """
    sentence = np.asarray(sentence, dtype=np.int32)
    n = len(sentence)
    for pos in range(n):
        if dynamic:
            b = 1 + next_below(rng_state, window)
        else:
            b = window
        lo = max(0, pos - b)
        hi = min(n, pos + b + 1)
        size = hi - lo - 1
        if size <= 0:
            continue
        inputs = np.empty(size, dtype=np.int32)
        inputs[: pos - lo] = sentence[lo:pos]
        inputs[pos - lo :] = sentence[pos + 1 : hi]
        yield WindowContext(int(sentence[pos]), inputs)


@dataclass
class EncodedCorpus:
    """Corpus as flat word ids plus sentence boundaries.

    Sentence i spans ids[offsets[i]:offsets[i+1]]; sentence_bytes[i] is its
    source byte footprint (used for shard balancing).  Out-of-vocabulary
    tokens are dropped at encoding time.
    """

    ids: np.ndarray  # int32, all in-vocab tokens in corpus order
    offsets: np.ndarray  # int64, len n_sentences + 1
    sentence_bytes: np.ndarray  # int64 per sentence

    @property
    def n_sentences(self) -> int:
        return len(self.offsets) - 1

    @property
    def n_tokens(self) -> int:
        return int(self.offsets[-1])

    def sentence(self, i: int) -> np.ndarray:
        return self.ids[self.offsets[i] : self.offsets[i + 1]]


def read_tokens(path: str) -> Iterator[str]:
    """Whitespace tokens from a UTF-8 text file, streamed line by line."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            yield from line.split()


def encode_corpus(
    path: str, vocab: Vocabulary, max_sentence: int = MAX_SENTENCE_TOKENS
) -> EncodedCorpus:
    """Map the corpus to word ids, splitting long lines into sentences."""
    ids: list[np.ndarray] = []
    offsets = [0]
    sent_bytes = []
    total = 0
    index = vocab.index
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            current: list[int] = []
            current_bytes = 0
            for token in line.split():
                current_bytes += len(token.encode("utf-8")) + 1
                wid = index.get(token)
                if wid is None:
                    continue
                current.append(wid)
                if len(current) >= max_sentence:
                    ids.append(np.asarray(current, dtype=np.int32))
                    total += len(current)
                    offsets.append(total)
                    sent_bytes.append(current_bytes)
                    current = []
                    current_bytes = 0
            if current:
                ids.append(np.asarray(current, dtype=np.int32))
                total += len(current)
                offsets.append(total)
                sent_bytes.append(current_bytes)
    flat = np.concatenate(ids) if ids else np.empty(0, dtype=np.int32)
    return EncodedCorpus(
        flat,
        np.asarray(offsets, dtype=np.int64),
        np.asarray(sent_bytes, dtype=np.int64),
    )


def partition_sentences(encoded: EncodedCorpus, n_parts: int) -> list[tuple[int, int]]:
    """Split sentences into n contiguous ranges of near-equal byte size.

    Ranges are disjoint, cover the corpus, and each boundary lands on a
    sentence boundary, so shard sizes differ by at most one sentence.
    """
    if n_parts < 1:
        raise PartitionError("need at least one shard")
    if n_parts > encoded.n_sentences:
        raise PartitionError(
            f"cannot split {encoded.n_sentences} sentences into {n_parts} shards"
        )
    cum = np.cumsum(encoded.sentence_bytes)
    total = float(cum[-1])
    bounds = [0]
    for k in range(1, n_parts):
        # smallest boundary whose cumulative size reaches the k-th target
        cut = int(np.searchsorted(cum, total * k / n_parts)) + 1
        bounds.append(max(bounds[-1] + 1, min(cut, encoded.n_sentences - (n_parts - k))))
    bounds.append(encoded.n_sentences)
    return [(bounds[i], bounds[i + 1]) for i in range(n_parts)]


def shard_byte_sizes(encoded: EncodedCorpus, shards: list[tuple[int, int]]) -> list[int]:
    return [int(encoded.sentence_bytes[lo:hi].sum()) for lo, hi in shards]
