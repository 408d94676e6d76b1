"""Model parameters: two dense V x D matrices plus their (de)serialization.

input_vectors holds the representation used as "the embeddings"; only it is
written by save_model.  output_vectors is the target-side matrix the training
objective scores against.  Formats are the interchange conventions most
word-vector tooling understands: a "V D" header, then per word either a text
line of decimals or the token followed by D little-endian float32 values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .corpus import Vocabulary
from .rng import next_uniform, new_state

SIGMOID_RANGE = 6.0
SIGMOID_BINS = 1000


class ModelFormatError(ValueError):
    """Vector file does not match the expected layout."""


@dataclass
class EmbeddingModel:
    input_vectors: np.ndarray  # V x D
    output_vectors: np.ndarray  # V x D

    @property
    def vocab_size(self) -> int:
        return self.input_vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.input_vectors.shape[1]

    @property
    def dtype(self) -> np.dtype:
        return self.input_vectors.dtype

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.input_vectors.copy(), self.output_vectors.copy())

    def assert_finite(self) -> None:
        if not np.isfinite(self.input_vectors).all():
            raise FloatingPointError("non-finite entries in input_vectors")
        if not np.isfinite(self.output_vectors).all():
            raise FloatingPointError("non-finite entries in output_vectors")


@njit(cache=True, nogil=True)
def _fill_uniform(matrix, bound, state):
    rows, cols = matrix.shape
    for i in range(rows):
        for j in range(cols):
            matrix[i, j] = (next_uniform(state) * 2.0 - 1.0) * bound


def init_model(
    vocab_size: int, dim: int, seed: int, dtype=np.float32
) -> EmbeddingModel:
    """Input rows i.i.d. Uniform(-0.5/D, +0.5/D); output rows all zero."""
    if vocab_size < 1 or dim < 1:
        raise ValueError("vocab_size and dim must be positive")
    m_in = np.empty((vocab_size, dim), dtype=np.float64)
    _fill_uniform(m_in, 0.5 / dim, new_state(seed, stream=0x1017))
    return EmbeddingModel(
        m_in.astype(dtype), np.zeros((vocab_size, dim), dtype=dtype)
    )


def sigmoid(x):
    """Exact logistic function, numerically stable for any finite input."""
    if np.isscalar(x) or np.ndim(x) == 0:
        x = float(x)
        if x >= 0:
            return 1.0 / (1.0 + math.exp(-x))
        ex = math.exp(x)
        return ex / (1.0 + ex)
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def build_sigmoid_table(dtype=np.float32) -> np.ndarray:
    """Left-edge table of sigmoid over [-6, 6) with 1000 bins.

    Lookups clamp out-of-range arguments to the first/last bin; the
    quantization error stays below 1.5e-2 and the table is monotone.
    """
    edges = -SIGMOID_RANGE + np.arange(SIGMOID_BINS) * (2.0 * SIGMOID_RANGE / SIGMOID_BINS)
    return sigmoid(edges).astype(dtype)


SIGMOID_TABLE_F32 = build_sigmoid_table(np.float32)
SIGMOID_TABLE_F64 = build_sigmoid_table(np.float64)


@njit(cache=True, nogil=True, inline="always")
def sigmoid_from_table(x, table):
    idx = int((x + 6.0) * (1000.0 / 12.0))
    if idx < 0:
        idx = 0
    elif idx >= 1000:
        idx = 999
    return table[idx]


def save_model(
    model: EmbeddingModel, vocab: Vocabulary, path: str, binary: bool = False
) -> None:
    """Write input_vectors in the standard text or binary vector format."""
    if model.vocab_size != vocab.size:
        raise ValueError(
            f"model has {model.vocab_size} rows but vocabulary has {vocab.size}"
        )
    if binary:
        with open(path, "wb") as fh:
            fh.write(f"{vocab.size} {model.dim}\n".encode("utf-8"))
            rows = np.ascontiguousarray(model.input_vectors, dtype="<f4")
            for i, token in enumerate(vocab.tokens):
                fh.write(token.encode("utf-8") + b" ")
                fh.write(rows[i].tobytes())
                fh.write(b"\n")
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{vocab.size} {model.dim}\n")
            for i, token in enumerate(vocab.tokens):
                values = " ".join(f"{v:.6g}" for v in model.input_vectors[i])
                fh.write(f"{token} {values}\n")


def _parse_header(line: bytes, path: str) -> tuple[int, int]:
    try:
        fields = line.decode("utf-8").split()
        if len(fields) != 2:
            raise ValueError
        v, d = int(fields[0]), int(fields[1])
        if v < 1 or d < 1:
            raise ValueError
    except (ValueError, UnicodeDecodeError):
        raise ModelFormatError(f"{path}: malformed header {line!r}") from None
    return v, d


def detect_format(path: str) -> bool:
    """Best-effort sniff: True when the payload looks binary."""
    with open(path, "rb") as fh:
        header = fh.readline()
        v, d = _parse_header(header, path)
        probe = fh.read(d * 16 + 64)
    try:
        text = probe.decode("utf-8")
    except UnicodeDecodeError:
        return True
    fields = text.split()
    if len(fields) < d + 1:
        return len(probe) > 0
    try:
        [float(f) for f in fields[1 : d + 1]]
        return False
    except ValueError:
        return True


def load_model(
    path: str, binary: bool | None = None
) -> tuple[EmbeddingModel, Vocabulary]:
    """Read a vector file back; output_vectors are not stored and come back zero."""
    if binary is None:
        binary = detect_format(path)
    tokens: list[str] = []
    if binary:
        with open(path, "rb") as fh:
            v, d = _parse_header(fh.readline(), path)
            vectors = np.empty((v, d), dtype=np.float32)
            row_bytes = d * 4
            for i in range(v):
                token = bytearray()
                while True:
                    ch = fh.read(1)
                    if not ch:
                        raise ModelFormatError(
                            f"{path}: truncated file at word {i} of {v}"
                        )
                    if ch == b" ":
                        break
                    token.extend(ch)
                payload = fh.read(row_bytes)
                if len(payload) != row_bytes:
                    raise ModelFormatError(f"{path}: truncated file at word {i} of {v}")
                vectors[i] = np.frombuffer(payload, dtype="<f4")
                tokens.append(token.decode("utf-8").lstrip("\n"))
                nl = fh.read(1)  # trailing newline; tolerate writers that omit it
                if nl not in (b"\n", b""):
                    fh.seek(-1, 1)
    else:
        with open(path, encoding="utf-8") as fh:
            v, d = _parse_header(fh.readline().encode("utf-8"), path)
            vectors = np.empty((v, d), dtype=np.float32)
            for i in range(v):
                line = fh.readline()
                if not line:
                    raise ModelFormatError(f"{path}: truncated file at word {i} of {v}")
                fields = line.rstrip("\n").split(" ")
                if len(fields) != d + 1:
                    raise ModelFormatError(
                        f"{path}: dimension mismatch at word {i}: "
                        f"expected {d} values, got {len(fields) - 1}"
                    )
                tokens.append(fields[0])
                vectors[i] = [float(f) for f in fields[1:]]
    counts = np.ones(v, dtype=np.int64)  # counts are not stored in vector files
    vocab = Vocabulary(tokens, counts, {t: i for i, t in enumerate(tokens)}, v)
    model = EmbeddingModel(vectors, np.zeros_like(vectors))
    return model, vocab


def save_debug(model: EmbeddingModel, vocab: Vocabulary, path: str) -> None:
    """Dump both matrices losslessly; for test fixtures, not interchange."""
    np.savez(
        path,
        input_vectors=model.input_vectors,
        output_vectors=model.output_vectors,
        tokens=np.array(vocab.tokens, dtype=object),
        counts=vocab.counts,
    )


def load_debug(path: str) -> tuple[EmbeddingModel, Vocabulary]:
    data = np.load(path, allow_pickle=True)
    tokens = list(data["tokens"])
    counts = data["counts"]
    vocab = Vocabulary(
        tokens, counts, {t: i for i, t in enumerate(tokens)}, int(counts.sum())
    )
    return EmbeddingModel(data["input_vectors"], data["output_vectors"]), vocab
