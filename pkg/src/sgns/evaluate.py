"""Embedding quality: word-similarity correlation and analogy accuracy.

Similarity files hold "word1 word2 score" lines (whitespace or tabs, optional
header); the score is Spearman's rank correlation between human judgments and
cosine similarities, reported x100.  Analogy files hold ": section" headers
and four-token "a b c d" questions; a question counts as correct when the
vocabulary word (excluding a, b, c) whose vector is closest to b - a + c by
cosine is exactly d, over unit-normalized input vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Vocabulary
from .model import EmbeddingModel


class EvalDataError(ValueError):
    """Test-set file could not be parsed or yielded nothing usable."""


class ZeroVectorError(ValueError):
    """Cosine similarity is undefined for a zero vector."""


class UndefinedCorrelationError(ValueError):
    """Rank correlation is undefined when either side has zero rank variance."""


@dataclass
class SimilarityPair:
    word_a: str
    word_b: str
    human_score: float


@dataclass
class AnalogyQuestion:
    a: str
    b: str
    c: str
    d: str
    section: str


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroVectorError("cosine of a zero vector is undefined")
    return float(np.dot(u, v) / (nu * nv))


def rank_average(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(pred_scores, gold_scores) -> float:
    """Pearson correlation of the two fractional-rank vectors."""
    pred = np.asarray(pred_scores, dtype=np.float64)
    gold = np.asarray(gold_scores, dtype=np.float64)
    if pred.shape != gold.shape or pred.ndim != 1:
        raise ValueError("score lists must be 1-d and equally long")
    if len(pred) < 2:
        raise ValueError("need at least two pairs")
    rp = rank_average(pred)
    rg = rank_average(gold)
    dp = rp - rp.mean()
    dg = rg - rg.mean()
    denom = np.sqrt((dp * dp).sum() * (dg * dg).sum())
    if denom == 0.0:
        raise UndefinedCorrelationError("zero rank variance")
    return float((dp * dg).sum() / denom)


def load_similarity_pairs(path: str) -> list[SimilarityPair]:
    pairs: list[SimilarityPair] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            fields = line.split()
            if not fields:
                continue
            try:
                score = float(fields[2]) if len(fields) >= 3 else None
            except ValueError:
                score = None
            if score is None:
                if lineno == 0:
                    continue  # header line
                raise EvalDataError(f"{path}:{lineno + 1}: expected 'word word score'")
            pairs.append(SimilarityPair(fields[0], fields[1], score))
    if not pairs:
        raise EvalDataError(f"{path}: no similarity pairs found")
    return pairs


def load_analogy_questions(path: str) -> list[AnalogyQuestion]:
    questions: list[AnalogyQuestion] = []
    section = "(none)"
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            fields = line.split()
            if not fields:
                continue
            if fields[0] == ":":
                section = " ".join(fields[1:]) or "(unnamed)"
                continue
            if len(fields) != 4:
                raise EvalDataError(
                    f"{path}:{lineno + 1}: expected 4 tokens, got {len(fields)}"
                )
            questions.append(AnalogyQuestion(*fields, section=section))
    if not questions:
        raise EvalDataError(f"{path}: no analogy questions found")
    return questions


def _lookup(vocab: Vocabulary, token: str) -> int | None:
    wid = vocab.index.get(token)
    if wid is None:
        wid = vocab.index.get(token.lower())
    return wid


def eval_similarity(
    model: EmbeddingModel, vocab: Vocabulary, pairs_file: str
) -> tuple[float, int, int]:
    """Spearman x100 over in-vocabulary pairs, plus used/skipped counts."""
    pairs = load_similarity_pairs(pairs_file)
    predicted: list[float] = []
    gold: list[float] = []
    skipped = 0
    vectors = model.input_vectors
    for pair in pairs:
        ia = _lookup(vocab, pair.word_a)
        ib = _lookup(vocab, pair.word_b)
        if ia is None or ib is None:
            skipped += 1
            continue
        predicted.append(cosine(vectors[ia], vectors[ib]))
        gold.append(pair.human_score)
    if not predicted:
        raise EvalDataError(f"{pairs_file}: every pair has an out-of-vocabulary word")
    rho = spearman(predicted, gold)
    return 100.0 * rho, len(predicted), skipped


def eval_analogy(
    model: EmbeddingModel,
    vocab: Vocabulary,
    questions_file: str,
    max_vocab: int | None = None,
    block: int = 512,
) -> tuple[float, dict[str, tuple[int, int]], int]:
    """Exact-match accuracy x100, per-section (correct, asked), skipped count.

    Candidates are the max_vocab most frequent words (all when None) minus
    the three question words; questions touching anything out of that range
    are skipped.
    """
    questions = load_analogy_questions(questions_file)
    limit = vocab.size if max_vocab is None else min(max_vocab, vocab.size)
    vectors = model.input_vectors[:limit].astype(np.float32)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    unit = vectors / norms

    resolved = []
    skipped = 0
    for q in questions:
        ids = [_lookup(vocab, w) for w in (q.a, q.b, q.c, q.d)]
        if any(i is None or i >= limit for i in ids):
            skipped += 1
            continue
        resolved.append((ids, q.section))
    by_section: dict[str, tuple[int, int]] = {}
    if not resolved:
        return 0.0, by_section, skipped

    correct_total = 0
    for start in range(0, len(resolved), block):
        chunk = resolved[start : start + block]
        idx = np.array([ids for ids, _ in chunk], dtype=np.int64)
        targets = unit[idx[:, 1]] - unit[idx[:, 0]] + unit[idx[:, 2]]
        scores = targets @ unit.T
        rows = np.arange(len(chunk))
        for col in range(3):
            scores[rows, idx[:, col]] = -np.inf
        best = np.argmax(scores, axis=1)
        for row, (ids, section) in enumerate(chunk):
            ok = int(best[row] == ids[3])
            correct_total += ok
            c, n = by_section.get(section, (0, 0))
            by_section[section] = (c + ok, n + 1)
    accuracy = 100.0 * correct_total / len(resolved)
    return accuracy, by_section, skipped
