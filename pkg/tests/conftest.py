"""Shared fixtures: tiny corpora on disk and synthetic structured corpora."""

import threading

import numpy as np
import pytest

from sgns.distributed import InProcessGroup, distributed_train


def run_inprocess(corpus_path, config, policy, nodes, prebuilt=None):
    """Run N in-process workers to completion; returns their (model, stats)."""
    group = InProcessGroup(nodes)
    results = [None] * nodes
    errors = []

    def worker(rank, endpoint):
        try:
            results[rank] = distributed_train(
                corpus_path, config, policy, endpoint, prebuilt=prebuilt
            )
        except Exception as exc:  # propagate the first failure to the caller
            errors.append(exc)
            group.abort()

    threads = [
        threading.Thread(target=worker, args=(rank, ep))
        for rank, ep in enumerate(group.endpoints())
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return results


@pytest.fixture
def write_corpus(tmp_path):
    def _write(text: str, name: str = "corpus.txt") -> str:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return str(path)

    return _write


def make_zipf_corpus(
    n_tokens: int,
    vocab_size: int,
    seed: int = 0,
    words_per_line: int = 50,
) -> str:
    """Zipf-distributed token stream over a synthetic vocabulary."""
    rng = np.random.default_rng(seed)
    ranks = np.arange(1, vocab_size + 1, dtype=np.float64)
    probs = 1.0 / ranks
    probs /= probs.sum()
    draws = rng.choice(vocab_size, size=n_tokens, p=probs)
    words = np.array([f"w{i}" for i in range(vocab_size)])
    lines = [
        " ".join(words[draws[i : i + words_per_line]])
        for i in range(0, n_tokens, words_per_line)
    ]
    return "\n".join(lines) + "\n"


def make_topic_corpus(
    n_sentences: int = 3000,
    n_topics: int = 12,
    words_per_topic: int = 20,
    sentence_len: int = 18,
    seed: int = 3,
) -> tuple[str, list[list[str]]]:
    """Corpus whose sentences each draw words from a single topic.

    Words of one topic co-occur and should embed close together; the topic
    membership lists come back for quality checks.
    """
    rng = np.random.default_rng(seed)
    topics = [
        [f"t{t}w{w}" for w in range(words_per_topic)] for t in range(n_topics)
    ]
    lines = []
    for _ in range(n_sentences):
        t = rng.integers(n_topics)
        picks = rng.integers(0, words_per_topic, size=sentence_len)
        lines.append(" ".join(topics[t][p] for p in picks))
    return "\n".join(lines) + "\n", topics


@pytest.fixture(scope="session")
def zipf_corpus_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "zipf.txt"
    path.write_text(make_zipf_corpus(400_000, 2000, seed=11), encoding="utf-8")
    return str(path)


@pytest.fixture(scope="session")
def topic_corpus(tmp_path_factory):
    text, topics = make_topic_corpus()
    path = tmp_path_factory.mktemp("data") / "topics.txt"
    path.write_text(text, encoding="utf-8")
    return str(path), topics
