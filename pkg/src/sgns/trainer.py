"""Training orchestration: epochs, threads, learning-rate decay, throughput.

Each worker thread owns a contiguous sentence range, an independent draw
stream, and per-thread scratch; threads share the model without locks and
tolerate conflicting row updates.  The per-sentence pipeline (subsample,
slide the window, run the kernel) is fused into one compiled driver per
kernel so the Python interpreter never touches the hot loop.  Drivers are
resumable: they stop after a word budget and return their position, which
both keeps single-process runs and the periodically synchronized distributed
runs on the exact same schedule.

Learning rate decays linearly with the shared count of words read, refreshed
every 10,000 words per thread, and never drops below
alpha0 * alpha_floor_fraction.
"""

from __future__ import annotations

import sys
import threading
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .corpus import (
    EncodedCorpus,
    NegativeTable,
    Vocabulary,
    _subsample,
    build_negative_table,
    build_vocab,
    encode_corpus,
    read_tokens,
)
from .kernel_batched import batch_core_blas, batch_core_naive, fill_shared_negatives
from .kernel_scalar import scalar_core
from .model import (
    SIGMOID_TABLE_F32,
    SIGMOID_TABLE_F64,
    EmbeddingModel,
    init_model,
)
from .rng import new_state, next_below

_INF_BUDGET = np.int64(2**62)
ALPHA_REFRESH_WORDS = 10_000


class ConfigError(ValueError):
    """Invalid training configuration."""


@dataclass
class TrainingConfig:
    dim: int = 300
    window: int = 5
    negatives: int = 5
    subsample: float = 1e-4
    min_count: int = 5
    alpha0: float = 0.025
    alpha_floor_fraction: float = 1e-4
    epochs: int = 5
    threads: int = 1
    batch_cap: int = 16
    kernel: str = "batched"
    seed: int = 1
    dynamic_window: bool = True
    table_length: int | None = None
    float64: bool = False
    matmul: str | None = None  # None = blas for float32, naive for float64
    loss_sample_every: int = 100  # compute the loss proxy on 1 in N batches

    def validate(self) -> None:
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.negatives < 1:
            raise ConfigError("negatives must be >= 1")
        if self.subsample < 0:
            raise ConfigError("subsample must be >= 0")
        if self.min_count < 1:
            raise ConfigError("min_count must be >= 1")
        if self.alpha0 <= 0:
            raise ConfigError("alpha0 must be positive")
        if not 0 < self.alpha_floor_fraction < 1:
            raise ConfigError("alpha_floor_fraction must be in (0, 1)")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.batch_cap < 1:
            raise ConfigError("batch_cap must be >= 1")
        if self.kernel not in ("scalar", "batched"):
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        if self.matmul not in (None, "blas", "naive"):
            raise ConfigError(f"unknown matmul backend {self.matmul!r}")

    @property
    def dtype(self):
        return np.float64 if self.float64 else np.float32

    @property
    def use_blas(self) -> bool:
        if self.matmul is None:
            return not self.float64
        return self.matmul == "blas"


@dataclass
class TrainingStats:
    words_processed: int = 0
    words_read: int = 0
    wall_seconds: float = 0.0
    throughput_words_per_sec: float = 0.0
    final_alpha: float = 0.0
    loss_by_epoch: list[float] = field(default_factory=list)


def update_alpha(
    words_done: int,
    total_words_times_epochs: float,
    alpha0: float,
    floor_fraction: float,
) -> float:
    """Linear decay from alpha0 toward the floor as words_done approaches total."""
    frac = 1.0 - words_done / (total_words_times_epochs + 1.0)
    if frac < floor_fraction:
        frac = floor_fraction
    return alpha0 * frac


@njit(cache=True, nogil=True)
def _drive_scalar(
    ids, offsets, sent_hi, start_sent,
    m_in, m_out, slots, keep_probs, use_subsample,
    window, dynamic, k_neg,
    alpha0, floor_frac, total_x_epochs,
    alpha_state, shared, state,
    sig_table, use_exact, alpha_buf,
    kept_buf, in_buf, temp,
    loss_every, kernel_counter, word_budget,
):
    alpha = alpha_state[0]
    read_local = alpha_state[1]
    trained_local = alpha_state[2]
    budget_used = np.int64(0)
    trained = np.int64(0)
    loss = 0.0
    cells = np.int64(0)
    no_fixed = np.empty((0, 0), dtype=np.int32)
    s = start_sent
    while s < sent_hi and budget_used < word_budget:
        lo = offsets[s]
        hi = offsets[s + 1]
        n = hi - lo
        read_local += n
        budget_used += n
        if read_local >= ALPHA_REFRESH_WORDS:
            shared[0] += np.int64(read_local)
            shared[1] += np.int64(trained_local)
            read_local = 0.0
            trained_local = 0.0
            frac = 1.0 - shared[0] / (total_x_epochs + 1.0)
            if frac < floor_frac:
                frac = floor_frac
            alpha = alpha0 * frac
            alpha_buf[0] = alpha
        if use_subsample:
            kept = _subsample(ids, lo, hi, keep_probs, state, kept_buf)
        else:
            kept = 0
            for idx in range(lo, hi):
                kept_buf[kept] = ids[idx]
                kept += 1
        for pos in range(kept):
            if dynamic:
                b = 1 + next_below(state, window)
            else:
                b = window
            wlo = pos - b
            if wlo < 0:
                wlo = 0
            whi = pos + b + 1
            if whi > kept:
                whi = kept
            m = whi - wlo - 1
            if m <= 0:
                continue
            c = 0
            for q in range(wlo, pos):
                in_buf[c] = kept_buf[q]
                c += 1
            for q in range(pos + 1, whi):
                in_buf[c] = kept_buf[q]
                c += 1
            kernel_counter[0] += 1
            want_loss = loss_every > 0 and kernel_counter[0] % loss_every == 0
            l, nc = scalar_core(
                m_in, m_out, kept_buf[pos], in_buf[:m], slots, k_neg,
                alpha_buf, state, temp, sig_table, use_exact, no_fixed,
                want_loss,
            )
            loss += l
            cells += nc
        trained += kept
        trained_local += kept
        s += 1
    alpha_state[0] = alpha
    alpha_state[1] = read_local
    alpha_state[2] = trained_local
    return s, budget_used, trained, loss, cells


@njit(cache=True, nogil=True)
def _drive_batched(
    ids, offsets, sent_hi, start_sent,
    m_in, m_out, slots, keep_probs, use_subsample,
    window, dynamic, k_neg, batch_cap, use_blas,
    alpha0, floor_frac, total_x_epochs,
    alpha_state, shared, state,
    sig_table, use_exact, alpha_buf,
    kept_buf, in_buf, out_buf,
    a_buf, c_buf, ct_buf, e_buf, s_buf, eraw_buf, escaled_buf, dout_buf, din_buf,
    loss_every, kernel_counter, word_budget,
):
    alpha = alpha_state[0]
    read_local = alpha_state[1]
    trained_local = alpha_state[2]
    budget_used = np.int64(0)
    trained = np.int64(0)
    loss = 0.0
    cells = np.int64(0)
    s = start_sent
    while s < sent_hi and budget_used < word_budget:
        lo = offsets[s]
        hi = offsets[s + 1]
        n = hi - lo
        read_local += n
        budget_used += n
        if read_local >= ALPHA_REFRESH_WORDS:
            shared[0] += np.int64(read_local)
            shared[1] += np.int64(trained_local)
            read_local = 0.0
            trained_local = 0.0
            frac = 1.0 - shared[0] / (total_x_epochs + 1.0)
            if frac < floor_frac:
                frac = floor_frac
            alpha = alpha0 * frac
            alpha_buf[0] = alpha
        if use_subsample:
            kept = _subsample(ids, lo, hi, keep_probs, state, kept_buf)
        else:
            kept = 0
            for idx in range(lo, hi):
                kept_buf[kept] = ids[idx]
                kept += 1
        for pos in range(kept):
            if dynamic:
                b = 1 + next_below(state, window)
            else:
                b = window
            wlo = pos - b
            if wlo < 0:
                wlo = 0
            whi = pos + b + 1
            if whi > kept:
                whi = kept
            m = whi - wlo - 1
            if m <= 0:
                continue
            c = 0
            for q in range(wlo, pos):
                in_buf[c] = kept_buf[q]
                c += 1
            for q in range(pos + 1, whi):
                in_buf[c] = kept_buf[q]
                c += 1
            target = kept_buf[pos]
            start = 0
            while start < m:
                stop = start + batch_cap
                if stop > m:
                    stop = m
                fill_shared_negatives(out_buf, target, k_neg, slots, state)
                kernel_counter[0] += 1
                want_loss = loss_every > 0 and kernel_counter[0] % loss_every == 0
                if use_blas:
                    l, nc = batch_core_blas(
                        m_in, m_out, in_buf[start:stop], out_buf, alpha_buf,
                        sig_table, use_exact, a_buf, c_buf, ct_buf, e_buf,
                        want_loss,
                    )
                else:
                    l, nc = batch_core_naive(
                        m_in, m_out, in_buf[start:stop], out_buf, alpha_buf,
                        sig_table, use_exact, a_buf, c_buf, s_buf, eraw_buf,
                        escaled_buf, dout_buf, din_buf, want_loss,
                    )
                loss += l
                cells += nc
                start = stop
        trained += kept
        trained_local += kept
        s += 1
    alpha_state[0] = alpha
    alpha_state[1] = read_local
    alpha_state[2] = trained_local
    return s, budget_used, trained, loss, cells


def split_by_tokens(
    offsets: np.ndarray, sent_lo: int, sent_hi: int, parts: int
) -> list[tuple[int, int]]:
    """Contiguous sentence sub-ranges with near-equal token counts.

    Ranges may be empty when parts exceeds the number of sentences.
    """
    base = offsets[sent_lo]
    tokens = offsets[sent_lo + 1 : sent_hi + 1] - base
    total = float(tokens[-1]) if len(tokens) else 0.0
    bounds = [sent_lo]
    for k in range(1, parts):
        cut = sent_lo + int(np.searchsorted(tokens, total * k / parts)) + 1
        bounds.append(min(max(cut, bounds[-1]), sent_hi))
    bounds.append(sent_hi)
    return [(bounds[i], bounds[i + 1]) for i in range(parts)]


class ThreadRun:
    """Resumable per-thread training state over one sentence range."""

    def __init__(
        self,
        tid: int,
        sent_range: tuple[int, int],
        model: EmbeddingModel,
        encoded: EncodedCorpus,
        table: NegativeTable,
        keep_probs: np.ndarray | None,
        config: TrainingConfig,
        alpha0_eff: float,
        total_x_epochs: float,
        shared: np.ndarray,
        stream_id: int | None = None,
    ) -> None:
        self.tid = tid
        self.lo, self.hi = sent_range
        self.model = model
        self.encoded = encoded
        self.table = table
        self.config = config
        self.alpha0_eff = alpha0_eff
        self.total_x_epochs = total_x_epochs
        self.shared = shared
        self.epoch = 0
        self.next_sent = self.lo
        self.words_read = 0
        self.words_trained = 0
        self.loss_by_epoch = np.zeros(config.epochs)
        self.cells_by_epoch = np.zeros(config.epochs, dtype=np.int64)
        self.state = new_state(config.seed, stream_id if stream_id is not None else tid)
        self.alpha_state = np.array([alpha0_eff, 0.0, 0.0])
        self.kernel_counter = np.zeros(1, dtype=np.int64)
        dtype = config.dtype
        dim = config.dim
        k1 = config.negatives + 1
        self.use_exact = config.float64
        self.sig_table = SIGMOID_TABLE_F64 if config.float64 else SIGMOID_TABLE_F32
        self.alpha_buf = np.array([alpha0_eff], dtype=dtype)
        self.keep_probs = (
            keep_probs if keep_probs is not None else np.empty(0, dtype=np.float64)
        )
        self.use_subsample = keep_probs is not None
        self.kept_buf = np.empty(1024, dtype=np.int32)
        self.in_buf = np.empty(2 * config.window + 1, dtype=np.int32)
        self.temp = np.zeros(dim, dtype=dtype)
        self.out_buf = np.empty(k1, dtype=np.int32)
        cap = config.batch_cap
        self.a_buf = np.empty((cap, dim), dtype=dtype)
        self.c_buf = np.empty((k1, dim), dtype=dtype)
        self.ct_buf = np.empty((dim, k1), dtype=dtype)
        self.e_buf = np.empty((cap, k1), dtype=dtype)
        self.s_buf = np.empty((cap, k1), dtype=dtype)
        self.eraw_buf = np.empty((cap, k1), dtype=dtype)
        self.escaled_buf = np.empty((cap, k1), dtype=dtype)
        self.dout_buf = np.empty((k1, dim), dtype=dtype)
        self.din_buf = np.empty((cap, dim), dtype=dtype)

    @property
    def done(self) -> bool:
        return self.epoch >= self.config.epochs

    def advance(self, word_budget: int) -> int:
        """Train until the budget is spent or the current epoch pass ends.

        Returns the number of words read off the corpus (the budget unit).
        """
        if self.done:
            return 0
        cfg = self.config
        if cfg.kernel == "scalar":
            s, used, trained, loss, cells = _drive_scalar(
                self.encoded.ids, self.encoded.offsets, self.hi, self.next_sent,
                self.model.input_vectors, self.model.output_vectors,
                self.table.slots, self.keep_probs, self.use_subsample,
                cfg.window, cfg.dynamic_window, cfg.negatives,
                self.alpha0_eff, cfg.alpha_floor_fraction, self.total_x_epochs,
                self.alpha_state, self.shared, self.state,
                self.sig_table, self.use_exact, self.alpha_buf,
                self.kept_buf, self.in_buf, self.temp,
                cfg.loss_sample_every, self.kernel_counter, np.int64(word_budget),
            )
        else:
            s, used, trained, loss, cells = _drive_batched(
                self.encoded.ids, self.encoded.offsets, self.hi, self.next_sent,
                self.model.input_vectors, self.model.output_vectors,
                self.table.slots, self.keep_probs, self.use_subsample,
                cfg.window, cfg.dynamic_window, cfg.negatives, cfg.batch_cap,
                cfg.use_blas,
                self.alpha0_eff, cfg.alpha_floor_fraction, self.total_x_epochs,
                self.alpha_state, self.shared, self.state,
                self.sig_table, self.use_exact, self.alpha_buf,
                self.kept_buf, self.in_buf, self.out_buf,
                self.a_buf, self.c_buf, self.ct_buf, self.e_buf, self.s_buf,
                self.eraw_buf, self.escaled_buf, self.dout_buf, self.din_buf,
                cfg.loss_sample_every, self.kernel_counter, np.int64(word_budget),
            )
        self.words_read += int(used)
        self.words_trained += int(trained)
        self.loss_by_epoch[self.epoch] += loss
        self.cells_by_epoch[self.epoch] += int(cells)
        if s >= self.hi:
            self.epoch += 1
            self.next_sent = self.lo
        else:
            self.next_sent = int(s)
        if self.done:
            self.flush_counters()
        return int(used)

    def run_to_completion(self) -> None:
        while not self.done:
            self.advance(_INF_BUDGET)

    def flush_counters(self) -> None:
        """Push carried word counts into the shared counter."""
        self.shared[0] += np.int64(self.alpha_state[1])
        self.shared[1] += np.int64(self.alpha_state[2])
        self.alpha_state[1] = 0.0
        self.alpha_state[2] = 0.0


def _progress_loop(
    shared: np.ndarray, total_x_epochs: float, alpha0: float, floor: float,
    stop: threading.Event,
) -> None:
    started = time.perf_counter()
    last = -1
    while not stop.wait(1.0):
        read = int(shared[0])
        if read == last:
            continue
        last = read
        elapsed = time.perf_counter() - started
        alpha = update_alpha(read, total_x_epochs, alpha0, floor)
        pct = 100.0 * read / max(total_x_epochs, 1.0)
        rate = shared[1] / max(elapsed, 1e-9)
        sys.stderr.write(
            f"\ralpha: {alpha:.6f}  progress: {pct:6.2f}%  words/sec: {rate:,.0f}   "
        )
        sys.stderr.flush()


def train_encoded(
    vocab: Vocabulary,
    encoded: EncodedCorpus,
    config: TrainingConfig,
    model: EmbeddingModel | None = None,
    table: NegativeTable | None = None,
    progress: bool = False,
) -> tuple[EmbeddingModel, TrainingStats]:
    """Train over an already-encoded corpus; see train() for the file entry point."""
    config.validate()
    if model is None:
        model = init_model(vocab.size, config.dim, config.seed, dtype=config.dtype)
    if table is None:
        table = build_negative_table(vocab, length=config.table_length)
    keep_probs = vocab.keep_probs(config.subsample) if config.subsample > 0 else None
    total_x_epochs = float(encoded.n_tokens) * config.epochs
    shared = np.zeros(2, dtype=np.int64)
    ranges = split_by_tokens(encoded.offsets, 0, encoded.n_sentences, config.threads)
    runs = [
        ThreadRun(
            tid, rng, model, encoded, table, keep_probs, config,
            config.alpha0, total_x_epochs, shared,
        )
        for tid, rng in enumerate(ranges)
    ]
    stop = threading.Event()
    monitor = None
    if progress:
        monitor = threading.Thread(
            target=_progress_loop,
            args=(shared, total_x_epochs, config.alpha0,
                  config.alpha_floor_fraction, stop),
            daemon=True,
        )
        monitor.start()
    started = time.perf_counter()
    if config.threads == 1:
        runs[0].run_to_completion()
    else:
        threads = [
            threading.Thread(target=run.run_to_completion) for run in runs
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    wall = time.perf_counter() - started
    if monitor is not None:
        stop.set()
        monitor.join()
        sys.stderr.write("\n")
    stats = TrainingStats()
    stats.words_processed = sum(r.words_trained for r in runs)
    stats.words_read = sum(r.words_read for r in runs)
    stats.wall_seconds = wall
    stats.throughput_words_per_sec = stats.words_processed / max(wall, 1e-9)
    stats.final_alpha = update_alpha(
        int(shared[0]), total_x_epochs, config.alpha0, config.alpha_floor_fraction
    )
    loss_sums = np.sum([r.loss_by_epoch for r in runs], axis=0)
    cell_sums = np.sum([r.cells_by_epoch for r in runs], axis=0)
    stats.loss_by_epoch = [
        float(ls / nc) if nc else 0.0 for ls, nc in zip(loss_sums, cell_sums)
    ]
    return model, stats


def train(
    corpus_path: str, config: TrainingConfig, progress: bool = False
) -> tuple[EmbeddingModel, Vocabulary, TrainingStats]:
    """Build the vocabulary, encode the corpus, and train a fresh model."""
    config.validate()
    vocab = build_vocab(read_tokens(corpus_path), config.min_count)
    encoded = encode_corpus(corpus_path, vocab)
    model, stats = train_encoded(vocab, encoded, config, progress=progress)
    return model, vocab, stats
