"""Data-parallel training: sharded corpus, replicated models, row averaging.

Every worker trains the batched kernel on its own contiguous corpus shard and
periodically reconciles with the other replicas by averaging a selected set
of model rows (elementwise, summed in rank order, divided by the node
count).  Frequent words change fastest, so the selection always includes the
hottest F rows and walks the rest round-robin in chunks of R, covering the
whole model every ceil((V-F)/R) periods.  A full-model average runs once at
the end so replicas leave training identical.

Two transports implement the collective: an in-process group (threads in one
process; exact and deterministic, including for float64 models) and a TCP
transport with a rank-0 reducer whose wire format is length-prefixed frames
carrying 4-byte little-endian floats.
"""

from __future__ import annotations

import hashlib
import math
import socket
import struct
import threading
import time
from dataclasses import dataclass, replace

import numpy as np

from .corpus import EncodedCorpus, Vocabulary, partition_sentences
from .model import EmbeddingModel, init_model
from .trainer import (
    ThreadRun,
    TrainingConfig,
    TrainingStats,
    build_negative_table,
    build_vocab,
    encode_corpus,
    read_tokens,
    split_by_tokens,
    update_alpha,
)

PROTOCOL_VERSION = 1


class TransportError(RuntimeError):
    """Collective communication failed."""


class HandshakeError(TransportError):
    """Peers disagree on protocol, geometry, or configuration."""


@dataclass
class SyncPolicy:
    """Which rows are averaged per period and how often periods occur.

    hot_rows=None resolves to min(V, 10_000); rotation_chunk=None sizes the
    round-robin chunk so the cold rows are covered every 20 periods.
    """

    period_words: int = 1_000_000
    hot_rows: int | None = None
    rotation_chunk: int | None = None

    def resolve(self, vocab_size: int) -> "SyncPolicy":
        hot = self.hot_rows if self.hot_rows is not None else min(vocab_size, 10_000)
        cold = vocab_size - hot
        if self.rotation_chunk is not None:
            rot = self.rotation_chunk
        else:
            rot = math.ceil(cold / 20) if cold else 0
        policy = replace(self, hot_rows=hot, rotation_chunk=rot)
        policy.validate(vocab_size)
        return policy

    def validate(self, vocab_size: int) -> None:
        if self.period_words < 1:
            raise ValueError("period_words must be >= 1")
        if not 0 <= self.hot_rows <= vocab_size:
            raise ValueError("hot_rows must be in [0, vocab_size]")
        if not 0 <= self.rotation_chunk <= vocab_size - self.hot_rows:
            raise ValueError("rotation_chunk must be in [0, vocab_size - hot_rows]")


def select_sync_rows(
    vocab_size: int, policy: SyncPolicy, period_index: int
) -> np.ndarray:
    """Row ids to average this period: hot rows plus one round-robin chunk."""
    policy = policy.resolve(vocab_size)
    hot = policy.hot_rows
    rot = policy.rotation_chunk
    cold = vocab_size - hot
    if rot == 0 or cold == 0:
        return np.arange(hot, dtype=np.int64)
    n_chunks = math.ceil(cold / rot)
    start = hot + (period_index % n_chunks) * rot
    stop = min(start + rot, vocab_size)
    return np.concatenate(
        [np.arange(hot, dtype=np.int64), np.arange(start, stop, dtype=np.int64)]
    )


def scaled_alpha0(alpha0: float, nodes: int) -> float:
    """Raise the starting rate with worker count; decay runs over each shard."""
    return alpha0 * math.sqrt(nodes)


def partition_corpus(encoded: EncodedCorpus, nodes: int) -> list[tuple[int, int]]:
    """Contiguous sentence-range shards of near-equal byte size."""
    return partition_sentences(encoded, nodes)


class Transport:
    """Collective operations over N model replicas.

    allreduce_average replaces the named rows of the local matrix with the
    elementwise mean across all replicas (accumulated in float64, rank 0
    first), leaving every replica bit-identical on those rows and all other
    rows untouched.  Calls are collective: every rank must issue the same
    sequence with the same row ids.
    """

    rank: int
    nodes: int

    def barrier(self) -> None:
        raise NotImplementedError

    def allreduce_average(
        self, matrix: np.ndarray, row_ids: np.ndarray, which: str
    ) -> None:
        raise NotImplementedError

    def close(self) -> None:  # pragma: no cover - trivial default
        pass


class InProcessGroup:
    """Shared state for N in-process replicas (one thread per worker)."""

    def __init__(self, nodes: int) -> None:
        if nodes < 1:
            raise ValueError("need at least one node")
        self.nodes = nodes
        self._barrier = threading.Barrier(nodes)
        self._slots: list[tuple[np.ndarray, np.ndarray, str] | None] = [None] * nodes
        self._failed = False

    def endpoints(self) -> list["InProcessTransport"]:
        return [InProcessTransport(self, rank) for rank in range(self.nodes)]

    def abort(self) -> None:
        self._failed = True
        self._barrier.abort()


class InProcessTransport(Transport):
    def __init__(self, group: InProcessGroup, rank: int) -> None:
        self.group = group
        self.rank = rank
        self.nodes = group.nodes

    def barrier(self) -> None:
        try:
            self.group._barrier.wait()
        except threading.BrokenBarrierError as exc:
            raise TransportError("peer worker aborted") from exc

    def allreduce_average(
        self, matrix: np.ndarray, row_ids: np.ndarray, which: str
    ) -> None:
        row_ids = np.asarray(row_ids, dtype=np.int64)
        self.group._slots[self.rank] = (matrix, row_ids, which)
        self.barrier()
        if self.rank == 0:
            slots = self.group._slots
            for r in range(1, self.nodes):
                other = slots[r]
                if other is None or other[2] != which or not np.array_equal(
                    other[1], row_ids
                ):
                    self.group.abort()
                    raise TransportError(
                        f"rank {r} joined the collective with different rows"
                    )
            if len(row_ids):
                acc = slots[0][0][row_ids].astype(np.float64)
                for r in range(1, self.nodes):
                    acc += slots[r][0][row_ids]
                mean = (acc / self.nodes).astype(matrix.dtype)
                for r in range(self.nodes):
                    slots[r][0][row_ids] = mean
        self.barrier()


def config_digest(config: TrainingConfig, policy: SyncPolicy | None) -> bytes:
    """Stable digest of everything ranks must agree on."""
    fields = [
        config.dim, config.window, config.negatives, config.subsample,
        config.min_count, config.alpha0, config.alpha_floor_fraction,
        config.epochs, config.batch_cap, config.kernel, config.seed,
        config.dynamic_window, config.float64,
    ]
    if policy is not None:
        fields += [policy.period_words, policy.hot_rows, policy.rotation_chunk]
    return hashlib.sha256(repr(fields).encode("utf-8")).digest()


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        data = sock.recv(min(remaining, 1 << 20))
        if not data:
            raise TransportError("connection closed mid-frame")
        chunks.append(data)
        remaining -= len(data)
    return b"".join(chunks)


def _send_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(struct.pack("<I", len(payload)) + payload)


def _recv_frame(sock: socket.socket) -> bytes:
    (length,) = struct.unpack("<I", _recv_exact(sock, 4))
    return _recv_exact(sock, length)


_HANDSHAKE = struct.Struct("<IIIII32s")
_ROW_HEADER = struct.Struct("<BI")
_SELECTORS = {"in": 0, "out": 1}


def _pack_rows(which: str, row_ids: np.ndarray, rows: np.ndarray) -> bytes:
    header = _ROW_HEADER.pack(_SELECTORS[which], len(row_ids))
    ids = np.ascontiguousarray(row_ids, dtype="<u4").tobytes()
    payload = np.ascontiguousarray(rows, dtype="<f4").tobytes()
    return header + ids + payload


def _unpack_rows(frame: bytes, dim: int) -> tuple[int, np.ndarray, np.ndarray]:
    selector, count = _ROW_HEADER.unpack_from(frame, 0)
    off = _ROW_HEADER.size
    ids = np.frombuffer(frame, dtype="<u4", count=count, offset=off).astype(np.int64)
    off += 4 * count
    rows = np.frombuffer(frame, dtype="<f4", count=count * dim, offset=off)
    return selector, ids, rows.reshape(count, dim)


class SocketTransport(Transport):
    """TCP collective with rank 0 as the reducer.

    All ranks exchange a handshake (protocol version, rank, node count, V, D,
    config digest) at connect time and refuse to proceed on any mismatch.
    Row payloads travel as float32, so float64 models are not supported here.
    """

    def __init__(
        self,
        rank: int,
        nodes: int,
        host: str,
        port: int,
        vocab_size: int,
        dim: int,
        digest: bytes,
        timeout: float = 30.0,
    ) -> None:
        if not 0 <= rank < nodes:
            raise ValueError("rank must be in [0, nodes)")
        self.rank = rank
        self.nodes = nodes
        self.dim = dim
        self._digest = digest
        self._mine = _HANDSHAKE.pack(
            PROTOCOL_VERSION, rank, nodes, vocab_size, dim, digest
        )
        self._peers: dict[int, socket.socket] = {}
        self._server: socket.socket | None = None
        self._link: socket.socket | None = None
        if nodes == 1:
            return
        if rank == 0:
            self._serve(host, port, timeout)
        else:
            self._connect(host, port, timeout)

    def _check_peer(self, raw: bytes, expect_rank: int | None = None) -> int:
        try:
            version, rank, nodes, vocab, dim, digest = _HANDSHAKE.unpack(raw)
        except struct.error as exc:
            raise HandshakeError(f"malformed handshake frame: {exc}") from None
        _, _, my_nodes, my_vocab, my_dim, my_digest = _HANDSHAKE.unpack(self._mine)
        if version != PROTOCOL_VERSION:
            raise HandshakeError(f"protocol version {version} != {PROTOCOL_VERSION}")
        if (nodes, vocab, dim) != (my_nodes, my_vocab, my_dim):
            raise HandshakeError(
                f"geometry mismatch: peer has (nodes={nodes}, V={vocab}, D={dim}), "
                f"local is (nodes={my_nodes}, V={my_vocab}, D={my_dim})"
            )
        if digest != my_digest:
            raise HandshakeError("configuration hash mismatch between ranks")
        if expect_rank is not None and rank != expect_rank:
            raise HandshakeError(f"expected rank {expect_rank}, peer claims {rank}")
        return rank

    def _serve(self, host: str, port: int, timeout: float) -> None:
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen(self.nodes)
        server.settimeout(timeout)
        self._server = server
        try:
            while len(self._peers) < self.nodes - 1:
                conn, _ = server.accept()
                conn.settimeout(timeout)
                peer_rank = self._check_peer(_recv_frame(conn))
                if peer_rank in self._peers or peer_rank == 0:
                    raise HandshakeError(f"duplicate rank {peer_rank}")
                _send_frame(conn, self._mine)
                self._peers[peer_rank] = conn
        except (OSError, HandshakeError):
            self.close()
            raise

    def _connect(self, host: str, port: int, timeout: float) -> None:
        deadline = time.monotonic() + timeout
        last_err: Exception | None = None
        while time.monotonic() < deadline:
            try:
                link = socket.create_connection((host, port), timeout=timeout)
                break
            except OSError as exc:
                last_err = exc
                time.sleep(0.05)
        else:
            raise TransportError(f"could not reach rank 0 at {host}:{port}: {last_err}")
        link.settimeout(timeout)
        self._link = link
        try:
            _send_frame(link, self._mine)
            self._check_peer(_recv_frame(link), expect_rank=0)
        except (OSError, HandshakeError):
            self.close()
            raise

    def barrier(self) -> None:
        # An empty row collective doubles as the barrier.
        empty = np.empty(0, dtype=np.int64)
        self.allreduce_average(np.empty((0, self.dim), dtype=np.float32), empty, "in")

    def allreduce_average(
        self, matrix: np.ndarray, row_ids: np.ndarray, which: str
    ) -> None:
        if matrix.dtype != np.float32:
            raise TransportError(
                "the socket transport carries float32 rows; use the in-process "
                "transport for float64 models"
            )
        row_ids = np.asarray(row_ids, dtype=np.int64)
        if self.nodes == 1:
            return
        try:
            if self.rank == 0:
                acc = matrix[row_ids].astype(np.float64)
                for peer_rank in range(1, self.nodes):
                    sel, ids, rows = _unpack_rows(
                        _recv_frame(self._peers[peer_rank]), matrix.shape[1]
                    )
                    if sel != _SELECTORS[which] or not np.array_equal(ids, row_ids):
                        raise TransportError(
                            f"rank {peer_rank} joined the collective with different rows"
                        )
                    acc += rows
                mean = (acc / self.nodes).astype(np.float32)
                if len(row_ids):
                    matrix[row_ids] = mean
                reply = _pack_rows(which, row_ids, mean)
                for peer_rank in range(1, self.nodes):
                    _send_frame(self._peers[peer_rank], reply)
            else:
                _send_frame(self._link, _pack_rows(which, row_ids, matrix[row_ids]))
                sel, ids, rows = _unpack_rows(_recv_frame(self._link), matrix.shape[1])
                if sel != _SELECTORS[which] or not np.array_equal(ids, row_ids):
                    raise TransportError("reducer answered with different rows")
                if len(row_ids):
                    matrix[row_ids] = rows
        except OSError as exc:
            raise TransportError(f"socket failure during allreduce: {exc}") from exc

    def close(self) -> None:
        for conn in self._peers.values():
            conn.close()
        self._peers.clear()
        if self._link is not None:
            self._link.close()
            self._link = None
        if self._server is not None:
            self._server.close()
            self._server = None


class DistributedRunError(RuntimeError):
    """Training aborted mid-run; carries whatever stats were gathered."""

    def __init__(self, message: str, partial_stats: TrainingStats) -> None:
        super().__init__(message)
        self.partial_stats = partial_stats


def _consume_budget(run: ThreadRun, budget: int) -> None:
    remaining = budget
    while remaining > 0 and not run.done:
        used = run.advance(remaining)
        remaining -= used


def distributed_train(
    corpus_path: str | None,
    config: TrainingConfig,
    policy: SyncPolicy,
    transport: Transport,
    prebuilt: tuple[Vocabulary, EncodedCorpus] | None = None,
) -> tuple[EmbeddingModel, TrainingStats]:
    """Train this rank's replica; returns the synchronized model and stats.

    Every rank must call with the same corpus, config, and policy.  The model
    seen at return is identical across ranks (a full-model average runs last).
    """
    config.validate()
    if prebuilt is not None:
        vocab, encoded = prebuilt
    else:
        if corpus_path is None:
            raise ValueError("need a corpus path or a prebuilt (vocab, corpus) pair")
        vocab = build_vocab(read_tokens(corpus_path), config.min_count)
        encoded = encode_corpus(corpus_path, vocab)
    nodes = transport.nodes
    policy = policy.resolve(vocab.size)
    shards = partition_corpus(encoded, nodes)
    shard_tokens = [
        int(encoded.offsets[hi] - encoded.offsets[lo]) for lo, hi in shards
    ]
    rounds = max(
        math.ceil(t * config.epochs / policy.period_words) for t in shard_tokens
    )
    model = init_model(vocab.size, config.dim, config.seed, dtype=config.dtype)
    table = build_negative_table(vocab, length=config.table_length)
    keep_probs = vocab.keep_probs(config.subsample) if config.subsample > 0 else None
    alpha0_eff = scaled_alpha0(config.alpha0, nodes)
    total_x_epochs = float(encoded.n_tokens) * config.epochs / nodes
    my_lo, my_hi = shards[transport.rank]
    ranges = split_by_tokens(encoded.offsets, my_lo, my_hi, config.threads)
    shared = np.zeros(2, dtype=np.int64)
    runs = [
        ThreadRun(
            tid, rng, model, encoded, table, keep_probs, config,
            alpha0_eff, total_x_epochs, shared,
            stream_id=transport.rank * config.threads + tid,
        )
        for tid, rng in enumerate(ranges)
    ]
    thread_budget = math.ceil(policy.period_words / config.threads)
    all_rows = np.arange(vocab.size, dtype=np.int64)
    started = time.perf_counter()

    def sync(row_ids: np.ndarray) -> None:
        transport.allreduce_average(model.input_vectors, row_ids, "in")
        transport.allreduce_average(model.output_vectors, row_ids, "out")

    def partial_stats() -> TrainingStats:
        stats = TrainingStats()
        stats.words_processed = sum(r.words_trained for r in runs)
        stats.words_read = sum(r.words_read for r in runs)
        stats.wall_seconds = time.perf_counter() - started
        stats.throughput_words_per_sec = stats.words_processed / max(
            stats.wall_seconds, 1e-9
        )
        stats.final_alpha = update_alpha(
            int(shared[0]), total_x_epochs, alpha0_eff, config.alpha_floor_fraction
        )
        loss_sums = np.sum([r.loss_by_epoch for r in runs], axis=0)
        cell_sums = np.sum([r.cells_by_epoch for r in runs], axis=0)
        stats.loss_by_epoch = [
            float(ls / nc) if nc else 0.0 for ls, nc in zip(loss_sums, cell_sums)
        ]
        return stats

    try:
        for period in range(rounds):
            if config.threads == 1:
                _consume_budget(runs[0], policy.period_words)
            else:
                workers = [
                    threading.Thread(target=_consume_budget, args=(run, thread_budget))
                    for run in runs
                ]
                for w in workers:
                    w.start()
                for w in workers:
                    w.join()
            sync(select_sync_rows(vocab.size, policy, period))
        for run in runs:  # drain any words the round estimate missed
            if not run.done:
                run.run_to_completion()
        sync(all_rows)
    except TransportError as exc:
        raise DistributedRunError(str(exc), partial_stats()) from exc
    return model, partial_stats()
