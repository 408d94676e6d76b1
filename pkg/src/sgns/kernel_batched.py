"""Minibatched kernel: shared negatives turn the window into matrix products.

A context's input words are chunked into batches of at most batch_cap; each
batch pairs every input with the same K+1 output rows (the target plus one
freshly drawn shared negative set).  Scoring and both update deltas are then
three dense matrix multiplies:

    S  = A @ C^T        scores, B x (K+1)
    dC = E^T @ A        output-side delta, E[i][k] = alpha * (label_k - sigmoid(S[i][k]))
    dA = E @ C          input-side delta

with A and C snapshotted at batch entry, so duplicates accumulate additively
when the deltas are applied row by row.  Two backends exist: "blas" delegates
the products to the linked BLAS, "naive" runs ordered triple loops whose
accumulation order matches the per-pair kernel exactly (with batch_cap 1 and
identical negative draws the two kernels agree bit for bit on float64).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np
from numba import njit

from .corpus import NegativeTable, WindowContext, _draw_slot
from .kernel_scalar import _pair_loss, _sigmoid_exact
from .model import (
    SIGMOID_TABLE_F32,
    SIGMOID_TABLE_F64,
    EmbeddingModel,
    sigmoid_from_table,
)


@dataclass
class Minibatch:
    """B input word ids sharing one target and one negative set.

    output_ids[0] is the target; output_ids[1:] are the shared negatives,
    none of which may equal the target.  input_ids may repeat.
    """

    input_ids: np.ndarray  # int32, length B
    output_ids: np.ndarray  # int32, length K+1

    def __post_init__(self) -> None:
        self.input_ids = np.ascontiguousarray(self.input_ids, dtype=np.int32)
        self.output_ids = np.ascontiguousarray(self.output_ids, dtype=np.int32)
        if len(self.input_ids) < 1 or len(self.output_ids) < 2:
            raise ValueError("minibatch needs >= 1 input and >= 2 outputs")
        if (self.output_ids[1:] == self.output_ids[0]).any():
            raise ValueError("a shared negative equals the target")


@njit(cache=True, nogil=True)
def fill_shared_negatives(out_ids, target, k_neg, neg_slots, state):
    """out_ids[0] = target, then K rejection-sampled negatives != target."""
    out_ids[0] = target
    for k in range(1, k_neg + 1):
        while True:
            w = _draw_slot(neg_slots, state)
            if w != target:
                break
        out_ids[k] = w


def assemble_batches(
    ctx_stream: Iterable[WindowContext],
    batch_cap: int,
    k_neg: int,
    negatives_source: NegativeTable,
    rng_state: np.ndarray,
) -> Iterator[Minibatch]:
    """Chunk each context's inputs and draw one negative set per chunk.

    Draws happen lazily as batches are consumed, so interleaving this stream
    with kernel calls reproduces the fused training loop's draw order.
    """
    if batch_cap < 1:
        raise ValueError("batch_cap must be >= 1")
    slots = negatives_source.slots
    for ctx in ctx_stream:
        inputs = ctx.inputs
        for start in range(0, len(inputs), batch_cap):
            out_ids = np.empty(k_neg + 1, dtype=np.int32)
            fill_shared_negatives(out_ids, ctx.target, k_neg, slots, rng_state)
            yield Minibatch(inputs[start : start + batch_cap], out_ids)


@njit(cache=True, nogil=True)
def batch_core_blas(
    m_in, m_out, in_ids, out_ids, alpha_buf, sig_table, use_exact, a_buf,
    c_buf, ct_buf, e_buf, compute_loss,
):
    """GEMM-backed batch update; returns (loss_sum, loss_cells)."""
    batch = in_ids.shape[0]
    k1 = out_ids.shape[0]
    dim = m_in.shape[1]
    alpha = alpha_buf[0]
    zero = m_in[0, 0] * 0
    one = zero + 1
    for i in range(batch):
        w = in_ids[i]
        for j in range(dim):
            a_buf[i, j] = m_in[w, j]
    for k in range(k1):
        w = out_ids[k]
        for j in range(dim):
            v = m_out[w, j]
            c_buf[k, j] = v
            ct_buf[j, k] = v
    a = a_buf[:batch]
    scores = np.dot(a, ct_buf)
    e = e_buf[:batch]
    et = np.empty((k1, batch), dtype=m_in.dtype)
    loss = 0.0
    cells = 0
    for i in range(batch):
        for k in range(k1):
            label = one if k == 0 else zero
            s = scores[i, k]
            if use_exact:
                sig = _sigmoid_exact(s)
            else:
                sig = sigmoid_from_table(s, sig_table)
            g = alpha * (label - sig)
            e[i, k] = g
            et[k, i] = g
            if compute_loss:
                loss += _pair_loss(s, k == 0)
                cells += 1
    d_out = np.dot(et, a)
    for k in range(k1):
        w = out_ids[k]
        for j in range(dim):
            m_out[w, j] += d_out[k, j]
    d_in = np.dot(e, c_buf)
    for i in range(batch):
        w = in_ids[i]
        for j in range(dim):
            m_in[w, j] += d_in[i, j]
    return loss, cells


@njit(cache=True, nogil=True)
def batch_core_naive(
    m_in, m_out, in_ids, out_ids, alpha_buf, sig_table, use_exact, a_buf,
    c_buf, s_buf, eraw_buf, escaled_buf, dout_buf, din_buf, compute_loss,
):
    """Ordered triple-loop batch update; returns (loss_sum, loss_cells).

    Element sums accumulate in ascending index order and alpha multiplies the
    input-side delta at apply time, mirroring the per-pair kernel's operation
    order so single-input batches reproduce it exactly.
    """
    batch = in_ids.shape[0]
    k1 = out_ids.shape[0]
    dim = m_in.shape[1]
    alpha = alpha_buf[0]
    zero = m_in[0, 0] * 0
    one = zero + 1
    for i in range(batch):
        w = in_ids[i]
        for j in range(dim):
            a_buf[i, j] = m_in[w, j]
    for k in range(k1):
        w = out_ids[k]
        for j in range(dim):
            c_buf[k, j] = m_out[w, j]
    loss = 0.0
    cells = 0
    for i in range(batch):
        for k in range(k1):
            s = zero
            for j in range(dim):
                s += a_buf[i, j] * c_buf[k, j]
            s_buf[i, k] = s
            label = one if k == 0 else zero
            if use_exact:
                sig = _sigmoid_exact(s)
            else:
                sig = sigmoid_from_table(s, sig_table)
            err = label - sig
            eraw_buf[i, k] = err
            escaled_buf[i, k] = alpha * err
            if compute_loss:
                loss += _pair_loss(s, k == 0)
                cells += 1
    for k in range(k1):
        for j in range(dim):
            s = zero
            for i in range(batch):
                s += escaled_buf[i, k] * a_buf[i, j]
            dout_buf[k, j] = s
    for k in range(k1):
        w = out_ids[k]
        for j in range(dim):
            m_out[w, j] += dout_buf[k, j]
    for i in range(batch):
        for j in range(dim):
            s = zero
            for k in range(k1):
                s += eraw_buf[i, k] * c_buf[k, j]
            din_buf[i, j] = s
    for i in range(batch):
        w = in_ids[i]
        for j in range(dim):
            m_in[w, j] += alpha * din_buf[i, j]
    return loss, cells


def process_batch(
    model: EmbeddingModel,
    batch: Minibatch,
    alpha: float,
    matmul: str | None = None,
) -> None:
    """Apply one minibatch update in place.

    matmul selects the backend: "blas" or "naive"; by default float32 models
    use blas and float64 models the ordered naive loops.
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    dtype = model.dtype
    use_exact = dtype == np.float64
    if matmul is None:
        matmul = "naive" if use_exact else "blas"
    if matmul not in ("blas", "naive"):
        raise ValueError(f"unknown matmul backend {matmul!r}")
    table = SIGMOID_TABLE_F64 if use_exact else SIGMOID_TABLE_F32
    b = len(batch.input_ids)
    k1 = len(batch.output_ids)
    dim = model.dim
    alpha_buf = np.array([alpha], dtype=dtype)
    a_buf = np.empty((b, dim), dtype=dtype)
    c_buf = np.empty((k1, dim), dtype=dtype)
    if matmul == "blas":
        batch_core_blas(
            model.input_vectors, model.output_vectors,
            batch.input_ids, batch.output_ids, alpha_buf, table, use_exact,
            a_buf, c_buf,
            np.empty((dim, k1), dtype=dtype),
            np.empty((b, k1), dtype=dtype),
            False,
        )
    else:
        batch_core_naive(
            model.input_vectors, model.output_vectors,
            batch.input_ids, batch.output_ids, alpha_buf, table, use_exact,
            a_buf, c_buf,
            np.empty((b, k1), dtype=dtype),
            np.empty((b, k1), dtype=dtype),
            np.empty((b, k1), dtype=dtype),
            np.empty((k1, dim), dtype=dtype),
            np.empty((b, dim), dtype=dtype),
            False,
        )
