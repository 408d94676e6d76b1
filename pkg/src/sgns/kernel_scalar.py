"""Per-pair SGD kernel: the dot-product baseline.

For each input word in a window the kernel scores the target (label 1) and K
sampled negatives (label 0) against the input vector, then nudges both sides
by alpha * (label - sigmoid(score)).  The target-side rows update immediately
inside the k-loop; the input row collects its correction in a scratch vector
and updates once at the end.  Arithmetic stays in the model dtype; float64
models use the exact sigmoid, float32 models the lookup table.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .corpus import NegativeTable, WindowContext, _draw_slot
from .model import (
    SIGMOID_TABLE_F32,
    SIGMOID_TABLE_F64,
    EmbeddingModel,
    sigmoid_from_table,
)

_NO_FIXED = np.empty((0, 0), dtype=np.int32)
_NO_SLOTS = np.empty(1, dtype=np.int32)


@njit(cache=True, nogil=True, inline="always")
def _sigmoid_exact(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


@njit(cache=True, nogil=True, inline="always")
def _softplus(x):
    # log(1 + exp(x)) without overflow
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True, nogil=True, inline="always")
def _pair_loss(score, positive):
    # -log sigmoid(score) for positives, -log sigmoid(-score) for negatives
    if positive:
        return _softplus(-score)
    return _softplus(score)


@njit(cache=True, nogil=True)
def scalar_core(
    m_in,
    m_out,
    target,
    inputs,
    neg_slots,
    k_neg,
    alpha_buf,
    state,
    temp,
    sig_table,
    use_exact,
    fixed_negs,
    compute_loss,
):
    """Process one window context in place; returns (loss_sum, loss_cells).

    Negatives are drawn per input word; a draw equal to the target is
    rejected and redrawn.  When fixed_negs is non-empty it supplies row
    fixed_negs[i] as the negatives for input i and no draws are consumed.
    """
    dim = m_in.shape[1]
    zero = m_in[0, 0] * 0
    one = zero + 1
    alpha = alpha_buf[0]
    have_fixed = fixed_negs.shape[0] > 0
    loss = 0.0
    cells = 0
    for i in range(inputs.shape[0]):
        w_in = inputs[i]
        for j in range(dim):
            temp[j] = zero
        for k in range(k_neg + 1):
            if k == 0:
                t_word = target
                label = one
            else:
                if have_fixed:
                    t_word = fixed_negs[i, k - 1]
                else:
                    while True:
                        t_word = _draw_slot(neg_slots, state)
                        if t_word != target:
                            break
                label = zero
            inn = zero
            for j in range(dim):
                inn += m_in[w_in, j] * m_out[t_word, j]
            if use_exact:
                sig = _sigmoid_exact(inn)
            else:
                sig = sigmoid_from_table(inn, sig_table)
            err = label - sig
            g = alpha * err
            if compute_loss:
                loss += _pair_loss(inn, k == 0)
                cells += 1
            for j in range(dim):
                temp[j] += err * m_out[t_word, j]
            for j in range(dim):
                m_out[t_word, j] += g * m_in[w_in, j]
        for j in range(dim):
            m_in[w_in, j] += alpha * temp[j]
    return loss, cells


def process_context_scalar(
    model: EmbeddingModel,
    ctx: WindowContext,
    negatives_source: NegativeTable | None,
    k_neg: int,
    alpha: float,
    rng_state: np.ndarray | None = None,
    fixed_negatives: np.ndarray | None = None,
) -> None:
    """Apply the per-pair updates for one context to the model in place."""
    if k_neg < 1 or alpha < 0:
        raise ValueError("need k_neg >= 1 and alpha >= 0")
    if fixed_negatives is None:
        if negatives_source is None or rng_state is None:
            raise ValueError("need a negative table and rng state, or fixed negatives")
        slots = negatives_source.slots
        fixed = _NO_FIXED
    else:
        fixed = np.ascontiguousarray(fixed_negatives, dtype=np.int32)
        if fixed.shape != (len(ctx.inputs), k_neg):
            raise ValueError("fixed negatives must have shape (n_inputs, k_neg)")
        slots = _NO_SLOTS
        if rng_state is None:
            rng_state = np.zeros(1, dtype=np.uint64)
    dtype = model.dtype
    use_exact = dtype == np.float64
    table = SIGMOID_TABLE_F64 if use_exact else SIGMOID_TABLE_F32
    scalar_core(
        model.input_vectors,
        model.output_vectors,
        int(ctx.target),
        np.ascontiguousarray(ctx.inputs, dtype=np.int32),
        slots,
        k_neg,
        np.array([alpha], dtype=dtype),
        rng_state,
        np.zeros(model.dim, dtype=dtype),
        table,
        use_exact,
        fixed,
        False,
    )
