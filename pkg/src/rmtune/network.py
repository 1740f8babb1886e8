"""Batched numpy kernels for the decoder: forward passes with caches and
hand-derived backward passes.

Everything here works on integer token-id arrays prepared once per corpus
(`encode_turns`) and sliced per mini-batch (`gather_batch`), so the training
loop is a handful of matrix multiplies per batch. The single-turn operations
in `encoder` are thin wrappers over these kernels with batch size 1, which
keeps inference and training numerically identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid

from .corpus import PAD_INDEX, Vocabulary
from .errors import ShapeError

_NEG_INF = -1e30


# ---------------------------------------------------------------------------
# Turn preparation and batching
# ---------------------------------------------------------------------------

@dataclass
class EncodedTurns:
    """Token-id view of a list of turns, padded to common shapes.

    hyp_* arrays hold all hypotheses of all turns stacked; `hyp_start[t]` /
    `hyp_start[t+1]` delimit turn t's rows. Act arrays are front-padded so
    the most recent act sits at the last window slot; `act_present` marks
    real acts (carried-through LSTM steps elsewhere).
    """

    hyp_tokens: np.ndarray   # (H, L) int32
    hyp_len: np.ndarray      # (H,) int32
    hyp_weight: np.ndarray   # (H,) float64, normalized within each turn
    hyp_start: np.ndarray    # (T+1,) int32
    act_tokens: np.ndarray   # (T, W, A) int32
    act_len: np.ndarray      # (T, W) int32
    act_present: np.ndarray  # (T, W) float64

    @property
    def n_turns(self) -> int:
        return len(self.hyp_start) - 1


def encode_turns(turns, vocab: Vocabulary, window: int, max_width: int,
                 nbest_mode: str = "separate",
                 weighting: str = "confidence") -> EncodedTurns:
    if nbest_mode not in ("separate", "concat"):
        raise ShapeError(f"unknown nbest_mode {nbest_mode!r}")
    if weighting not in ("confidence", "uniform"):
        raise ShapeError(f"unknown weighting {weighting!r}")

    hyp_ids: list[list[int]] = []
    weights: list[float] = []
    hyp_start = [0]
    act_ids: list[list[list[int]]] = []
    for turn in turns:
        if nbest_mode == "concat":
            merged: list[int] = []
            for text, _ in turn.nbest:
                merged.extend(vocab.encode(text))
            hyp_ids.append(merged or [PAD_INDEX])
            weights.append(1.0)
        else:
            confs = np.array([score for _, score in turn.nbest], dtype=np.float64)
            if weighting == "uniform" or confs.sum() <= 0.0:
                confs = np.full(len(confs), 1.0 / len(confs))
            else:
                confs = confs / confs.sum()
            for (text, _), w in zip(turn.nbest, confs):
                hyp_ids.append(vocab.encode(text) or [PAD_INDEX])
                weights.append(float(w))
        hyp_start.append(len(hyp_ids))
        acts = [vocab.encode(act) for act in turn.context_acts[-window:]] if window > 0 else []
        act_ids.append(acts)

    n_hyp = len(hyp_ids)
    max_len = max(max(len(h) for h in hyp_ids), max_width) if n_hyp else max_width
    hyp_tokens = np.full((n_hyp, max_len), PAD_INDEX, dtype=np.int32)
    hyp_len = np.zeros(n_hyp, dtype=np.int32)
    for i, ids in enumerate(hyp_ids):
        hyp_tokens[i, : len(ids)] = ids
        hyp_len[i] = len(ids)

    n_turns = len(turns)
    max_act = max((len(a) for acts in act_ids for a in acts), default=1) or 1
    act_tokens = np.full((n_turns, window, max_act), PAD_INDEX, dtype=np.int32)
    act_len = np.zeros((n_turns, window), dtype=np.int32)
    act_present = np.zeros((n_turns, window), dtype=np.float64)
    for t, acts in enumerate(act_ids):
        offset = window - len(acts)
        for j, ids in enumerate(acts):
            act_len[t, offset + j] = len(ids)
            act_present[t, offset + j] = 1.0
            act_tokens[t, offset + j, : len(ids)] = ids

    return EncodedTurns(
        hyp_tokens=hyp_tokens,
        hyp_len=hyp_len,
        hyp_weight=np.array(weights, dtype=np.float64),
        hyp_start=np.array(hyp_start, dtype=np.int32),
        act_tokens=act_tokens,
        act_len=act_len,
        act_present=act_present,
    )


def gather_batch(enc: EncodedTurns, idx: np.ndarray) -> tuple[EncodedTurns, np.ndarray]:
    """Slice out the turns in `idx`; second return is hyp-row → batch-turn map."""
    counts = enc.hyp_start[idx + 1] - enc.hyp_start[idx]
    rows = np.concatenate(
        [np.arange(enc.hyp_start[t], enc.hyp_start[t + 1]) for t in idx]
    ) if len(idx) else np.zeros(0, dtype=np.int64)
    start = np.zeros(len(idx) + 1, dtype=np.int32)
    np.cumsum(counts, out=start[1:])
    batch = EncodedTurns(
        hyp_tokens=enc.hyp_tokens[rows],
        hyp_len=enc.hyp_len[rows],
        hyp_weight=enc.hyp_weight[rows],
        hyp_start=start,
        act_tokens=enc.act_tokens[idx],
        act_len=enc.act_len[idx],
        act_present=enc.act_present[idx],
    )
    hyp_turn = np.repeat(np.arange(len(idx)), counts)
    return batch, hyp_turn


# ---------------------------------------------------------------------------
# Convolutional sentence path
# ---------------------------------------------------------------------------

@dataclass
class ConvCache:
    windows: list[np.ndarray]   # per width: (H, P_w, w*dim) im2col matrices
    argmax: list[np.ndarray]    # per width: (H, maps) winning window index
    n_positions: list[int]


def conv_forward(emb: np.ndarray, hyp_len: np.ndarray, filters, biases, widths):
    """Per-hypothesis convolution + masked max-pool.

    emb: (H, L, dim) embedded hypotheses. A hypothesis shorter than a filter
    counts as padded up to that width, so it always owns >= 1 window.
    Returns (H, sum(maps)) features and a cache for the backward pass.
    """
    n_hyp, max_len, dim = emb.shape
    outs = []
    windows_all, argmax_all, npos_all = [], [], []
    for w, weight, bias in zip(widths, filters, biases):
        n_pos = max_len - w + 1
        if n_pos < 1:
            raise ShapeError(f"sequence length {max_len} shorter than filter width {w}")
        # im2col: stack the w shifted views side by side
        windows = np.concatenate([emb[:, i : i + n_pos, :] for i in range(w)], axis=2)
        scores = windows @ weight.T + bias  # (H, P, maps)
        valid = np.maximum(hyp_len - w + 1, 1)  # (H,)
        mask = np.arange(n_pos)[None, :] >= valid[:, None]
        scores = np.where(mask[:, :, None], _NEG_INF, scores)
        arg = np.argmax(scores, axis=1)  # (H, maps)
        outs.append(np.take_along_axis(scores, arg[:, None, :], axis=1)[:, 0, :])
        windows_all.append(windows)
        argmax_all.append(arg)
        npos_all.append(n_pos)
    cache = ConvCache(windows=windows_all, argmax=argmax_all, n_positions=npos_all)
    return np.concatenate(outs, axis=1), cache


def conv_backward(d_out: np.ndarray, cache: ConvCache, emb_shape, filters, widths):
    """Returns (d_filters, d_biases, d_emb) for conv_forward."""
    n_hyp, max_len, dim = emb_shape
    d_emb = np.zeros(emb_shape)
    d_filters, d_biases = [], []
    col = 0
    for w, weight, windows, arg, n_pos in zip(
        widths, filters, cache.windows, cache.argmax, cache.n_positions
    ):
        maps = weight.shape[0]
        d_pool = d_out[:, col : col + maps]  # (H, maps)
        col += maps
        d_scores = np.zeros((n_hyp, n_pos, maps))
        np.put_along_axis(d_scores, arg[:, None, :], d_pool[:, None, :], axis=1)
        d_biases.append(d_scores.sum(axis=(0, 1)))
        flat_scores = d_scores.reshape(-1, maps)        # (H*P, maps)
        flat_windows = windows.reshape(-1, w * dim)     # (H*P, w*dim)
        d_filters.append(flat_scores.T @ flat_windows)
        d_windows = (flat_scores @ weight).reshape(n_hyp, n_pos, w, dim)
        for i in range(w):
            d_emb[:, i : i + n_pos, :] += d_windows[:, :, i, :]
    return d_filters, d_biases, d_emb


# ---------------------------------------------------------------------------
# Recurrent context path
# ---------------------------------------------------------------------------

@dataclass
class LstmCache:
    x: np.ndarray        # (T, W, d) act embeddings
    gates: list          # per step: (i, f, o, g, c_new, tanh_c, c_prev, h_prev)
    mask: np.ndarray     # (T, W)


def lstm_forward(x: np.ndarray, mask: np.ndarray, Wx, Wh, b):
    """Masked LSTM over (T, W, d); padded steps carry state through."""
    n, steps, _ = x.shape
    cdim = Wh.shape[1]
    h = np.zeros((n, cdim))
    c = np.zeros((n, cdim))
    gates = []
    for t in range(steps):
        xt = x[:, t, :]
        z = xt @ Wx.T + h @ Wh.T + b
        i = sigmoid(z[:, 0 * cdim : 1 * cdim])
        f = sigmoid(z[:, 1 * cdim : 2 * cdim])
        o = sigmoid(z[:, 2 * cdim : 3 * cdim])
        g = np.tanh(z[:, 3 * cdim : 4 * cdim])
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        m = mask[:, t : t + 1]
        gates.append((i, f, o, g, c_new, tanh_c, c, h))
        c = m * c_new + (1.0 - m) * c
        h = m * h_new + (1.0 - m) * h
    return h, LstmCache(x=x, gates=gates, mask=mask)


def lstm_backward(d_h_final: np.ndarray, cache: LstmCache, Wx, Wh):
    """Returns (d_Wx, d_Wh, d_b, d_x)."""
    n, steps, d = cache.x.shape
    cdim = Wh.shape[1]
    d_Wx = np.zeros_like(Wx)
    d_Wh = np.zeros_like(Wh)
    d_b = np.zeros(4 * cdim)
    d_x = np.zeros_like(cache.x)
    dh = d_h_final.copy()
    dc = np.zeros((n, cdim))
    for t in reversed(range(steps)):
        i, f, o, g, c_new, tanh_c, c_prev, h_prev = cache.gates[t]
        m = cache.mask[:, t : t + 1]
        dh_new = m * dh
        dc_new = m * dc
        dh_carry = (1.0 - m) * dh
        dc_carry = (1.0 - m) * dc
        do = dh_new * tanh_c
        dc_new = dc_new + dh_new * o * (1.0 - tanh_c * tanh_c)
        df = dc_new * c_prev
        di = dc_new * g
        dg = dc_new * i
        dc = dc_new * f + dc_carry
        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f),
             do * o * (1.0 - o), dg * (1.0 - g * g)],
            axis=1,
        )
        xt = cache.x[:, t, :]
        d_Wx += dz.T @ xt
        d_Wh += dz.T @ h_prev
        d_b += dz.sum(axis=0)
        d_x[:, t, :] = dz @ Wx
        dh = dz @ Wh + dh_carry
    return d_Wx, d_Wh, d_b, d_x


# ---------------------------------------------------------------------------
# Act embedding pooling
# ---------------------------------------------------------------------------

def pool_acts(vectors: np.ndarray, act_tokens, act_len):
    """Mean-pool token embeddings per act: (T, W, A) ids → (T, W, dim)."""
    emb = vectors[act_tokens]                      # (T, W, A, dim)
    a_len = np.arange(act_tokens.shape[2])
    token_mask = (a_len[None, None, :] < act_len[:, :, None]).astype(np.float64)
    denom = np.maximum(act_len, 1).astype(np.float64)
    return (emb * token_mask[:, :, :, None]).sum(axis=2) / denom[:, :, None]


def pool_acts_backward(d_pooled, act_tokens, act_len, d_vectors):
    """Scatter act-pooling gradients back into the embedding matrix."""
    a_len = np.arange(act_tokens.shape[2])
    token_mask = (a_len[None, None, :] < act_len[:, :, None]).astype(np.float64)
    denom = np.maximum(act_len, 1).astype(np.float64)
    d_tok = d_pooled[:, :, None, :] / denom[:, :, None, None] * token_mask[:, :, :, None]
    np.add.at(d_vectors, act_tokens.reshape(-1),
              d_tok.reshape(-1, d_tok.shape[-1]))


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Softmax along the last axis with max-subtraction."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)
