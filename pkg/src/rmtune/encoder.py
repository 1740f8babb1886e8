"""Shared hidden unit: CNN over the N-best list, LSTM over prior system
acts, combined as h = tanh(W_conv·sent + W_LSTM·ctxt).

Parameter containers live here together with pure single-turn encode
operations; training uses the batched kernels in `network` directly (the
functions here run the same kernels with batch size 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import EmbeddingTable, Vocabulary
from .errors import ShapeError
from . import network

DEFAULT_WIDTHS = (3, 4, 5)
DEFAULT_MAPS = 100
DEFAULT_HIDDEN_DIM = 100
DEFAULT_WINDOW = 4


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name} contains non-finite entries")


@dataclass
class SentenceEncoderParams:
    """One linear filter bank per width; output dim = len(widths) * maps."""

    widths: tuple[int, ...]
    maps: int
    filters: list[np.ndarray] = field(repr=False)  # per width: (maps, width*dim)
    biases: list[np.ndarray] = field(repr=False)   # per width: (maps,)

    def validate(self, dim: int) -> None:
        if len(self.filters) != len(self.widths) or len(self.biases) != len(self.widths):
            raise ShapeError("one filter/bias bank required per width")
        for w, weight, bias in zip(self.widths, self.filters, self.biases):
            if w < 1 or self.maps < 1:
                raise ShapeError("widths and maps must be positive")
            if weight.shape != (self.maps, w * dim):
                raise ShapeError(
                    f"filter bank for width {w} has shape {weight.shape}, "
                    f"expected {(self.maps, w * dim)}"
                )
            if bias.shape != (self.maps,):
                raise ShapeError(f"bias for width {w} has shape {bias.shape}")
            _check_finite(f"filters[{w}]", weight)
            _check_finite(f"biases[{w}]", bias)

    @property
    def out_dim(self) -> int:
        return len(self.widths) * self.maps


@dataclass
class ContextEncoderParams:
    """Four-gate recurrent cell (input, forget, output, candidate blocks)."""

    Wx: np.ndarray = field(repr=False)  # (4*ctxt_dim, emb_dim)
    Wh: np.ndarray = field(repr=False)  # (4*ctxt_dim, ctxt_dim)
    b: np.ndarray = field(repr=False)   # (4*ctxt_dim,)

    def validate(self, dim: int) -> None:
        cdim = self.ctxt_dim
        if self.Wx.shape != (4 * cdim, dim):
            raise ShapeError(f"Wx shape {self.Wx.shape}, expected {(4 * cdim, dim)}")
        if self.Wh.shape != (4 * cdim, cdim):
            raise ShapeError(f"Wh shape {self.Wh.shape}, expected {(4 * cdim, cdim)}")
        if self.b.shape != (4 * cdim,):
            raise ShapeError(f"b shape {self.b.shape}")
        for name in ("Wx", "Wh", "b"):
            _check_finite(name, getattr(self, name))

    @property
    def ctxt_dim(self) -> int:
        return self.Wh.shape[1]


@dataclass
class CombinerParams:
    W_conv: np.ndarray = field(repr=False)  # (hidden_dim, sent_dim)
    W_LSTM: np.ndarray = field(repr=False)  # (hidden_dim, ctxt_dim)

    def validate(self, sent_dim: int, ctxt_dim: int) -> None:
        if self.W_conv.ndim != 2 or self.W_conv.shape[1] != sent_dim:
            raise ShapeError(
                f"W_conv shape {self.W_conv.shape} does not accept sent dim {sent_dim}"
            )
        if self.W_LSTM.shape != (self.hidden_dim, ctxt_dim):
            raise ShapeError(
                f"W_LSTM shape {self.W_LSTM.shape}, expected "
                f"{(self.hidden_dim, ctxt_dim)}"
            )
        _check_finite("W_conv", self.W_conv)
        _check_finite("W_LSTM", self.W_LSTM)

    @property
    def hidden_dim(self) -> int:
        return self.W_conv.shape[0]


def _singleton(turn_like, vocab, window, max_width, nbest_mode, weighting):
    return network.encode_turns([turn_like], vocab, window, max_width,
                                nbest_mode=nbest_mode, weighting=weighting)


class _TurnView:
    """Minimal duck-typed turn for the single-turn encode entry points."""

    def __init__(self, nbest, context_acts):
        self.nbest = nbest
        self.context_acts = context_acts


def encode_sentence(nbest, vocab: Vocabulary, embeddings: EmbeddingTable,
                    params: SentenceEncoderParams, weighting: str = "confidence",
                    nbest_mode: str = "separate") -> np.ndarray:
    """Embed, convolve and max-pool each hypothesis, then combine the
    per-hypothesis vectors by (normalized) confidence-weighted averaging."""
    params.validate(embeddings.dim)
    enc = _singleton(_TurnView(nbest, []), vocab, 0, max(params.widths),
                     nbest_mode, weighting)
    emb = embeddings.vectors[enc.hyp_tokens]
    feats, _ = network.conv_forward(emb, enc.hyp_len, params.filters,
                                    params.biases, params.widths)
    return enc.hyp_weight @ feats


def encode_context(context_acts, vocab: Vocabulary, embeddings: EmbeddingTable,
                   params: ContextEncoderParams | None, window: int = DEFAULT_WINDOW,
                   mode: str = "lstm") -> np.ndarray:
    """Run the gated cell over the last `window` acts (oldest first); each
    act is the mean of its token embeddings. Empty context → zero vector.
    mode="mean" skips the cell and averages act embeddings (params unused)."""
    if mode == "lstm":
        params.validate(embeddings.dim)
    if window < 0:
        raise ShapeError(f"window must be >= 0, got {window}")
    if window == 0 or not context_acts:
        return np.zeros(params.ctxt_dim if mode == "lstm" else embeddings.dim)
    enc = _singleton(_TurnView([(["x"], 1.0)], context_acts), vocab, window, 1,
                     "separate", "uniform")
    pooled = network.pool_acts(embeddings.vectors, enc.act_tokens, enc.act_len)
    if mode == "mean":
        present = enc.act_present[:, :, None]
        total = np.maximum(enc.act_present.sum(axis=1), 1.0)
        return ((pooled * present).sum(axis=1) / total[:, None])[0]
    h, _ = network.lstm_forward(pooled, enc.act_present, params.Wx, params.Wh, params.b)
    return h[0]


def combine(sent: np.ndarray, ctxt: np.ndarray, params: CombinerParams) -> np.ndarray:
    """h = tanh(W_conv·sent + W_LSTM·ctxt); every component in (-1, 1)."""
    sent = np.asarray(sent, dtype=np.float64)
    ctxt = np.asarray(ctxt, dtype=np.float64)
    params.validate(sent.shape[-1], ctxt.shape[-1])
    return np.tanh(sent @ params.W_conv.T + ctxt @ params.W_LSTM.T)
