"""Multi-head binary softmax decoder over the shared hidden unit.

One two-row softmax head per slot on top of the encoder's h; joint mode
trains a single shared encoder with all heads on the summed per-head
negative log-likelihood, independent mode trains one full model per head
(the baseline the joint model is compared against). Training is plain
mini-batch SGD with the Adadelta update rule, inverted dropout on h, and
hand-derived gradients (verified by `gradient_check`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import network
from .corpus import (
    PAD_INDEX,
    Corpus,
    EmbeddingTable,
    Vocabulary,
)
from .encoder import (
    DEFAULT_HIDDEN_DIM,
    DEFAULT_MAPS,
    DEFAULT_WIDTHS,
    DEFAULT_WINDOW,
    CombinerParams,
    ContextEncoderParams,
    SentenceEncoderParams,
)
from .errors import CheckpointError, DivergenceError, InputError, ShapeError


@dataclass
class ModelConfig:
    emb_dim: int = 100
    widths: tuple[int, ...] = DEFAULT_WIDTHS
    maps: int = DEFAULT_MAPS
    ctxt_dim: int = DEFAULT_HIDDEN_DIM
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    window: int = DEFAULT_WINDOW
    nbest_mode: str = "separate"      # or "concat": one long token sequence
    weighting: str = "confidence"     # or "uniform"
    context_mode: str = "lstm"        # or "mean": mean act embedding, no cell
    use_head_bias: bool = False
    train_embeddings: bool = False

    def validate(self) -> None:
        if min(self.emb_dim, self.maps, self.ctxt_dim, self.hidden_dim) < 1:
            raise ShapeError("model dimensions must be positive")
        if not self.widths or any(w < 1 for w in self.widths):
            raise ShapeError(f"bad filter widths {self.widths!r}")
        if self.window < 0:
            raise ShapeError("window must be >= 0")
        if self.nbest_mode not in ("separate", "concat"):
            raise ShapeError(f"unknown nbest_mode {self.nbest_mode!r}")
        if self.weighting not in ("confidence", "uniform"):
            raise ShapeError(f"unknown weighting {self.weighting!r}")
        if self.context_mode not in ("lstm", "mean"):
            raise ShapeError(f"unknown context_mode {self.context_mode!r}")

    @property
    def sent_dim(self) -> int:
        return len(self.widths) * self.maps

    @property
    def context_out_dim(self) -> int:
        return self.emb_dim if self.context_mode == "mean" else self.ctxt_dim


@dataclass
class HeadWeights:
    """Per-slot softmax: row 0 scores class 0 (absent), row 1 class 1."""

    name: str
    W: np.ndarray = field(repr=False)  # (2, hidden_dim)
    b: np.ndarray = field(repr=False)  # (2,), zero unless head bias enabled

    def validate(self, hidden_dim: int) -> None:
        if self.W.shape != (2, hidden_dim):
            raise ShapeError(
                f"head {self.name!r}: W shape {self.W.shape}, "
                f"expected {(2, hidden_dim)}"
            )
        if self.b.shape != (2,):
            raise ShapeError(f"head {self.name!r}: b shape {self.b.shape}")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ShapeError(f"head {self.name!r}: non-finite weights")


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 50
    dropout: float = 0.5
    mode: str = "joint"  # or "independent"
    seed: int = 0
    rho: float = 0.95    # adaptive update decay
    eps: float = 1e-6    # adaptive update stabilizer

    def validate(self) -> None:
        if self.epochs < 0:
            raise InputError("epochs must be >= 0")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise InputError("dropout must be in [0, 1)")
        if self.mode not in ("joint", "independent"):
            raise InputError(f"unknown training mode {self.mode!r}")
        if self.seed < 0:
            raise InputError("seed must be non-negative")


@dataclass
class DecoderModel:
    vocab: Vocabulary
    embeddings: EmbeddingTable
    sentence: SentenceEncoderParams
    context: ContextEncoderParams | None  # None in mean context mode
    combiner: CombinerParams
    heads: list[HeadWeights]
    config: ModelConfig

    def validate(self) -> None:
        self.config.validate()
        if self.embeddings.dim != self.config.emb_dim:
            raise ShapeError("embedding dim does not match config")
        if self.embeddings.vectors.shape[0] != len(self.vocab):
            raise ShapeError("embedding rows do not match vocabulary")
        self.sentence.validate(self.config.emb_dim)
        if self.config.context_mode == "lstm":
            if self.context is None:
                raise ShapeError("lstm context mode requires cell parameters")
            self.context.validate(self.config.emb_dim)
        self.combiner.validate(self.config.sent_dim, self.config.context_out_dim)
        names = [h.name for h in self.heads]
        if len(set(names)) != len(names):
            raise ShapeError("duplicate head names")
        for h in self.heads:
            h.validate(self.config.hidden_dim)

    @property
    def head_names(self) -> list[str]:
        return [h.name for h in self.heads]

    def head(self, name: str) -> HeadWeights:
        for h in self.heads:
            if h.name == name:
                return h
        raise InputError(f"model has no head {name!r}")

    def tensors(self) -> dict[str, np.ndarray]:
        """Named registry of every parameter array (views, not copies)."""
        out: dict[str, np.ndarray] = {"embeddings": self.embeddings.vectors}
        for w, weight, bias in zip(self.sentence.widths, self.sentence.filters,
                                   self.sentence.biases):
            out[f"conv.w{w}"] = weight
            out[f"conv.b{w}"] = bias
        if self.context is not None:
            out["lstm.Wx"] = self.context.Wx
            out["lstm.Wh"] = self.context.Wh
            out["lstm.b"] = self.context.b
        out["combiner.W_conv"] = self.combiner.W_conv
        out["combiner.W_LSTM"] = self.combiner.W_LSTM
        for h in self.heads:
            out[f"head.{h.name}.W"] = h.W
            if self.config.use_head_bias:
                out[f"head.{h.name}.b"] = h.b
        return out

    def trainable_tensors(self) -> dict[str, np.ndarray]:
        out = self.tensors()
        if not self.config.train_embeddings:
            out.pop("embeddings")
        return out


def init_model(vocab: Vocabulary, embeddings: EmbeddingTable, head_names,
               config: ModelConfig, seed: int = 0) -> DecoderModel:
    """All non-embedding weights uniform in [-0.05, 0.05] from the seed."""
    config.validate()
    rng = np.random.default_rng([seed, 1009])

    def u(*shape):
        return rng.uniform(-0.05, 0.05, size=shape)

    dim = config.emb_dim
    sentence = SentenceEncoderParams(
        widths=tuple(config.widths), maps=config.maps,
        filters=[u(config.maps, w * dim) for w in config.widths],
        biases=[u(config.maps) for _ in config.widths],
    )
    context = None
    if config.context_mode == "lstm":
        context = ContextEncoderParams(
            Wx=u(4 * config.ctxt_dim, dim),
            Wh=u(4 * config.ctxt_dim, config.ctxt_dim),
            b=u(4 * config.ctxt_dim),
        )
    combiner = CombinerParams(
        W_conv=u(config.hidden_dim, config.sent_dim),
        W_LSTM=u(config.hidden_dim, config.context_out_dim),
    )
    heads = [
        HeadWeights(name=name, W=u(2, config.hidden_dim),
                    b=u(2) if config.use_head_bias else np.zeros(2))
        for name in head_names
    ]
    vectors = embeddings.vectors.copy()
    vectors[PAD_INDEX] = 0.0
    model = DecoderModel(
        vocab=vocab,
        embeddings=EmbeddingTable(dim=dim, vectors=vectors),
        sentence=sentence, context=context, combiner=combiner,
        heads=heads, config=config,
    )
    model.validate()
    return model


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

@dataclass
class _ForwardCache:
    batch: network.EncodedTurns
    hyp_turn: np.ndarray
    emb: np.ndarray
    conv_cache: network.ConvCache
    feats: np.ndarray
    sent: np.ndarray
    pooled: np.ndarray | None
    lstm_cache: network.LstmCache | None
    ctxt: np.ndarray
    h: np.ndarray
    dropout_mask: np.ndarray | None
    h_used: np.ndarray


def _encoder_forward(model: DecoderModel, batch: network.EncodedTurns,
                     hyp_turn: np.ndarray,
                     dropout_mask: np.ndarray | None = None) -> _ForwardCache:
    cfg = model.config
    E = model.embeddings.vectors
    emb = E[batch.hyp_tokens]
    feats, conv_cache = network.conv_forward(
        emb, batch.hyp_len, model.sentence.filters, model.sentence.biases,
        model.sentence.widths)
    n_turns = batch.n_turns
    sent = np.zeros((n_turns, cfg.sent_dim))
    np.add.at(sent, hyp_turn, batch.hyp_weight[:, None] * feats)

    pooled = None
    lstm_cache = None
    if cfg.window == 0:
        ctxt = np.zeros((n_turns, cfg.context_out_dim))
    else:
        pooled = network.pool_acts(E, batch.act_tokens, batch.act_len)
        if cfg.context_mode == "mean":
            present = batch.act_present[:, :, None]
            total = np.maximum(batch.act_present.sum(axis=1), 1.0)
            ctxt = (pooled * present).sum(axis=1) / total[:, None]
        else:
            ctxt, lstm_cache = network.lstm_forward(
                pooled, batch.act_present, model.context.Wx,
                model.context.Wh, model.context.b)

    h = np.tanh(sent @ model.combiner.W_conv.T + ctxt @ model.combiner.W_LSTM.T)
    h_used = h if dropout_mask is None else h * dropout_mask
    return _ForwardCache(batch=batch, hyp_turn=hyp_turn, emb=emb,
                         conv_cache=conv_cache, feats=feats, sent=sent,
                         pooled=pooled, lstm_cache=lstm_cache, ctxt=ctxt,
                         h=h, dropout_mask=dropout_mask, h_used=h_used)


def _stack_heads(model: DecoderModel):
    W = np.stack([h.W for h in model.heads])  # (K, 2, hidden)
    b = np.stack([h.b for h in model.heads])  # (K, 2)
    return W, b


def _head_probs(model: DecoderModel, h_used: np.ndarray) -> np.ndarray:
    W, b = _stack_heads(model)
    logits = np.einsum("th,kch->tkc", h_used, W) + b[None, :, :]
    return network.softmax_rows(logits)


def _nll(probs: np.ndarray, labels: np.ndarray) -> float:
    # probs: (T, K, 2); labels: (T, K) in {0, 1}
    picked = np.take_along_axis(probs, labels[:, :, None], axis=2)[:, :, 0]
    # A picked probability can underflow to exactly zero; the resulting inf
    # is caught by the divergence check in the training loop.
    with np.errstate(divide="ignore"):
        return float(-np.log(picked).sum() / probs.shape[0])


def _loss_and_grads(model: DecoderModel, cache: _ForwardCache,
                    labels: np.ndarray):
    cfg = model.config
    probs = _head_probs(model, cache.h_used)
    loss = _nll(probs, labels)

    n_turns = probs.shape[0]
    d_logits = probs.copy()
    rows = np.arange(n_turns)[:, None]
    cols = np.arange(probs.shape[1])[None, :]
    d_logits[rows, cols, labels] -= 1.0
    d_logits /= n_turns

    W_stack, _ = _stack_heads(model)
    grads: dict[str, np.ndarray] = {}
    dWh = np.einsum("tkc,th->kch", d_logits, cache.h_used)
    dbh = d_logits.sum(axis=0)
    for k, head in enumerate(model.heads):
        grads[f"head.{head.name}.W"] = dWh[k]
        if cfg.use_head_bias:
            grads[f"head.{head.name}.b"] = dbh[k]

    dh = np.einsum("tkc,kch->th", d_logits, W_stack)
    if cache.dropout_mask is not None:
        dh = dh * cache.dropout_mask
    d_pre = dh * (1.0 - cache.h * cache.h)
    grads["combiner.W_conv"] = d_pre.T @ cache.sent
    grads["combiner.W_LSTM"] = d_pre.T @ cache.ctxt
    d_sent = d_pre @ model.combiner.W_conv
    d_ctxt = d_pre @ model.combiner.W_LSTM

    d_feats = cache.batch.hyp_weight[:, None] * d_sent[cache.hyp_turn]
    d_filters, d_biases, d_emb = network.conv_backward(
        d_feats, cache.conv_cache, cache.emb.shape,
        model.sentence.filters, model.sentence.widths)
    for w, df, db in zip(model.sentence.widths, d_filters, d_biases):
        grads[f"conv.w{w}"] = df
        grads[f"conv.b{w}"] = db

    d_pooled = None
    if cfg.window > 0 and cfg.context_mode == "lstm":
        dWx, dWh_l, db_l, d_pooled = network.lstm_backward(
            d_ctxt, cache.lstm_cache, model.context.Wx, model.context.Wh)
        grads["lstm.Wx"] = dWx
        grads["lstm.Wh"] = dWh_l
        grads["lstm.b"] = db_l
    elif cfg.window > 0 and cfg.context_mode == "mean":
        total = np.maximum(cache.batch.act_present.sum(axis=1), 1.0)
        d_pooled = (d_ctxt[:, None, :] / total[:, None, None]) \
            * cache.batch.act_present[:, :, None]

    if cfg.train_embeddings:
        dE = np.zeros_like(model.embeddings.vectors)
        np.add.at(dE, cache.batch.hyp_tokens.reshape(-1),
                  d_emb.reshape(-1, cfg.emb_dim))
        if d_pooled is not None:
            network.pool_acts_backward(d_pooled, cache.batch.act_tokens,
                                       cache.batch.act_len, dE)
        dE[PAD_INDEX] = 0.0
        grads["embeddings"] = dE
    return loss, grads


def _label_matrix(turns, head_names) -> np.ndarray:
    labels = np.zeros((len(turns), len(head_names)), dtype=np.int64)
    for t, turn in enumerate(turns):
        for k, name in enumerate(head_names):
            labels[t, k] = 1 if turn.label(name) else 0
    return labels


def head_forward(h, head: HeadWeights) -> tuple[float, float]:
    """Eq.-style two-class softmax for one head on one hidden vector."""
    h = np.asarray(h, dtype=np.float64)
    if not np.all(np.isfinite(h)):
        raise InputError("hidden vector contains non-finite entries")
    if h.shape != (head.W.shape[1],):
        raise ShapeError(f"hidden dim {h.shape} does not match head {head.W.shape}")
    probs = network.softmax_rows(head.W @ h + head.b)
    return float(probs[0]), float(probs[1])


def joint_loss(model: DecoderModel, turns) -> float:
    """Mean over turns of the summed per-head negative log-likelihood."""
    turns = list(turns)
    if not turns:
        raise InputError("joint_loss needs at least one turn")
    enc = network.encode_turns(turns, model.vocab, model.config.window,
                               max(model.config.widths),
                               model.config.nbest_mode, model.config.weighting)
    batch, hyp_turn = network.gather_batch(enc, np.arange(len(turns)))
    cache = _encoder_forward(model, batch, hyp_turn)
    probs = _head_probs(model, cache.h_used)
    return _nll(probs, _label_matrix(turns, model.head_names))


class _Adadelta:
    def __init__(self, tensors: dict[str, np.ndarray], rho: float, eps: float):
        self.rho = rho
        self.eps = eps
        self.sq_grad = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.sq_step = {k: np.zeros_like(v) for k, v in tensors.items()}

    def update(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        for name, g in grads.items():
            if name not in self.sq_grad:
                continue
            eg, ed = self.sq_grad[name], self.sq_step[name]
            eg *= self.rho
            eg += (1.0 - self.rho) * g * g
            step = -np.sqrt((ed + self.eps) / (eg + self.eps)) * g
            ed *= self.rho
            ed += (1.0 - self.rho) * step * step
            tensors[name] += step


def _train_single(model: DecoderModel, turns, labels: np.ndarray,
                  config: TrainConfig, seed_stream: int) -> list[float]:
    cfg = model.config
    enc = network.encode_turns(turns, model.vocab, cfg.window, max(cfg.widths),
                               cfg.nbest_mode, cfg.weighting)
    trainable = model.trainable_tensors()
    opt = _Adadelta(trainable, config.rho, config.eps)
    rng_shuffle = np.random.default_rng([config.seed, seed_stream, 2])
    rng_drop = np.random.default_rng([config.seed, seed_stream, 3])
    n = len(turns)
    epoch_losses = []
    for epoch in range(config.epochs):
        perm = rng_shuffle.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            batch, hyp_turn = network.gather_batch(enc, idx)
            mask = None
            if config.dropout > 0.0:
                keep = rng_drop.random((len(idx), cfg.hidden_dim)) >= config.dropout
                mask = keep.astype(np.float64) / (1.0 - config.dropout)
            cache = _encoder_forward(model, batch, hyp_turn, dropout_mask=mask)
            loss, grads = _loss_and_grads(model, cache, labels[idx])
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            opt.update(trainable, grads)
            if cfg.train_embeddings:
                model.embeddings.vectors[PAD_INDEX] = 0.0
            total += loss * len(idx)
        epoch_losses.append(total / n)
    return epoch_losses


def train(corpus: Corpus, vocab: Vocabulary, embeddings: EmbeddingTable,
          model_config: ModelConfig, config: TrainConfig,
          history: dict | None = None, heads: list[str] | None = None):
    """Train the decoder on a corpus.

    mode="joint" returns one DecoderModel whose encoder and heads were
    updated from the summed loss over all heads; mode="independent" returns
    a dict head-name → DecoderModel, each a full single-head model trained
    on that head's labels only. `heads` restricts which independent models
    are trained (joint mode always shares across every corpus head).
    `history`, if given, is filled with per-epoch mean losses under key
    "joint" or the head name.
    """
    config.validate()
    model_config.validate()
    if not corpus.turns:
        raise InputError("cannot train on an empty corpus")
    if config.mode == "joint":
        model = init_model(vocab, embeddings, corpus.heads, model_config,
                           seed=config.seed)
        losses = _train_single(model, corpus.turns,
                               _label_matrix(corpus.turns, corpus.heads),
                               config, seed_stream=0)
        if history is not None:
            history["joint"] = losses
        return model
    if heads is not None:
        unknown = [name for name in heads if name not in corpus.heads]
        if unknown:
            raise InputError(f"unknown heads {unknown}")
    models: dict[str, DecoderModel] = {}
    for k, name in enumerate(corpus.heads):
        if heads is not None and name not in heads:
            continue
        model = init_model(vocab, embeddings, [name], model_config,
                           seed=config.seed * 131 + k)
        losses = _train_single(model, corpus.turns,
                               _label_matrix(corpus.turns, [name]),
                               config, seed_stream=k + 1)
        if history is not None:
            history[name] = losses
        models[name] = model
    return models


def export_hidden(model: DecoderModel, corpus: Corpus,
                  chunk_size: int = 512) -> list[tuple[str, np.ndarray]]:
    """h for every turn, dropout disabled, corpus order preserved."""
    records: list[tuple[str, np.ndarray]] = []
    turns = corpus.turns
    for start in range(0, len(turns), chunk_size):
        part = turns[start : start + chunk_size]
        enc = network.encode_turns(part, model.vocab, model.config.window,
                                   max(model.config.widths),
                                   model.config.nbest_mode, model.config.weighting)
        batch, hyp_turn = network.gather_batch(enc, np.arange(len(part)))
        cache = _encoder_forward(model, batch, hyp_turn)
        for turn, h in zip(part, cache.h):
            records.append((turn.id, h.copy()))
    return records


def predict_probs(model: DecoderModel, corpus: Corpus,
                  chunk_size: int = 512) -> dict[str, np.ndarray]:
    """Head-name → (n_turns, 2) class probabilities, corpus order."""
    out = {name: np.zeros((len(corpus.turns), 2)) for name in model.head_names}
    turns = corpus.turns
    for start in range(0, len(turns), chunk_size):
        part = turns[start : start + chunk_size]
        enc = network.encode_turns(part, model.vocab, model.config.window,
                                   max(model.config.widths),
                                   model.config.nbest_mode, model.config.weighting)
        batch, hyp_turn = network.gather_batch(enc, np.arange(len(part)))
        cache = _encoder_forward(model, batch, hyp_turn)
        probs = _head_probs(model, cache.h_used)
        for k, name in enumerate(model.head_names):
            out[name][start : start + len(part)] = probs[:, k, :]
    return out


def gradient_check(model: DecoderModel, turns, epsilon: float = 1e-4,
                   coords_per_tensor: int = 200, seed: int = 0) -> dict[str, float]:
    """Max relative error between analytic and central-difference gradients,
    per trainable tensor, on a sampled coordinate subset (dropout off)."""
    if not 1e-6 <= epsilon <= 1e-3:
        raise InputError(f"epsilon must be in [1e-6, 1e-3], got {epsilon}")
    turns = list(turns)
    labels = _label_matrix(turns, model.head_names)
    enc = network.encode_turns(turns, model.vocab, model.config.window,
                               max(model.config.widths),
                               model.config.nbest_mode, model.config.weighting)
    batch, hyp_turn = network.gather_batch(enc, np.arange(len(turns)))
    cache = _encoder_forward(model, batch, hyp_turn)
    _, grads = _loss_and_grads(model, cache, labels)

    def loss_only() -> float:
        c = _encoder_forward(model, batch, hyp_turn)
        return _nll(_head_probs(model, c.h_used), labels)

    rng = np.random.default_rng(seed)
    report: dict[str, float] = {}
    for name, tensor in model.trainable_tensors().items():
        flat = tensor.reshape(-1)
        g = grads[name].reshape(-1)
        size = flat.size
        coords = (np.arange(size) if size <= coords_per_tensor
                  else rng.choice(size, size=coords_per_tensor, replace=False))
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + epsilon
            up = loss_only()
            flat[c] = orig - epsilon
            down = loss_only()
            flat[c] = orig
            numeric = (up - down) / (2.0 * epsilon)
            analytic = g[c]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)
        report[name] = worst
    return report


# ---------------------------------------------------------------------------
# Checkpoint and hidden-export files
# ---------------------------------------------------------------------------

_CHECKPOINT_MAGIC = "decoder-checkpoint v1"
_HIDDEN_MAGIC = "hidden-export v1"


def _write_array(f, name: str, arr: np.ndarray) -> None:
    dims = " ".join(str(d) for d in arr.shape)
    f.write(f"array {name} {dims}\n")
    rows = arr.reshape(1, -1) if arr.ndim == 1 else arr
    for row in rows:
        f.write(" ".join(repr(float(v)) for v in row) + "\n")


def save_checkpoint(model: DecoderModel, path) -> None:
    model.validate()
    cfg = model.config
    with open(path, "w", encoding="utf-8") as f:
        f.write(_CHECKPOINT_MAGIC + "\n")
        f.write(f"config emb_dim {cfg.emb_dim}\n")
        f.write(f"config widths {','.join(str(w) for w in cfg.widths)}\n")
        f.write(f"config maps {cfg.maps}\n")
        f.write(f"config ctxt_dim {cfg.ctxt_dim}\n")
        f.write(f"config hidden_dim {cfg.hidden_dim}\n")
        f.write(f"config window {cfg.window}\n")
        f.write(f"config nbest_mode {cfg.nbest_mode}\n")
        f.write(f"config weighting {cfg.weighting}\n")
        f.write(f"config context_mode {cfg.context_mode}\n")
        f.write(f"config use_head_bias {int(cfg.use_head_bias)}\n")
        f.write(f"config train_embeddings {int(cfg.train_embeddings)}\n")
        f.write(f"heads {len(model.heads)}\n")
        for h in model.heads:
            f.write(h.name + "\n")
        f.write(f"vocab {len(model.vocab)}\n")
        for tok in model.vocab.tokens:
            f.write(tok + "\n")
        for name, arr in model.tensors().items():
            _write_array(f, name, arr)
        if not cfg.use_head_bias:
            for h in model.heads:
                _write_array(f, f"head.{h.name}.b", h.b)


class _LineReader:
    def __init__(self, path):
        with open(path, "r", encoding="utf-8") as f:
            self.lines = f.read().splitlines()
        self.pos = 0
        self.path = path

    def next(self, what: str) -> str:
        if self.pos >= len(self.lines):
            raise CheckpointError(f"{self.path}: unexpected end of file ({what})")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def fail(self, message: str):
        raise CheckpointError(f"{self.path}: line {self.pos}: {message}")


def _read_array(reader: _LineReader) -> tuple[str, np.ndarray]:
    header = reader.next("array header").split()
    if len(header) < 3 or header[0] != "array":
        reader.fail(f"expected array header, got {' '.join(header)!r}")
    name = header[1]
    try:
        shape = tuple(int(d) for d in header[2:])
    except ValueError:
        reader.fail(f"bad array shape in header for {name!r}")
    n_rows = 1 if len(shape) == 1 else shape[0]
    row_len = shape[0] if len(shape) == 1 else int(np.prod(shape[1:]))
    rows = []
    for _ in range(n_rows):
        parts = reader.next(f"array row of {name}").split()
        if len(parts) != row_len:
            reader.fail(f"array {name!r}: row has {len(parts)} values, expected {row_len}")
        try:
            rows.append([float(v) for v in parts])
        except ValueError as e:
            reader.fail(f"array {name!r}: {e}")
    return name, np.array(rows, dtype=np.float64).reshape(shape)


def load_checkpoint(path) -> DecoderModel:
    reader = _LineReader(path)
    if reader.next("magic") != _CHECKPOINT_MAGIC:
        reader.fail(f"not a {_CHECKPOINT_MAGIC!r} file")
    raw: dict[str, str] = {}
    line = reader.next("config")
    while line.startswith("config "):
        _, key, value = line.split(" ", 2)
        raw[key] = value
        line = reader.next("config or heads")
    try:
        config = ModelConfig(
            emb_dim=int(raw["emb_dim"]),
            widths=tuple(int(w) for w in raw["widths"].split(",")),
            maps=int(raw["maps"]),
            ctxt_dim=int(raw["ctxt_dim"]),
            hidden_dim=int(raw["hidden_dim"]),
            window=int(raw["window"]),
            nbest_mode=raw["nbest_mode"],
            weighting=raw["weighting"],
            context_mode=raw["context_mode"],
            use_head_bias=bool(int(raw["use_head_bias"])),
            train_embeddings=bool(int(raw["train_embeddings"])),
        )
    except (KeyError, ValueError) as e:
        reader.fail(f"bad config block ({e})")
    if not line.startswith("heads "):
        reader.fail("expected heads count")
    head_names = [reader.next("head name") for _ in range(int(line.split()[1]))]
    line = reader.next("vocab count")
    if not line.startswith("vocab "):
        reader.fail("expected vocab count")
    tokens = [reader.next("vocab token") for _ in range(int(line.split()[1]))]

    arrays: dict[str, np.ndarray] = {}
    while reader.pos < len(reader.lines):
        if not reader.lines[reader.pos].strip():
            reader.pos += 1
            continue
        name, arr = _read_array(reader)
        arrays[name] = arr

    def take(name: str) -> np.ndarray:
        if name not in arrays:
            raise CheckpointError(f"{path}: missing array {name!r}")
        return arrays.pop(name)

    try:
        vocab = Vocabulary(tokens=tokens)
        embeddings = EmbeddingTable(dim=config.emb_dim, vectors=take("embeddings"))
        sentence = SentenceEncoderParams(
            widths=config.widths, maps=config.maps,
            filters=[take(f"conv.w{w}") for w in config.widths],
            biases=[take(f"conv.b{w}") for w in config.widths],
        )
        context = None
        if config.context_mode == "lstm":
            context = ContextEncoderParams(Wx=take("lstm.Wx"), Wh=take("lstm.Wh"),
                                           b=take("lstm.b"))
        combiner = CombinerParams(W_conv=take("combiner.W_conv"),
                                  W_LSTM=take("combiner.W_LSTM"))
        heads = [HeadWeights(name=n, W=take(f"head.{n}.W"), b=take(f"head.{n}.b"))
                 for n in head_names]
        model = DecoderModel(vocab=vocab, embeddings=embeddings, sentence=sentence,
                             context=context, combiner=combiner, heads=heads,
                             config=config)
        model.validate()
    except CheckpointError:
        raise
    except Exception as e:
        raise CheckpointError(f"{path}: inconsistent checkpoint ({e})") from e
    if arrays:
        raise CheckpointError(f"{path}: unexpected arrays {sorted(arrays)}")
    return model


def save_hidden(records, hidden_dim: int, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(_HIDDEN_MAGIC + "\n")
        f.write(f"hidden_dim {hidden_dim}\n")
        for turn_id, h in records:
            if h.shape != (hidden_dim,):
                raise ShapeError(f"turn {turn_id!r}: h shape {h.shape}")
            f.write(turn_id + " " + " ".join(repr(float(v)) for v in h) + "\n")


def load_hidden(path) -> tuple[int, list[tuple[str, np.ndarray]]]:
    reader = _LineReader(path)
    if reader.next("magic") != _HIDDEN_MAGIC:
        reader.fail(f"not a {_HIDDEN_MAGIC!r} file")
    dim_line = reader.next("hidden_dim").split()
    if len(dim_line) != 2 or dim_line[0] != "hidden_dim":
        reader.fail("expected hidden_dim header")
    dim = int(dim_line[1])
    records = []
    while reader.pos < len(reader.lines):
        line = reader.next("record")
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != dim + 1:
            reader.fail(f"record has {len(parts) - 1} values, expected {dim}")
        try:
            records.append((parts[0], np.array([float(v) for v in parts[1:]])))
        except ValueError as e:
            reader.fail(str(e))
    return dim, records
