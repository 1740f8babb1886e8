"""Corpus data model, synthetic corpus generation, and artifact file formats.

A corpus is a list of turns; each turn carries an N-best list of token
sequences with confidences, a window of prior system acts, and binary
labels per head. The synthetic generator reproduces the label-scarcity
regime of the target task: a few frequent heads with plenty of positives
next to nearly-zero-shot heads (1-4 train positives) and pure zero-shot
heads (0 train positives), with cue vocabulary that is partly unseen in
training so detection has to transfer through embedding geometry.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, CorpusFormatError, InvariantError

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1

# Shared function-word inventory; the slot cue always follows FW_SLOT so
# every head's positives share surface structure.
_NUM_FUNCTION_WORDS = 12
_FW_SLOT = "fw00"
_ACT_TOKENS = ("a_req", "a_conf", "a_inf", "a_hello")


@dataclass
class Turn:
    """One utterance: N-best hypotheses, context acts, per-head labels."""

    id: str
    nbest: list[tuple[list[str], float]]
    context_acts: list[list[str]]
    labels: dict[str, bool]

    def validate(self) -> None:
        if not self.nbest:
            raise InvariantError(f"turn {self.id!r}: empty nbest")
        prev = None
        for text, score in self.nbest:
            if not (math.isfinite(score) and 0.0 <= score <= 1.0):
                raise InvariantError(
                    f"turn {self.id!r}: confidence {score!r} outside [0, 1]"
                )
            if prev is not None and score > prev:
                raise InvariantError(
                    f"turn {self.id!r}: nbest not sorted by non-increasing confidence"
                )
            prev = score

    def label(self, head: str) -> bool:
        """Absent labels mean the slot is absent (negative)."""
        return bool(self.labels.get(head, False))


@dataclass
class Corpus:
    turns: list[Turn]
    heads: list[str]
    split: str  # "train" or "test"

    def validate(self) -> None:
        if self.split not in ("train", "test"):
            raise InvariantError(f"split must be train or test, got {self.split!r}")
        if len(set(self.heads)) != len(self.heads):
            raise InvariantError("duplicate head names in corpus header")
        head_set = set(self.heads)
        seen_ids = set()
        for turn in self.turns:
            if turn.id in seen_ids:
                raise InvariantError(f"duplicate turn id {turn.id!r}")
            seen_ids.add(turn.id)
            turn.validate()
            unknown = set(turn.labels) - head_set
            if unknown:
                raise InvariantError(
                    f"turn {turn.id!r}: labels reference unknown heads {sorted(unknown)}"
                )

    def positive_count(self, head: str) -> int:
        return sum(1 for t in self.turns if t.label(head))


@dataclass
class Vocabulary:
    """Token list with fixed padding (index 0) and unknown (index 1) entries."""

    tokens: list[str]
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.tokens) < 2 or self.tokens[0] != PAD_TOKEN or self.tokens[1] != UNK_TOKEN:
            raise InvariantError("vocabulary must start with <pad>, <unk>")
        self._index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise InvariantError("vocabulary tokens are not distinct")

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def index(self, token: str) -> int:
        return self._index.get(token, UNK_INDEX)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self._index.get(t, UNK_INDEX) for t in tokens]


@dataclass
class EmbeddingTable:
    """One vector of length `dim` per vocabulary entry; padding row is zero."""

    dim: int
    vectors: np.ndarray  # (vocab, dim)

    def validate(self) -> None:
        if self.vectors.ndim != 2 or self.vectors.shape[1] != self.dim:
            raise InvariantError(
                f"embedding matrix shape {self.vectors.shape} does not match dim {self.dim}"
            )
        if not np.all(np.isfinite(self.vectors)):
            raise InvariantError("embedding matrix contains non-finite entries")


@dataclass
class HeadSpec:
    """Per-head generator settings.

    `train_cue_count` of the head's `cue_count` cue tokens may appear in
    training positives; test positives draw from the held-out remainder
    (the full set when nothing is held out), so rare heads are tested on
    unseen-but-related cue tokens.
    `partner` anchors this head's embedding family near another head's
    (`family_rho` = cosine between the two family centers). `cue_scale`
    overrides the corpus-wide cue embedding norm for this head, controlling
    how separable its positives are. `skew_margins` forces a skewed margin
    distribution for this head: a fraction of its test positives are voiced
    with weak cue tokens (a low-margin left tail in the positive class) and
    negative turns carry weak cue material at an asymmetric rate.
    """

    name: str
    train_positives: int
    test_positives: int
    cue_count: int = 4
    train_cue_count: int = 2
    partner: str | None = None
    family_rho: float = 0.7
    cue_scale: float | None = None
    skew_margins: bool = False

    def validate(self) -> None:
        if self.train_positives < 0 or self.test_positives < 0:
            raise ConfigurationError(f"head {self.name!r}: negative positive counts")
        if not (1 <= self.train_cue_count <= self.cue_count):
            raise ConfigurationError(f"head {self.name!r}: train_cue_count out of range")
        if self.cue_scale is not None and self.cue_scale <= 0:
            raise ConfigurationError(f"head {self.name!r}: cue_scale must be positive")


@dataclass
class SynthConfig:
    heads: list[HeadSpec]
    train_size: int = 600
    test_size: int = 2000
    vocab_size: int = 260
    nbest_size: int = 3
    corruption_rate: float = 0.12
    confidence_decay: float = 0.8
    sentence_len: tuple[int, int] = (6, 10)
    max_context_acts: int = 5
    act_hint_rate: float = 0.25
    second_cue_rate: float = 0.2
    embedding_dim: int = 24
    cue_scale: float = 1.0
    family_noise: float = 0.25
    weak_cue_scale: float = 0.45
    distractor_scale: float = 0.6
    seed: int = 0

    def validate(self) -> None:
        names = [h.name for h in self.heads]
        if len(set(names)) != len(names):
            raise ConfigurationError("duplicate head names in SynthConfig")
        for h in self.heads:
            h.validate()
            if h.partner is not None and h.partner not in names:
                raise ConfigurationError(f"head {h.name!r}: unknown partner {h.partner!r}")
        if not any(h.train_positives <= 4 and h.test_positives >= 50 for h in self.heads):
            raise ConfigurationError(
                "config needs at least one nearly-zero-shot head "
                "(train positives <= 4, test positives >= 50)"
            )
        if not any(h.train_positives == 0 and h.test_positives > 0 for h in self.heads):
            raise ConfigurationError(
                "config needs at least one zero-shot head (0 train positives)"
            )
        if not 0.0 <= self.corruption_rate <= 1.0:
            raise ConfigurationError("corruption_rate must be in [0, 1]")
        if not 0.0 < self.confidence_decay <= 1.0:
            raise ConfigurationError("confidence_decay must be in (0, 1]")
        if sum(h.train_positives for h in self.heads) > self.train_size:
            raise ConfigurationError("train positives exceed train_size")
        if sum(h.test_positives for h in self.heads) > self.test_size:
            raise ConfigurationError("test positives exceed test_size")
        inv = _token_inventory(self)
        if len(inv.distractors) < 20:
            raise ConfigurationError(
                f"vocab_size {self.vocab_size} too small to allocate distinct cue "
                f"tokens per head plus a distractor pool"
            )


def default_benchmark_config(seed: int = 0) -> SynthConfig:
    """Desk-scale benchmark corpus: two frequent heads, four nearly-zero-shot
    heads at the reference 1/2/3/4 train-positive counts, one skew-forced
    head, and one zero-shot head whose cues live inside a frequent family.

    The geometry (loud tight cue clusters, low family/identity coupling for
    the sparsest heads, per-head cue norms) is calibrated so that a small
    jointly trained decoder separates the rare heads while their
    class-conditional margin scores stay in moment-test range.
    """
    heads = [
        HeadSpec("food", 160, 320, cue_count=8, train_cue_count=8, partner=None),
        HeadSpec("type", 140, 280, cue_count=8, train_cue_count=8, partner=None),
        HeadSpec("hastv", 1, 60, cue_count=4, train_cue_count=1,
                 partner="food", family_rho=0.3),
        HeadSpec("childrenallowed", 2, 30, cue_count=4, train_cue_count=1,
                 partner="type", family_rho=0.3),
        HeadSpec("near", 3, 19, cue_count=4, train_cue_count=2,
                 partner="food", family_rho=0.5),
        HeadSpec("hasinternet", 4, 54, cue_count=4, train_cue_count=2,
                 partner="type", family_rho=0.3, cue_scale=2.0),
        HeadSpec("area", 8, 60, cue_count=4, train_cue_count=2, partner="type",
                 skew_margins=True),
        HeadSpec("food_american", 0, 25, cue_count=3, train_cue_count=1,
                 partner="food", family_rho=1.0),
    ]
    return SynthConfig(heads=heads, seed=seed, cue_scale=3.0, family_noise=0.2,
                       act_hint_rate=0.9, second_cue_rate=1.0,
                       sentence_len=(6, 8))


@dataclass
class _Inventory:
    function_words: list[str]
    cues: dict[str, list[str]]
    weak_cues: dict[str, list[str]]
    act_markers: dict[str, str]
    distractors: list[str]


def _token_inventory(config: SynthConfig) -> _Inventory:
    function_words = [f"fw{i:02d}" for i in range(_NUM_FUNCTION_WORDS)]
    cues = {h.name: [f"{h.name}~c{j}" for j in range(h.cue_count)] for h in config.heads}
    weak_cues = {
        h.name: [f"{h.name}~w{j}" for j in range(3)]
        for h in config.heads
        if h.skew_margins
    }
    act_markers = {h.name: f"{h.name}~a" for h in config.heads}
    used = (
        len(function_words)
        + len(_ACT_TOKENS)
        + sum(len(v) for v in cues.values())
        + sum(len(v) for v in weak_cues.values())
        + len(act_markers)
    )
    n_distract = config.vocab_size - used
    distractors = [f"d{i:04d}" for i in range(max(n_distract, 0))]
    return _Inventory(function_words, cues, weak_cues, act_markers, distractors)


def _make_sentence(rng, inv: _Inventory, config: SynthConfig,
                   pos_head: str | None, train: bool,
                   skew_heads: list[str]) -> list[str]:
    lo, hi = config.sentence_len
    length = int(rng.integers(lo, hi + 1))
    tokens = []
    for _ in range(length):
        if rng.random() < 0.35:
            tokens.append(inv.function_words[int(rng.integers(1, len(inv.function_words)))])
        else:
            tokens.append(inv.distractors[int(rng.integers(0, len(inv.distractors)))])
    if pos_head is not None:
        spec = next(h for h in config.heads if h.name == pos_head)
        if train:
            pool = inv.cues[pos_head][: spec.train_cue_count]
        else:
            # Test positives use the held-out cue tokens when any exist, so
            # sparsely supervised heads are evaluated on related-but-unseen
            # vocabulary rather than on their few training cues.
            pool = inv.cues[pos_head][spec.train_cue_count:] or inv.cues[pos_head]
            if spec.skew_margins and rng.random() < 0.1:
                # A skew-forced head voices a tenth of its test positives
                # with weak cue tokens: a small far-left subpopulation, so
                # its positive-class margins keep a pronounced left tail
                # (a larger fraction would read as bimodal, not skewed).
                pool = inv.weak_cues[pos_head]
        pos = int(rng.integers(1, length))
        tokens[pos - 1] = _FW_SLOT
        tokens[pos] = pool[int(rng.integers(0, len(pool)))]
        if rng.random() < config.second_cue_rate and length >= pos + 2:
            tokens[pos + 1] = pool[int(rng.integers(0, len(pool)))]
    else:
        # Negative turns of a skew-forced head carry weak cue tokens with an
        # asymmetric count distribution, skewing that head's margin scores.
        for name in skew_heads:
            u = rng.random()
            k = (0 if u < 0.50 else 1 if u < 0.75 else
                 2 if u < 0.88 else 3 if u < 0.96 else 4)
            for _ in range(k):
                weak = inv.weak_cues[name]
                tokens[int(rng.integers(0, length))] = weak[int(rng.integers(0, len(weak)))]
    return tokens


def _make_nbest(rng, reference: list[str], inv: _Inventory,
                config: SynthConfig) -> list[tuple[list[str], float]]:
    nbest = [(list(reference), 1.0)]
    for k in range(1, config.nbest_size):
        hyp = [
            inv.distractors[int(rng.integers(0, len(inv.distractors)))]
            if rng.random() < config.corruption_rate
            else tok
            for tok in reference
        ]
        nbest.append((hyp, float(config.confidence_decay ** k)))
    return nbest


def _make_context(rng, inv: _Inventory, config: SynthConfig,
                  pos_head: str | None) -> list[list[str]]:
    n_acts = int(rng.integers(0, config.max_context_acts + 1))
    acts = []
    for _ in range(n_acts):
        act_tok = _ACT_TOKENS[int(rng.integers(0, len(_ACT_TOKENS)))]
        filler = inv.function_words[int(rng.integers(0, len(inv.function_words)))]
        acts.append([act_tok, filler])
    if pos_head is not None and rng.random() < config.act_hint_rate:
        acts.append(["a_req", inv.act_markers[pos_head]])
    return acts


def _generate_split(rng, config: SynthConfig, inv: _Inventory, split: str) -> Corpus:
    train = split == "train"
    size = config.train_size if train else config.test_size
    assignments: list[str | None] = []
    for h in config.heads:
        assignments.extend([h.name] * (h.train_positives if train else h.test_positives))
    assignments.extend([None] * (size - len(assignments)))
    rng.shuffle(assignments)
    skew_heads = [h.name for h in config.heads if h.skew_margins]
    prefix = "tr" if train else "te"
    head_names = [h.name for h in config.heads]
    turns = []
    for i, pos_head in enumerate(assignments):
        reference = _make_sentence(rng, inv, config, pos_head, train, skew_heads)
        turns.append(Turn(
            id=f"{prefix}-{i:05d}",
            nbest=_make_nbest(rng, reference, inv, config),
            context_acts=_make_context(rng, inv, config, pos_head),
            labels={name: name == pos_head for name in head_names},
        ))
    corpus = Corpus(turns=turns, heads=list(head_names), split=split)
    corpus.validate()
    return corpus


def generate_synthetic(config: SynthConfig) -> tuple[Corpus, Corpus]:
    """Generate a (train, test) corpus pair; pure function of the config."""
    config.validate()
    inv = _token_inventory(config)
    rng = np.random.default_rng([config.seed, 0])
    train = _generate_split(rng, config, inv, "train")
    test = _generate_split(rng, config, inv, "test")
    return train, test


def synth_embedding_vectors(config: SynthConfig) -> dict[str, np.ndarray]:
    """Synthetic 'pretrained' vectors for the generator's token inventory.

    Cue tokens cluster around a per-head family center; partnered heads get
    centers correlated (cosine `family_rho`) with their partner's so that
    encoder features trained on frequent families respond to rare ones.
    Mirrors the role a pretrained embedding file plays for real data.
    """
    config.validate()
    inv = _token_inventory(config)
    rng = np.random.default_rng([config.seed, 1])
    dim = config.embedding_dim

    def unit(v):
        return v / np.linalg.norm(v)

    centers: dict[str, np.ndarray] = {}
    for h in config.heads:
        if h.partner is None:
            centers[h.name] = unit(rng.standard_normal(dim))
    for h in config.heads:
        if h.partner is not None:
            base = centers[h.partner]
            if h.family_rho >= 1.0:
                centers[h.name] = base
            else:
                fresh = rng.standard_normal(dim)
                fresh = unit(fresh - base * (fresh @ base))
                centers[h.name] = unit(h.family_rho * base
                                       + math.sqrt(1.0 - h.family_rho ** 2) * fresh)

    vectors: dict[str, np.ndarray] = {}
    for w in inv.function_words:
        vectors[w] = rng.standard_normal(dim) * 0.3
    for a in _ACT_TOKENS:
        vectors[a] = rng.standard_normal(dim) * 0.3
    for h in config.heads:
        scale = config.cue_scale if h.cue_scale is None else h.cue_scale
        c = centers[h.name] * scale
        for tok in inv.cues[h.name]:
            vectors[tok] = c + rng.standard_normal(dim) * config.family_noise
        for tok in inv.weak_cues.get(h.name, []):
            vectors[tok] = c * config.weak_cue_scale + rng.standard_normal(dim) * config.family_noise
        vectors[inv.act_markers[h.name]] = unit(rng.standard_normal(dim)) * 0.8
    for d in inv.distractors:
        vectors[d] = rng.standard_normal(dim) * config.distractor_scale
    return vectors


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def _reject_duplicate_keys(pairs):
    d = {}
    for k, v in pairs:
        if k in d:
            raise ValueError(f"duplicate key {k!r}")
        d[k] = v
    return d


def save_corpus(corpus: Corpus, path) -> None:
    """Line-delimited records: a header line, then one turn per line."""
    corpus.validate()
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"heads": corpus.heads, "split": corpus.split}) + "\n")
        for turn in corpus.turns:
            rec = {
                "id": turn.id,
                "nbest": [{"text": " ".join(text), "score": score}
                          for text, score in turn.nbest],
                "context_acts": [" ".join(act) for act in turn.context_acts],
                "labels": turn.labels,
            }
            f.write(json.dumps(rec) + "\n")


def load_corpus(path) -> Corpus:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise CorpusFormatError(f"{path}: empty corpus file")
    try:
        header = json.loads(lines[0], object_pairs_hook=_reject_duplicate_keys)
        heads = list(header["heads"])
        split = header["split"]
    except (ValueError, KeyError, TypeError) as e:
        raise CorpusFormatError(f"{path}: line 1: bad header ({e})") from e
    turns = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line, object_pairs_hook=_reject_duplicate_keys)
            turn = Turn(
                id=str(rec["id"]),
                nbest=[(str(h["text"]).split(), float(h["score"])) for h in rec["nbest"]],
                context_acts=[str(a).split() for a in rec["context_acts"]],
                labels={str(k): bool(v) for k, v in rec["labels"].items()},
            )
        except (ValueError, KeyError, TypeError) as e:
            raise CorpusFormatError(f"{path}: line {lineno}: malformed record ({e})") from e
        turns.append(turn)
    corpus = Corpus(turns=turns, heads=heads, split=split)
    corpus.validate()
    return corpus


def build_vocab(corpus, min_count: int = 1) -> Vocabulary:
    """Tokens occurring >= min_count times across nbest texts and context
    acts, ordered by descending count then lexicographically."""
    corpora = [corpus] if isinstance(corpus, Corpus) else list(corpus)
    counts: Counter = Counter()
    for c in corpora:
        for turn in c.turns:
            for text, _ in turn.nbest:
                counts.update(text)
            for act in turn.context_acts:
                counts.update(act)
    kept = sorted(
        (tok for tok, n in counts.items() if n >= min_count),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocabulary(tokens=[PAD_TOKEN, UNK_TOKEN] + kept)


def save_vocab(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(vocab.tokens) + "\n")


def load_vocab(path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as f:
        tokens = f.read().splitlines()
    return Vocabulary(tokens=tokens)


def save_embeddings(table: EmbeddingTable, vocab: Vocabulary, path) -> None:
    """One line per word: `word v1 v2 ... vdim` (repr round-trips exactly)."""
    table.validate()
    if len(vocab) != table.vectors.shape[0]:
        raise InvariantError("embedding table does not match vocabulary size")
    with open(path, "w", encoding="utf-8") as f:
        for tok, vec in zip(vocab.tokens, table.vectors):
            f.write(tok + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def save_embedding_file(vectors: dict[str, np.ndarray], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for tok, vec in vectors.items():
            f.write(tok + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def table_from_vectors(vectors: dict[str, np.ndarray], vocab: Vocabulary,
                       dim: int, seed: int = 0) -> EmbeddingTable:
    """EmbeddingTable for `vocab` from a token→vector map; same fallback
    rules as load_embeddings (zero padding row, seeded uniform for misses)."""
    rng = np.random.default_rng(seed)
    out = np.zeros((len(vocab), dim), dtype=np.float64)
    for i, tok in enumerate(vocab.tokens):
        if i == PAD_INDEX:
            continue
        vec = vectors.get(tok)
        if vec is not None:
            if np.shape(vec) != (dim,):
                raise InvariantError(f"vector for {tok!r} has shape {np.shape(vec)}")
            out[i] = vec
        else:
            out[i] = rng.uniform(-0.25, 0.25, size=dim)
    table = EmbeddingTable(dim=dim, vectors=out)
    table.validate()
    return table


def load_embeddings(path, vocab: Vocabulary, dim: int, seed: int = 0) -> EmbeddingTable:
    """In-file tokens get their file vectors; tokens missing from the file
    are sampled uniformly from [-0.25, 0.25]^dim; padding is the zero vector."""
    file_vecs: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            word, values = parts[0], parts[1:]
            if len(values) != dim:
                raise CorpusFormatError(
                    f"{path}: line {lineno}: word {word!r} has {len(values)} "
                    f"values, expected {dim}"
                )
            try:
                file_vecs[word] = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as e:
                raise CorpusFormatError(f"{path}: line {lineno}: {e}") from e
    rng = np.random.default_rng(seed)
    vectors = np.zeros((len(vocab), dim), dtype=np.float64)
    for i, tok in enumerate(vocab.tokens):
        if i == PAD_INDEX:
            continue
        if tok in file_vecs:
            vectors[i] = file_vecs[tok]
        else:
            vectors[i] = rng.uniform(-0.25, 0.25, size=dim)
    table = EmbeddingTable(dim=dim, vectors=vectors)
    table.validate()
    return table


def save_synth_config(config: SynthConfig, path) -> None:
    doc = {
        "train_size": config.train_size,
        "test_size": config.test_size,
        "vocab_size": config.vocab_size,
        "nbest_size": config.nbest_size,
        "corruption_rate": config.corruption_rate,
        "confidence_decay": config.confidence_decay,
        "sentence_len": list(config.sentence_len),
        "max_context_acts": config.max_context_acts,
        "act_hint_rate": config.act_hint_rate,
        "second_cue_rate": config.second_cue_rate,
        "embedding_dim": config.embedding_dim,
        "cue_scale": config.cue_scale,
        "family_noise": config.family_noise,
        "weak_cue_scale": config.weak_cue_scale,
        "distractor_scale": config.distractor_scale,
        "seed": config.seed,
        "heads": [
            {
                "name": h.name,
                "train_positives": h.train_positives,
                "test_positives": h.test_positives,
                "cue_count": h.cue_count,
                "train_cue_count": h.train_cue_count,
                "partner": h.partner,
                "family_rho": h.family_rho,
                "cue_scale": h.cue_scale,
                "skew_margins": h.skew_margins,
            }
            for h in config.heads
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def load_synth_config(path) -> SynthConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except ValueError as e:
            raise CorpusFormatError(f"{path}: {e}") from e
    try:
        heads = [HeadSpec(**h) for h in doc.pop("heads")]
        doc["sentence_len"] = tuple(doc.get("sentence_len", (6, 10)))
        config = SynthConfig(heads=heads, **doc)
    except (KeyError, TypeError) as e:
        raise CorpusFormatError(f"{path}: bad SynthConfig document ({e})") from e
    config.validate()
    return config


def with_seed(config: SynthConfig, seed: int) -> SynthConfig:
    return replace(config, seed=seed)
