"""Metric oracle tests (hand-computed confusion arithmetic), prediction
tie-break/invariance tests, and structural tests of the benchmark harness
on a small corpus."""

import csv
import io
from fractions import Fraction

import numpy as np
import pytest

from rmtune.corpus import (
    Corpus,
    HeadSpec,
    SynthConfig,
    Turn,
    build_vocab,
    generate_synthetic,
    synth_embedding_vectors,
    table_from_vectors,
)
from rmtune.errors import EvaluationError
from rmtune.evaluation import (
    BenchmarkConfig,
    BenchmarkResult,
    ConfusionCounts,
    HeadReport,
    confusion_counts,
    default_benchmark_settings,
    macro_f,
    margin_gaussianity,
    predict,
    run_benchmark,
)
from rmtune.heads import HeadWeights, ModelConfig, TrainConfig, init_model
from rmtune.tuner import TuneConfig


class TestMacroF:
    def test_perfect_predictions(self):
        report = macro_f(ConfusionCounts(tp=5, fp=0, fn=0, tn=20))
        assert report.macro_f == 1.0
        assert report.f_pos == 1.0 and report.f_neg == 1.0

    def test_hand_computed_example(self):
        report = macro_f(ConfusionCounts(tp=3, fp=2, fn=1, tn=94))
        f_pos = Fraction(2, 3)
        f_neg = Fraction(188, 191)
        assert abs(report.f_pos - float(f_pos)) < 1e-12
        assert abs(report.f_neg - float(f_neg)) < 1e-12
        assert abs(report.macro_f - float((f_pos + f_neg) / 2)) < 1e-12
        assert abs(report.macro_f - 0.8255) < 5e-5

    def test_all_negative_predictor_on_one_percent_positives(self):
        report = macro_f(ConfusionCounts(tp=0, fp=0, fn=10, tn=990))
        assert report.f_pos == 0.0
        assert abs(report.f_neg - 1980 / 1990) < 1e-12
        assert abs(report.macro_f - 0.4975) < 5e-5

    def test_zero_over_zero_conventions(self):
        # Nothing predicted or actually positive: all positive-class
        # metrics collapse to zero, the negative class is perfect.
        report = macro_f(ConfusionCounts(tp=0, fp=0, fn=0, tn=10))
        assert report.precision_pos == 0.0
        assert report.recall_pos == 0.0
        assert report.f_pos == 0.0
        assert report.f_neg == 1.0
        assert report.macro_f == 0.5

    def test_empty_table_rejected(self):
        with pytest.raises(EvaluationError, match="empty"):
            macro_f(ConfusionCounts(tp=0, fp=0, fn=0, tn=0))

    def test_negative_counts_rejected(self):
        with pytest.raises(EvaluationError):
            ConfusionCounts(tp=-1, fp=0, fn=0, tn=1)

    def test_class_swap_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            tp, fp, fn, tn = rng.integers(0, 40, size=4)
            if tp + fp + fn + tn == 0:
                continue
            counts = ConfusionCounts(int(tp), int(fp), int(fn), int(tn))
            a = macro_f(counts)
            b = macro_f(counts.swapped())
            assert a.f_pos == b.f_neg
            assert a.f_neg == b.f_pos
            assert a.macro_f == b.macro_f

    def test_metrics_within_unit_interval(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            tp, fp, fn, tn = (int(x) for x in rng.integers(0, 25, size=4))
            if tp + fp + fn + tn == 0:
                continue
            r = macro_f(ConfusionCounts(tp, fp, fn, tn))
            for value in (r.precision_pos, r.recall_pos, r.f_pos,
                          r.precision_neg, r.recall_neg, r.f_neg, r.macro_f):
                assert 0.0 <= value <= 1.0
            assert r.macro_f == 0.5 * (r.f_pos + r.f_neg)


class TestConfusionCounts:
    def test_matches_manual_tally(self):
        rng = np.random.default_rng(2)
        pred = rng.random(200) > 0.5
        act = rng.random(200) > 0.7
        counts = confusion_counts(pred, act)
        assert counts.tp == sum(p and a for p, a in zip(pred, act))
        assert counts.fp == sum(p and not a for p, a in zip(pred, act))
        assert counts.fn == sum(not p and a for p, a in zip(pred, act))
        assert counts.tn == sum(not p and not a for p, a in zip(pred, act))
        assert counts.total == 200

    def test_shape_mismatch_rejected(self):
        with pytest.raises(EvaluationError, match="shape"):
            confusion_counts(np.ones(3, bool), np.ones(4, bool))


class TestMarginGaussianity:
    def test_reads_the_positive_class(self):
        # Gaussian positives with a blatantly skewed negative bulk: the
        # verdict tracks the positive component, not the catch-all rest.
        rng = np.random.default_rng(10)
        margins = np.concatenate([rng.lognormal(size=800) - 5.0,
                                  rng.normal(loc=3.0, size=200)])
        labels = np.arange(margins.size) >= 800
        assert margin_gaussianity(margins, labels) == "plausible"

    def test_skewed_positives_flagged(self):
        rng = np.random.default_rng(11)
        margins = np.concatenate([rng.normal(loc=-4.0, size=800),
                                  5.0 - rng.lognormal(size=200)])
        labels = np.arange(margins.size) >= 800
        assert margin_gaussianity(margins, labels) == "skewed"

    def test_pooled_fallback_below_min_n(self):
        rng = np.random.default_rng(12)
        gaussian = rng.normal(size=1000)
        labels = np.arange(1000) >= 990  # 10 positives: too few to isolate
        assert margin_gaussianity(gaussian, labels) == "plausible"
        lopsided = rng.lognormal(size=1000)
        assert margin_gaussianity(lopsided, labels) == "skewed"

    def test_shape_mismatch_rejected(self):
        with pytest.raises(EvaluationError, match="shape"):
            margin_gaussianity(np.zeros(5), np.zeros(6, dtype=bool))


def small_benchmark_corpus(seed=0):
    heads = [
        HeadSpec("freq", 15, 30, cue_count=4, train_cue_count=4),
        HeadSpec("rare", 2, 50, cue_count=4, train_cue_count=1),
        HeadSpec("zs", 0, 5, cue_count=2, train_cue_count=1, partner="freq",
                 family_rho=0.5),
    ]
    config = SynthConfig(heads=heads, train_size=60, test_size=150,
                         vocab_size=100, embedding_dim=16, seed=seed)
    train_c, test_c = generate_synthetic(config)
    vocab = build_vocab([train_c, test_c])
    table = table_from_vectors(synth_embedding_vectors(config), vocab, 16,
                               seed=1)
    return train_c, test_c, vocab, table


SMALL_MODEL = ModelConfig(emb_dim=16, widths=(2, 3), maps=8, ctxt_dim=8,
                          hidden_dim=16, window=4)


class TestPredict:
    def test_zero_margins_break_ties_negative(self):
        train_c, _, vocab, table = small_benchmark_corpus()
        model = init_model(vocab, table, train_c.heads, SMALL_MODEL, seed=0)
        for head in model.heads:
            head.W[:] = 0.0
        labels = predict(model, train_c)
        for name in train_c.heads:
            assert not labels[name].any()

    def test_strong_positive_margins_predict_positive(self):
        head = HeadWeights("a", W=np.zeros((2, 4)), b=np.array([0.0, 10.0]))
        H = np.random.default_rng(0).normal(size=(20, 4))
        assert predict(head, H).all()

    def test_row_shift_leaves_predictions_unchanged(self):
        rng = np.random.default_rng(3)
        W = rng.normal(size=(2, 6))
        H = rng.normal(size=(40, 6))
        base = predict(HeadWeights("a", W=W, b=np.zeros(2)), H)
        shifted = predict(
            HeadWeights("a", W=W + rng.normal(size=6), b=np.zeros(2)), H)
        np.testing.assert_array_equal(base, shifted)

    def test_positive_scaling_leaves_predictions_unchanged(self):
        rng = np.random.default_rng(4)
        W = np.vstack([np.zeros(5), rng.normal(size=5)])
        H = rng.normal(size=(60, 5))
        base = predict(HeadWeights("a", W=W, b=np.zeros(2)), H)
        scaled = predict(HeadWeights("a", W=7.5 * W, b=np.zeros(2)), H)
        np.testing.assert_array_equal(base, scaled)

    def test_model_path_matches_probability_threshold(self):
        from rmtune.heads import predict_probs
        train_c, _, vocab, table = small_benchmark_corpus()
        model = init_model(vocab, table, train_c.heads, SMALL_MODEL, seed=5)
        labels = predict(model, train_c)
        probs = predict_probs(model, train_c)
        for name in train_c.heads:
            np.testing.assert_array_equal(labels[name],
                                          probs[name][:, 1] > 0.5)

    def test_dimension_mismatch_rejected(self):
        head = HeadWeights("a", W=np.zeros((2, 4)), b=np.zeros(2))
        with pytest.raises(EvaluationError, match="hidden"):
            predict(head, np.zeros((10, 3)))

    def test_unknown_model_type_rejected(self):
        with pytest.raises(EvaluationError, match="cannot predict"):
            predict(object(), np.zeros((10, 3)))


def small_benchmark_config(seeds=(0, 1)):
    return BenchmarkConfig(
        model=SMALL_MODEL,
        training=TrainConfig(epochs=3, batch_size=10, dropout=0.2),
        tuning=TuneConfig(max_iters=2),
        seeds=seeds,
        rare_threshold=10,
    )


class TestBenchmarkConfig:
    def test_empty_seeds_rejected(self):
        with pytest.raises(EvaluationError, match="seed"):
            small_benchmark_config(seeds=())

    def test_bad_prior_source_rejected(self):
        with pytest.raises(EvaluationError, match="prior_source"):
            BenchmarkConfig(model=SMALL_MODEL,
                            training=TrainConfig(),
                            prior_source="oracle")

    def test_default_settings_are_valid(self):
        settings = default_benchmark_settings()
        settings.model.validate()
        settings.training.validate()
        assert len(settings.seeds) == 5
        assert settings.prior_source == "test-rate"


@pytest.fixture(scope="module")
def result():
    train_c, test_c, vocab, table = small_benchmark_corpus()
    return run_benchmark(train_c, test_c, vocab, table,
                         small_benchmark_config())


class TestRunBenchmark:
    def test_row_cardinality(self, result):
        # 2 reported heads (rare, zs; freq has 15 > 10 positives) x 3
        # conditions x (2 seed rows + 1 mean row).
        assert result.heads() == ["rare", "zs"]
        assert len(result.rows) == 2 * 3 * 3
        for head in result.heads():
            for condition in ("independent", "joint", "joint+rm"):
                assert len(result.seed_rows(head, condition)) == 2

    def test_mean_rows_average_seed_rows(self, result):
        for head in result.heads():
            for condition in ("independent", "joint", "joint+rm"):
                mean_row = [r for r in result.rows
                            if r.head == head and r.condition == condition
                            and r.seed is None]
                assert len(mean_row) == 1
                expected = np.mean(result.macro_fs(head, condition))
                assert abs(mean_row[0].macro_f - expected) < 1e-15

    def test_verdicts_are_recognized(self, result):
        allowed = {"plausible", "skewed", "heavy-tailed"}
        for row in result.rows:
            if row.seed is not None:
                assert row.verdict in allowed
            else:
                assert row.verdict in allowed | {"mixed"}

    def test_traces_recorded_and_monotone(self, result):
        for head in result.heads():
            for seed in (0, 1):
                trace = result.traces[(head, seed)]
                for r in trace.records:
                    assert r.risk_after <= r.risk_before

    def test_deterministic(self, result):
        train_c, test_c, vocab, table = small_benchmark_corpus()
        again = run_benchmark(train_c, test_c, vocab, table,
                              small_benchmark_config())
        assert again.to_csv() == result.to_csv()

    def test_csv_shape(self, result):
        rows = list(csv.reader(io.StringIO(result.to_csv())))
        assert rows[0] == ["head", "condition", "seed", "precision_pos",
                           "recall_pos", "f_pos", "f_neg", "macro_f",
                           "gaussianity_verdict"]
        assert len(rows) == 1 + len(result.rows)
        # Full-precision floats round-trip through the CSV.
        first = result.rows[0]
        assert float(rows[1][7]) == first.macro_f

    def test_text_table_alignment(self, result):
        table = result.format_table()
        lines = table.splitlines()
        assert len(lines) == 2 + len(result.rows)
        assert lines[0].startswith("head")
        assert len({len(line) for line in lines[:2]}) == 1

    def test_mismatched_heads_rejected(self):
        train_c, test_c, vocab, table = small_benchmark_corpus()
        chopped = Corpus(turns=test_c.turns,
                         heads=[h for h in test_c.heads if h != "zs"],
                         split=test_c.split)
        with pytest.raises(EvaluationError, match="heads"):
            run_benchmark(train_c, chopped, vocab, table,
                          small_benchmark_config())

    def test_no_rare_heads_rejected(self):
        turns = [
            Turn(id=f"t{i}", nbest=[(["hello", "there"], 1.0)],
                 context_acts=[], labels={"busy": i % 2 == 0})
            for i in range(12)
        ]
        corpus = Corpus(turns=turns, heads=["busy"], split="train")
        vocab = build_vocab([corpus])
        table = table_from_vectors({}, vocab, 16, seed=0)
        config = BenchmarkConfig(model=SMALL_MODEL, training=TrainConfig(),
                                 rare_threshold=0)
        with pytest.raises(EvaluationError, match="nothing to report"):
            run_benchmark(corpus, corpus, vocab, table, config)
