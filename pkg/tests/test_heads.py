"""Tests for the multi-head softmax decoder: forward, loss, training,
hidden export, gradient verification, checkpoints."""

import math

import numpy as np
import pytest

from rmtune.corpus import (
    HeadSpec,
    SynthConfig,
    build_vocab,
    generate_synthetic,
    synth_embedding_vectors,
    table_from_vectors,
)
from rmtune.errors import CheckpointError, DivergenceError, InputError
from rmtune.heads import (
    DecoderModel,
    HeadWeights,
    ModelConfig,
    TrainConfig,
    _label_matrix,
    _train_single,
    gradient_check,
    head_forward,
    init_model,
    export_hidden,
    joint_loss,
    load_checkpoint,
    load_hidden,
    predict_probs,
    save_checkpoint,
    save_hidden,
    train,
)

SMALL_MODEL = ModelConfig(emb_dim=16, widths=(2, 3), maps=8, ctxt_dim=8,
                          hidden_dim=16, window=4)


def tiny_corpus(seed=0):
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
    table = table_from_vectors(synth_embedding_vectors(config), vocab, 16, seed=1)
    return train_c, test_c, vocab, table


class TestHeadForward:
    def test_zero_weights_give_even_split(self):
        head = HeadWeights("a", W=np.zeros((2, 4)), b=np.zeros(2))
        assert head_forward(np.ones(4), head) == (0.5, 0.5)

    def test_log3_margin_gives_three_quarters(self):
        W = np.zeros((2, 4))
        W[1, 0] = math.log(3.0)
        head = HeadWeights("a", W=W, b=np.zeros(2))
        p0, p1 = head_forward(np.array([1.0, 0, 0, 0]), head)
        assert abs(p0 - 0.25) < 1e-12 and abs(p1 - 0.75) < 1e-12

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            W = rng.normal(size=(2, 6))
            h = rng.normal(size=6)
            c = rng.normal(size=6)
            base = head_forward(h, HeadWeights("a", W=W, b=np.zeros(2)))
            shifted = head_forward(h, HeadWeights("a", W=W + c, b=np.zeros(2)))
            assert abs(base[0] - shifted[0]) < 1e-12
            assert abs(base[1] - shifted[1]) < 1e-12

    def test_probabilities_positive_and_normalized(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            W = rng.normal(size=(2, 6)) * 10
            p0, p1 = head_forward(rng.normal(size=6), HeadWeights("a", W=W,
                                                                  b=np.zeros(2)))
            assert p0 > 0 and p1 > 0
            assert abs(p0 + p1 - 1.0) < 1e-12

    def test_non_finite_hidden_rejected(self):
        head = HeadWeights("a", W=np.zeros((2, 3)), b=np.zeros(2))
        with pytest.raises(InputError):
            head_forward(np.array([1.0, np.nan, 0.0]), head)


def zeroed(model: DecoderModel) -> DecoderModel:
    for arr in model.tensors().values():
        arr[:] = 0.0
    return model


class TestJointLoss:
    def test_all_zero_weights_cost_ln2_per_head(self):
        train_c, _, vocab, table = tiny_corpus()
        model = zeroed(init_model(vocab, table, train_c.heads, SMALL_MODEL))
        loss = joint_loss(model, train_c.turns)
        assert abs(loss - len(train_c.heads) * math.log(2.0)) < 1e-12

    def test_single_head_three_quarters_confidence(self):
        train_c, _, vocab, table = tiny_corpus()
        config = ModelConfig(emb_dim=16, widths=(2,), maps=4, ctxt_dim=4,
                             hidden_dim=8, window=0, use_head_bias=True)
        model = zeroed(init_model(vocab, table, ["freq"], config))
        # h = 0, so logits = bias; set P(label) = 0.75 for a negative turn
        model.head("freq").b[:] = [math.log(3.0), 0.0]
        turn = next(t for t in train_c.turns if not t.label("freq"))
        assert abs(joint_loss(model, [turn]) - (-math.log(0.75))) < 1e-12

    def test_confident_correct_model_has_vanishing_loss(self):
        train_c, _, vocab, table = tiny_corpus()
        config = ModelConfig(emb_dim=16, widths=(2,), maps=4, ctxt_dim=4,
                             hidden_dim=8, window=0, use_head_bias=True)
        model = zeroed(init_model(vocab, table, ["freq"], config))
        model.head("freq").b[:] = [50.0, 0.0]
        negatives = [t for t in train_c.turns if not t.label("freq")]
        assert joint_loss(model, negatives) < 1e-6

    def test_matches_mean_of_singleton_losses(self):
        train_c, _, vocab, table = tiny_corpus()
        model = init_model(vocab, table, train_c.heads, SMALL_MODEL, seed=3)
        turns = train_c.turns[:20]
        whole = joint_loss(model, turns)
        singles = [joint_loss(model, [t]) for t in turns]
        assert abs(whole - np.mean(singles)) < 1e-10


class TestTraining:
    def test_frequent_head_separates_training_data(self):
        train_c, _, vocab, table = tiny_corpus()
        config = TrainConfig(epochs=40, batch_size=5, dropout=0.2, seed=0)
        model = train(train_c, vocab, table, SMALL_MODEL, config)
        probs = predict_probs(model, train_c)["freq"][:, 1]
        want = np.array([t.label("freq") for t in train_c.turns])
        assert np.array_equal(probs > 0.5, want)

    def test_loss_decreases_over_first_five_epochs(self):
        train_c, _, vocab, table = tiny_corpus()
        for seed in (0, 1):
            history = {}
            train(train_c, vocab, table, SMALL_MODEL,
                  TrainConfig(epochs=5, batch_size=5, dropout=0.0, seed=seed),
                  history=history)
            losses = history["joint"]
            assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_zero_epochs_returns_initialization(self):
        train_c, _, vocab, table = tiny_corpus()
        model = train(train_c, vocab, table, SMALL_MODEL,
                      TrainConfig(epochs=0, seed=7))
        fresh = init_model(vocab, table, train_c.heads, SMALL_MODEL, seed=7)
        for name, arr in model.tensors().items():
            np.testing.assert_array_equal(arr, fresh.tensors()[name])

    def test_same_seed_gives_identical_checkpoints(self, tmp_path):
        train_c, _, vocab, table = tiny_corpus()
        paths = []
        for i in range(2):
            model = train(train_c, vocab, table, SMALL_MODEL,
                          TrainConfig(epochs=3, batch_size=10, seed=11))
            p = tmp_path / f"run{i}.ckpt"
            save_checkpoint(model, p)
            paths.append(p)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_independent_mode_returns_one_model_per_head(self):
        train_c, _, vocab, table = tiny_corpus()
        models = train(train_c, vocab, table, SMALL_MODEL,
                       TrainConfig(epochs=2, batch_size=10, mode="independent"))
        assert set(models) == set(train_c.heads)
        for name, model in models.items():
            assert model.head_names == [name]

    def test_empty_corpus_rejected(self):
        train_c, _, vocab, table = tiny_corpus()
        empty = type(train_c)(turns=[], heads=train_c.heads, split="train")
        with pytest.raises(InputError):
            train(empty, vocab, table, SMALL_MODEL, TrainConfig(epochs=1))

    def test_divergence_is_reported_with_location(self):
        train_c, _, vocab, table = tiny_corpus()
        model = init_model(vocab, table, ["freq"], SMALL_MODEL, seed=0)
        # an extreme logit offset drives P(correct) to exact zero (underflow),
        # so the first batch already produces a non-finite loss
        model.head("freq").b[:] = [0.0, -800.0]
        labels = _label_matrix(train_c.turns, ["freq"])
        labels[:] = 1
        with pytest.raises(DivergenceError, match="epoch 0"):
            _train_single(model, train_c.turns, labels,
                          TrainConfig(epochs=1, batch_size=60, dropout=0.0),
                          seed_stream=0)


class TestExportHidden:
    def test_export_is_pure_and_bounded(self):
        train_c, _, vocab, table = tiny_corpus()
        model = init_model(vocab, table, train_c.heads, SMALL_MODEL, seed=5)
        a = export_hidden(model, train_c)
        b = export_hidden(model, train_c)
        assert [i for i, _ in a] == [t.id for t in train_c.turns]
        for (ida, ha), (idb, hb) in zip(a, b):
            assert ida == idb
            np.testing.assert_array_equal(ha, hb)
            assert np.max(np.abs(ha)) < 1.0

    def test_single_turn_export(self):
        train_c, _, vocab, table = tiny_corpus()
        solo = type(train_c)(turns=train_c.turns[:1], heads=train_c.heads,
                             split="train")
        model = init_model(vocab, table, train_c.heads, SMALL_MODEL)
        records = export_hidden(model, solo)
        assert len(records) == 1 and records[0][0] == train_c.turns[0].id

    def test_hidden_file_round_trip(self, tmp_path):
        train_c, _, vocab, table = tiny_corpus()
        model = init_model(vocab, table, train_c.heads, SMALL_MODEL)
        records = export_hidden(model, train_c)
        p = tmp_path / "hidden.txt"
        save_hidden(records, SMALL_MODEL.hidden_dim, p)
        dim, loaded = load_hidden(p)
        assert dim == SMALL_MODEL.hidden_dim
        assert len(loaded) == len(records)
        for (ida, ha), (idb, hb) in zip(records, loaded):
            assert ida == idb
            np.testing.assert_array_equal(ha, hb)

    def test_malformed_hidden_file_reports_line(self, tmp_path):
        p = tmp_path / "hidden.txt"
        p.write_text("hidden-export v1\nhidden_dim 3\nt-0 1.0 2.0\n")
        with pytest.raises(CheckpointError, match="line 3"):
            load_hidden(p)


class TestGradientCheck:
    def full_model(self):
        train_c, _, vocab, table = tiny_corpus()
        config = ModelConfig(emb_dim=16, widths=(2, 3), maps=4, ctxt_dim=5,
                             hidden_dim=8, window=4, use_head_bias=True,
                             train_embeddings=True)
        model = init_model(vocab, table, train_c.heads, config, seed=2)
        # scale weights up so gradients dwarf finite-difference noise
        for name, arr in model.tensors().items():
            if name != "embeddings":
                arr *= 8.0
        return model, train_c.turns[:8]

    def test_all_tensors_match_finite_differences(self):
        model, turns = self.full_model()
        report = gradient_check(model, turns, epsilon=1e-4,
                                coords_per_tensor=60, seed=0)
        expected = set(model.trainable_tensors())
        assert set(report) == expected
        for name, err in report.items():
            assert err < 1e-4, f"{name}: {err}"

    def test_mean_context_mode_gradients(self):
        train_c, _, vocab, table = tiny_corpus()
        config = ModelConfig(emb_dim=16, widths=(2,), maps=4, ctxt_dim=16,
                             hidden_dim=8, window=4, context_mode="mean",
                             train_embeddings=True)
        model = init_model(vocab, table, train_c.heads, config, seed=4)
        report = gradient_check(model, train_c.turns[:8], coords_per_tensor=40)
        for name, err in report.items():
            assert err < 1e-4, f"{name}: {err}"

    def test_zero_model_zero_gradients(self):
        train_c, _, vocab, table = tiny_corpus()
        model = zeroed(init_model(vocab, table, train_c.heads, SMALL_MODEL))
        report = gradient_check(model, train_c.turns[:5], coords_per_tensor=30)
        assert all(err == 0.0 for err in report.values())

    def test_single_linear_head_closed_form_gradient(self):
        # quadratic probe: with one head and one example the analytic
        # softmax cross-entropy gradient (p - onehot) x h must match both
        # the backward pass and central differences
        train_c, _, vocab, table = tiny_corpus()
        config = ModelConfig(emb_dim=16, widths=(2,), maps=4, ctxt_dim=4,
                             hidden_dim=8, window=0)
        model = init_model(vocab, table, ["freq"], config, seed=6)
        turn = train_c.turns[0]
        y = 1 if turn.label("freq") else 0

        records = export_hidden(model, type(train_c)(turns=[turn],
                                                     heads=train_c.heads,
                                                     split="train"))
        h = records[0][1]
        head = model.head("freq")
        p = np.array(head_forward(h, head))
        onehot = np.eye(2)[y]
        closed_form = np.outer(p - onehot, h)

        eps = 1e-4
        W = head.W
        numeric = np.zeros_like(W)
        for i in range(2):
            for j in range(W.shape[1]):
                orig = W[i, j]
                W[i, j] = orig + eps
                up = joint_loss(model, [turn])
                W[i, j] = orig - eps
                down = joint_loss(model, [turn])
                W[i, j] = orig
                numeric[i, j] = (up - down) / (2 * eps)
        np.testing.assert_allclose(closed_form, numeric, atol=1e-8)

    def test_epsilon_bounds_enforced(self):
        model, turns = self.full_model()
        with pytest.raises(InputError):
            gradient_check(model, turns, epsilon=1e-2)


class TestCheckpoint:
    def test_round_trip_is_exact_and_stable(self, tmp_path):
        train_c, _, vocab, table = tiny_corpus()
        model = train(train_c, vocab, table, SMALL_MODEL,
                      TrainConfig(epochs=2, batch_size=20, seed=1))
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(model, p1)
        loaded = load_checkpoint(p1)
        assert loaded.config == model.config
        assert loaded.vocab == model.vocab
        assert loaded.head_names == model.head_names
        for name, arr in model.tensors().items():
            np.testing.assert_array_equal(arr, loaded.tensors()[name])
        save_checkpoint(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_wrong_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.ckpt"
        p.write_text("something else\n")
        with pytest.raises(CheckpointError, match="line 1"):
            load_checkpoint(p)

    def test_truncated_file_reports_context(self, tmp_path):
        train_c, _, vocab, table = tiny_corpus()
        model = init_model(vocab, table, train_c.heads, SMALL_MODEL)
        p = tmp_path / "model.ckpt"
        save_checkpoint(model, p)
        lines = p.read_text().splitlines()
        (tmp_path / "cut.ckpt").write_text("\n".join(lines[:-10]) + "\n")
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "cut.ckpt")

    def test_bad_row_width_names_the_array(self, tmp_path):
        train_c, _, vocab, table = tiny_corpus()
        model = init_model(vocab, table, train_c.heads, SMALL_MODEL)
        p = tmp_path / "model.ckpt"
        save_checkpoint(model, p)
        text = p.read_text().splitlines()
        target = next(i for i, line in enumerate(text)
                      if line.startswith("array combiner.W_conv"))
        text[target + 1] = "1.0 2.0"
        (tmp_path / "bad.ckpt").write_text("\n".join(text) + "\n")
        with pytest.raises(CheckpointError, match="combiner.W_conv"):
            load_checkpoint(tmp_path / "bad.ckpt")
