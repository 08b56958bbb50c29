import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diseasevec.embedding import EmbeddingTable, SimilarityMetric, init_table
from diseasevec.errors import ConfigError, DatasetTooSmall, EmptyInput, NonFinite, NotSquare
from diseasevec.mnrl import (
    TrainConfig,
    backprop_batch,
    batch_loss,
    format_train_config,
    grad_check,
    mnrl_loss,
    mnrl_loss_grad,
    parse_train_config,
    sim_matrix,
    train,
)
from diseasevec.records import PairRecord
from diseasevec.synthetic import make_cluster_corpus
from diseasevec.vocab import Vocabulary, build_vocab


def fd_matrix_grad(S, scale, h=1e-5):
    """Independent central differences of mnrl_loss w.r.t. each S entry."""
    grad = np.zeros_like(S)
    for idx in np.ndindex(*S.shape):
        up, down = S.copy(), S.copy()
        up[idx] += h
        down[idx] -= h
        grad[idx] = (mnrl_loss(up, scale) - mnrl_loss(down, scale)) / (2 * h)
    return grad


def fd_table_grad(table, vocab, batch, config, h=1e-5):
    w = table.weights
    grad = np.zeros_like(w)
    for idx in np.ndindex(*w.shape):
        up, down = w.copy(), w.copy()
        up[idx] += h
        down[idx] -= h
        grad[idx] = (
            batch_loss(EmbeddingTable(up), vocab, batch, config)
            - batch_loss(EmbeddingTable(down), vocab, batch, config)
        ) / (2 * h)
    return grad


class TestLoss:
    @pytest.mark.parametrize("scale", [0.5, 1.0, 20.0])
    def test_uniform_is_ln2(self, scale):
        assert mnrl_loss(np.full((2, 2), 0.3), scale) == pytest.approx(math.log(2), abs=1e-9)

    def test_identity_scale_one(self):
        assert mnrl_loss(np.eye(2), 1.0) == pytest.approx(0.313262, abs=1e-6)
        assert mnrl_loss(np.eye(2), 1.0) == pytest.approx(math.log1p(math.exp(-1)), abs=1e-12)

    def test_identity_large_scale(self):
        assert 0.0 <= mnrl_loss(np.eye(2), 100.0) <= 1e-40

    def test_large_logits_do_not_overflow(self):
        assert math.isfinite(mnrl_loss(np.array([[1000.0, -1000.0], [5.0, 1000.0]]), 20.0))

    @pytest.mark.parametrize("S", [np.ones((2, 3)), np.ones((1, 1)), np.ones(4)])
    def test_not_square(self, S):
        with pytest.raises(NotSquare):
            mnrl_loss(S, 1.0)

    def test_non_finite(self):
        with pytest.raises(NonFinite):
            mnrl_loss(np.array([[1.0, np.inf], [0.0, 1.0]]), 1.0)
        with pytest.raises(NonFinite):
            mnrl_loss_grad(np.array([[1.0, np.nan], [0.0, 1.0]]), 1.0)

    @given(arrays(np.float64, (4, 4), elements=st.floats(-1, 1)), st.floats(0.1, 50))
    def test_non_negative(self, S, scale):
        assert mnrl_loss(S, scale) >= 0.0

    @given(arrays(np.float64, (4, 4), elements=st.floats(-1, 1)), st.permutations(range(4)))
    def test_permutation_invariant(self, S, perm):
        perm = np.array(perm)
        assert mnrl_loss(S[np.ix_(perm, perm)], 20.0) == pytest.approx(mnrl_loss(S, 20.0), abs=1e-9)


class TestLossGrad:
    def test_uniform(self):
        np.testing.assert_allclose(
            mnrl_loss_grad(np.zeros((2, 2)), 1.0), [[-0.25, 0.25], [0.25, -0.25]], atol=1e-15
        )

    @given(
        st.integers(2, 6).flatmap(lambda b: arrays(np.float64, (b, b), elements=st.floats(-1, 1))),
        st.floats(0.1, 50),
    )
    def test_rows_sum_to_zero(self, S, scale):
        np.testing.assert_allclose(mnrl_loss_grad(S, scale).sum(axis=1), 0.0, atol=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        S = rng.uniform(-1, 1, (3, 3))
        analytic = mnrl_loss_grad(S, 1.0)
        numeric = fd_matrix_grad(S, 1.0)
        rel = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
        assert rel.max() < 1e-4


@pytest.fixture
def ab_setup():
    vocab = Vocabulary(("<unk>", "a", "b"), (0, 1, 1))
    table = EmbeddingTable(np.array([[0.5, 0.5], [1.0, 0.0], [0.0, 1.0]]))
    return vocab, table


class TestSimMatrix:
    def test_identical_embeddings(self, ab_setup):
        vocab, table = ab_setup
        batch = [PairRecord("a", "a a", "x"), PairRecord("a a a", "a", "y")]
        np.testing.assert_allclose(sim_matrix(table, vocab, batch), np.ones((2, 2)), atol=1e-15)

    def test_orthogonal_rows(self, ab_setup):
        vocab, table = ab_setup
        batch = [PairRecord("a", "a a", "x"), PairRecord("b", "b b", "y")]
        np.testing.assert_array_equal(sim_matrix(table, vocab, batch), [[1.0, 0.0], [0.0, 1.0]])

    def test_dot_metric(self, ab_setup):
        vocab, table = ab_setup
        batch = [PairRecord("a", "a b", "x"), PairRecord("b", "b b", "y")]
        np.testing.assert_allclose(sim_matrix(table, vocab, batch, "dot"), [[0.5, 0.0], [0.5, 1.0]])

    def test_empty_token_text(self, ab_setup):
        vocab, table = ab_setup
        batch = [PairRecord("a", "?!", "x"), PairRecord("b", "a", "y")]
        with pytest.raises(EmptyInput):
            sim_matrix(table, vocab, batch)

    def test_permutation_equivariant(self):
        pairs = make_cluster_corpus(n_diseases=4, pairs_per_disease=2, seed=3)[:6]
        vocab = build_vocab([p.anchor + " " + p.positive for p in pairs])
        table = init_table(len(vocab), 5, seed=1)
        perm = [3, 0, 5, 1, 4, 2]
        S = sim_matrix(table, vocab, pairs)
        Sp = sim_matrix(table, vocab, [pairs[i] for i in perm])
        np.testing.assert_allclose(Sp, S[np.ix_(perm, perm)], atol=1e-12)
        cfg = TrainConfig()
        assert batch_loss(table, vocab, [pairs[i] for i in perm], cfg) == pytest.approx(
            batch_loss(table, vocab, pairs, cfg), abs=1e-9
        )


def small_batch(seed, n_pairs=4, words=("fever", "cough", "rash", "itch", "ache")):
    rng = np.random.default_rng(seed)
    batch = []
    while len(batch) < n_pairs:
        a = " ".join(rng.choice(words, rng.integers(1, 4)))
        p = " ".join(rng.choice(words, rng.integers(1, 4)))
        if a != p:
            batch.append(PairRecord(a, p, f"L{len(batch)}"))
    return batch


class TestBackprop:
    def test_untouched_rows_have_zero_gradient(self):
        vocab = build_vocab(["fever cough rash itch ache spare"])
        table = init_table(len(vocab), 3, seed=0)
        batch = [PairRecord("fever cough", "rash", "x"), PairRecord("itch", "ache fever", "y")]
        grad = backprop_batch(table, vocab, batch, TrainConfig(batch_size=2))
        dense = grad.to_dense(len(vocab))
        spare = vocab.token_to_id["spare"]
        assert spare not in grad.rows
        assert np.all(dense[spare] == 0.0)
        assert np.all(dense[vocab.unk_id] == 0.0)

    @pytest.mark.parametrize("metric", ["cosine", "dot"])
    def test_full_model_matches_finite_differences(self, metric):
        # V=6 (5 words + <unk>), D=3, 4 pairs
        batch = small_batch(0)
        vocab = build_vocab(["fever cough rash itch ache"])
        assert len(vocab) == 6
        table = EmbeddingTable(np.random.default_rng(1).uniform(-1, 1, (6, 3)))
        cfg = TrainConfig(batch_size=4, similarity=metric, scale=1.0)
        analytic = backprop_batch(table, vocab, batch, cfg).to_dense(6)
        numeric = fd_table_grad(table, vocab, batch, cfg)
        rel = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
        assert rel.max() < 1e-4

    @pytest.mark.parametrize("metric", ["cosine", "dot"])
    @pytest.mark.parametrize("scale", [1.0, 20.0])
    @pytest.mark.parametrize("seed", range(4))
    def test_saturated_regimes_match_within_abs_tolerance(self, metric, scale, seed):
        # at scale 20 many true gradients are ~1e-10, below what central
        # differences can resolve, so a mixed abs/rel tolerance is used here
        batch = small_batch(seed)
        vocab = build_vocab(["fever cough rash itch ache"])
        table = init_table(len(vocab), 4, seed=seed)
        cfg = TrainConfig(batch_size=4, similarity=metric, scale=scale)
        analytic = backprop_batch(table, vocab, batch, cfg).to_dense(len(vocab))
        np.testing.assert_allclose(analytic, fd_table_grad(table, vocab, batch, cfg), rtol=1e-4, atol=1e-7)

    def test_duplicate_token_multiplicity(self):
        # anchor "a a b": dE/dx_a = 2/3, dE/dx_b = 1/3, and a, b occur nowhere else
        vocab = Vocabulary(("<unk>", "a", "b", "c", "d"), (0, 1, 1, 1, 1))
        table = EmbeddingTable(np.random.default_rng(4).uniform(-1, 1, (5, 3)))
        batch = [PairRecord("a a b", "c", "x"), PairRecord("d", "c d", "y")]
        grad = backprop_batch(table, vocab, batch, TrainConfig(batch_size=2)).to_dense(5)
        np.testing.assert_allclose(grad[1], 2 * grad[2], rtol=1e-12)
        assert np.abs(grad[1]).max() > 0


class TestGradCheck:
    def setup_method(self):
        self.batch = small_batch(2)
        self.vocab = build_vocab(["fever cough rash itch ache", "spare"])
        self.table = init_table(len(self.vocab), 4, seed=2)
        self.cfg = TrainConfig(batch_size=4, scale=1.0)

    def test_passes(self):
        report = grad_check(self.table, self.vocab, self.batch, self.cfg, step=1e-5, tolerance=1e-4)
        assert report.passed
        assert report.n_entries == self.table.weights.size

    def test_untouched_rows_numeric_zero(self):
        from diseasevec.mnrl import numeric_gradient

        numeric = numeric_gradient(self.table, self.vocab, self.batch, self.cfg)
        spare = self.vocab.token_to_id["spare"]
        assert np.abs(numeric[spare]).max() < 1e-7
        assert np.abs(numeric[0]).max() < 1e-7

    def test_detects_corruption(self):
        analytic = backprop_batch(self.table, self.vocab, self.batch, self.cfg).to_dense(
            self.table.vocab_size
        )
        analytic[1, 0] += 0.1
        report = grad_check(self.table, self.vocab, self.batch, self.cfg, analytic=analytic)
        assert not report.passed
        assert report.worst_index == (1, 0)


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.learning_rate, cfg.scale) == (4, 0.05, 20.0)
        assert cfg.similarity is SimilarityMetric.COSINE and cfg.shuffle_each_epoch

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"batch_size": 1},
            {"learning_rate": 0.0},
            {"scale": -1.0},
            {"scale": float("inf")},
            {"similarity": "l2"},
            {"epochs": -1},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)

    def test_parse(self):
        cfg = parse_train_config(
            "# comment\nepochs = 2\nbatch_size=4\nsimilarity = dot\nshuffle_each_epoch = false\n"
        )
        assert cfg == TrainConfig(epochs=2, batch_size=4, similarity="dot", shuffle_each_epoch=False)

    def test_round_trip(self):
        cfg = TrainConfig(epochs=3, learning_rate=0.1, seed=9, similarity="dot")
        assert parse_train_config(format_train_config(cfg)) == cfg

    @pytest.mark.parametrize("text", ["momentum = 0.9", "epochs 4", "epochs = four", "batch_size = 1"])
    def test_parse_errors(self, text):
        with pytest.raises(ConfigError):
            parse_train_config(text)


@pytest.fixture(scope="module")
def corpus():
    pairs = make_cluster_corpus(n_diseases=6, pairs_per_disease=8, seed=1)
    vocab = build_vocab([p.anchor + " " + p.positive for p in pairs])
    return pairs, vocab


class TestTrain:
    def test_deterministic(self, corpus):
        pairs, vocab = corpus
        table = init_table(len(vocab), 8, seed=0)
        cfg = TrainConfig(epochs=2, batch_size=4, seed=3)
        a, sa = train(pairs, vocab, table, cfg)
        b, sb = train(pairs, vocab, table, cfg)
        assert a.weights.tobytes() == b.weights.tobytes()
        assert sa.per_epoch_mean_loss == sb.per_epoch_mean_loss

    def test_does_not_mutate_input(self, corpus):
        pairs, vocab = corpus
        table = init_table(len(vocab), 8, seed=0)
        before = table.weights.copy()
        train(pairs, vocab, table, TrainConfig(epochs=1, batch_size=4))
        np.testing.assert_array_equal(table.weights, before)

    def test_drops_incomplete_batch(self, corpus):
        pairs, vocab = corpus  # 48 pairs
        _, stats = train(pairs, vocab, init_table(len(vocab), 4, 0), TrainConfig(epochs=3, batch_size=10))
        assert stats.steps == 3 * 4

    def test_seed_changes_result(self, corpus):
        pairs, vocab = corpus
        table = init_table(len(vocab), 8, seed=0)
        a, _ = train(pairs, vocab, table, TrainConfig(epochs=1, batch_size=4, seed=1))
        b, _ = train(pairs, vocab, table, TrainConfig(epochs=1, batch_size=4, seed=2))
        assert a.weights.tobytes() != b.weights.tobytes()

    def test_too_small(self, corpus):
        pairs, vocab = corpus
        with pytest.raises(DatasetTooSmall):
            train(pairs[:3], vocab, init_table(len(vocab), 4, 0), TrainConfig(batch_size=4))

    def test_first_epoch_beats_first_batch(self):
        pairs = make_cluster_corpus(seed=0)
        vocab = build_vocab([p.anchor + " " + p.positive for p in pairs])
        _, stats = train(pairs, vocab, init_table(len(vocab), 32, 0), TrainConfig(epochs=1))
        assert stats.per_epoch_mean_loss[0] < stats.first_batch_loss
        assert stats.log_lines()[0].startswith("epoch 1 mean_loss ")
