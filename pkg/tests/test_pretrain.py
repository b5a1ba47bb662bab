"""Contrastive pre-training: sampling, loss and the training loop."""
from decimal import Decimal, getcontext

import numpy as np
import pytest
from scipy import stats

from lwpt.corpus import Document, build_vocabs, encode_documents, synth_corpus
from lwpt.encoders import EncoderConfig
from lwpt.errors import ConfigError, SkipInstance
from lwpt.pretrain import (
    InstanceStream, LabelIndex, PretrainConfig, encoders_from_checkpoint, instance_loss,
    instance_stream, pretrain_loss, result_checkpoint, run_pretraining, sample_instance,
)
from lwpt.tensor import Tensor, backward


def index_of(*label_sets, num_labels=None):
    n = num_labels or (max(max(s) for s in label_sets) + 1)
    return LabelIndex(label_sets, n)


class TestSampleInstance:
    def test_positive_forced_when_label_in_two_docs(self):
        idx = index_of({0}, {1}, {0, 1}, {1}, {2})
        rng = np.random.default_rng(0)
        for _ in range(20):
            inst = sample_instance(idx, 0, 0, 3, rng)
            assert inst.candidates[inst.positive_index] == 2

    def test_negatives_exclude_label(self):
        idx = index_of({0}, {0, 1}, {1}, {2}, {1, 2}, {0, 2})
        rng = np.random.default_rng(1)
        for _ in range(50):
            inst = sample_instance(idx, 0, 0, 3, rng)
            negs = [c for i, c in enumerate(inst.candidates) if i != inst.positive_index]
            assert len(negs) == 2 and len(set(negs)) == 2
            assert all(0 not in idx.label_sets[c] for c in negs)
            assert 0 in idx.label_sets[inst.candidates[inst.positive_index]]
            assert inst.target not in inst.candidates

    def test_positive_index_uniform(self):
        idx = index_of({0}, {0}, {0}, {1}, {1}, {1})
        rng = np.random.default_rng(2)
        counts = np.bincount([sample_instance(idx, 0, 0, 3, rng).positive_index for _ in range(10_000)],
                             minlength=3)
        assert stats.chisquare(counts).pvalue > 0.01

    def test_positive_uniform_over_holders(self):
        idx = index_of({0}, {0}, {0}, {0}, {1}, {1})
        rng = np.random.default_rng(3)
        picks = [sample_instance(idx, 0, 0, 2, rng) for _ in range(6000)]
        counts = np.bincount([p.candidates[p.positive_index] for p in picks], minlength=4)[1:4]
        assert stats.chisquare(counts).pvalue > 0.01

    def test_no_positive_signals_skip(self):
        idx = index_of({0}, {1}, {1})
        with pytest.raises(SkipInstance):
            sample_instance(idx, 0, 0, 2, np.random.default_rng(0))

    def test_too_few_negatives(self):
        idx = index_of({0}, {0}, {1})
        with pytest.raises(ConfigError):
            sample_instance(idx, 0, 0, 3, np.random.default_rng(0))

    def test_target_must_carry_label(self):
        idx = index_of({0}, {1})
        with pytest.raises(ConfigError):
            sample_instance(idx, 0, 1, 2, np.random.default_rng(0))


class TestInstanceStream:
    def test_one_instance_per_pair(self):
        """A{a,b}, B{a,b}, C{c}: four usable pairs; C's singleton label is skipped."""
        idx = index_of({0, 1}, {0, 1}, {2})
        stream = instance_stream(idx, 2, np.random.default_rng(0))
        epoch = stream.epoch()
        assert len(epoch) == 4
        assert sorted((x.target, x.label_k) for x in epoch) == [(0, 0), (0, 1), (1, 0), (1, 1)]
        assert stream.skipped == 1

    def test_deterministic(self):
        idx = index_of({0, 1}, {0}, {1}, {2}, {0, 2}, {1, 2})
        a = InstanceStream(idx, 2, np.random.default_rng(5))
        b = InstanceStream(idx, 2, np.random.default_rng(5))
        assert [a.epoch() for _ in range(3)] == [b.epoch() for _ in range(3)]

    def test_batches_cross_epochs(self):
        idx = index_of({0}, {0}, {1}, {1})
        stream = InstanceStream(idx, 2, np.random.default_rng(0))
        batches = stream.batches(3)
        sizes = [len(next(batches)) for _ in range(3)]
        assert sizes == [3, 3, 3] and stream.epochs == 3

    def test_all_pairs_skipped(self):
        idx = index_of({0}, {1})
        with pytest.raises(ConfigError):
            next(iter(InstanceStream(idx, 2, np.random.default_rng(0))))


class TestPretrainLoss:
    def test_equal_scores_give_log_n(self):
        q = np.ones(3)
        assert pretrain_loss(q, np.ones((4, 3)), 2).item() == pytest.approx(np.log(4), abs=1e-12)

    def test_saturation(self):
        cands = np.zeros((3, 2))
        cands[1] = [500.0, 0.0]
        assert pretrain_loss(np.array([1.0, 0.0]), cands, 1).item() < 1e-12

    def test_high_precision_oracle(self):
        getcontext().prec = 50
        e = Decimal(1).exp()
        expected = float(-(e / (e + 3)).ln())
        cands = np.array([[1.0], [0.0], [0.0], [0.0]])
        assert abs(pretrain_loss(np.array([1.0]), cands, 0).item() - expected) < 1e-10

    def test_negative_order_invariance(self):
        rng = np.random.default_rng(0)
        qt, qc = rng.normal(size=4), rng.normal(size=(4, 4))
        base = pretrain_loss(qt, qc, 1).item()
        perm = qc[[0, 1, 3, 2]]
        assert pretrain_loss(qt, perm, 1).item() == pytest.approx(base, abs=1e-14)
        perm2 = qc[[2, 1, 0, 3]]
        assert pretrain_loss(qt, perm2, 1).item() == pytest.approx(base, abs=1e-14)

    def test_batch_is_mean(self):
        rng = np.random.default_rng(1)
        qt, qc, pos = rng.normal(size=(5, 3)), rng.normal(size=(5, 3, 3)), rng.integers(0, 3, 5)
        singles = [pretrain_loss(qt[i], qc[i], pos[i]).item() for i in range(5)]
        assert pretrain_loss(qt, qc, pos).item() == pytest.approx(np.mean(singles), rel=1e-13)
        assert min(singles) >= 0

    def test_gradient_is_softmax_minus_onehot(self):
        rng = np.random.default_rng(2)
        qt = Tensor(rng.normal(size=3), requires_grad=True)
        qc = rng.normal(size=(3, 3))
        backward(pretrain_loss(qt, qc, 0))
        s = qc @ qt.data
        p = np.exp(s - s.max())
        p /= p.sum()
        np.testing.assert_allclose(qt.grad, qc.T @ (p - np.eye(3)[0]), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            pretrain_loss(np.ones((2, 3)), np.ones((3, 2, 3)), [0, 0])


@pytest.fixture(scope="module")
def small_setup():
    docs, _ = synth_corpus(4, 120, [(0, 1, 0.9)], rng=3)
    vocab, labels = build_vocabs(docs)
    cfg = EncoderConfig("lw_lstm", len(vocab), len(labels), 6, 6, 1, 0.2)
    return docs, vocab, labels, cfg


class TestRunPretraining:
    def test_zero_iterations_is_initialisation(self, small_setup):
        docs, vocab, labels, cfg = small_setup
        res = run_pretraining(docs, vocab, labels, cfg, PretrainConfig(iterations=0, seed=4), t=16)
        assert res.loss_history == []
        fresh = run_pretraining(docs, vocab, labels, cfg, PretrainConfig(iterations=0, seed=4), t=16)
        for k, p in res.t_encoder.params.items():
            np.testing.assert_array_equal(p.data, fresh.t_encoder.params[k].data)

    def test_same_seed_same_checkpoint(self, small_setup):
        docs, vocab, labels, cfg = small_setup
        pc = PretrainConfig(iterations=4, batch_size=16, seed=9)
        a = result_checkpoint(run_pretraining(docs, vocab, labels, cfg, pc, 16), vocab, labels, 16, 1, pc)
        b = result_checkpoint(run_pretraining(docs, vocab, labels, cfg, pc, 16), vocab, labels, 16, 1, pc)
        assert a.digest() == b.digest()
        other = PretrainConfig(iterations=4, batch_size=16, seed=10)
        c = result_checkpoint(run_pretraining(docs, vocab, labels, cfg, other, 16), vocab, labels, 16, 1, other)
        assert c.digest() != a.digest()

    def test_encoders_have_independent_parameters(self, small_setup):
        docs, vocab, labels, cfg = small_setup
        res = run_pretraining(docs, vocab, labels, cfg, PretrainConfig(iterations=0), t=16)
        t, c = res.t_encoder.params, res.c_encoder.params
        assert t.keys() == c.keys()
        assert all(t[k].shape == c[k].shape for k in t)
        assert not np.array_equal(t["ctx"].data, c["ctx"].data)

    def test_loss_decreases_on_short_run(self, small_setup):
        docs, vocab, labels, cfg = small_setup
        pc = PretrainConfig(iterations=60, batch_size=32, learning_rate=5e-3, seed=1)
        hist = run_pretraining(docs, vocab, labels, cfg, pc, 16).loss_history
        assert np.mean(hist[-15:]) < np.mean(hist[:15])

    def test_untrained_loss_near_log_n(self, small_setup):
        docs, vocab, labels, cfg = small_setup
        res = run_pretraining(docs, vocab, labels, cfg, PretrainConfig(iterations=0), t=16)
        corpus = encode_documents(docs, vocab, labels, 16)
        stream = InstanceStream(LabelIndex.from_docs(docs, labels), 3, np.random.default_rng(0))
        loss = instance_loss(res.t_encoder, res.c_encoder, corpus, stream.epoch())
        assert abs(loss.item() - np.log(3)) < 0.05

    def test_checkpoint_restores_encoders(self, small_setup):
        docs, vocab, labels, cfg = small_setup
        pc = PretrainConfig(iterations=2, batch_size=8)
        res = run_pretraining(docs, vocab, labels, cfg, pc, 16)
        t_enc, c_enc = encoders_from_checkpoint(result_checkpoint(res, vocab, labels, 16, 1, pc))
        for k in res.t_encoder.params:
            np.testing.assert_array_equal(t_enc.params[k].data, res.t_encoder.params[k].data)
            np.testing.assert_array_equal(c_enc.params[k].data, res.c_encoder.params[k].data)

    def test_checkpoint_kind_mismatch(self, small_setup):
        docs, vocab, labels, cfg = small_setup
        pc = PretrainConfig(iterations=0)
        ckpt = result_checkpoint(run_pretraining(docs, vocab, labels, cfg, pc, 16), vocab, labels, 16, 1, pc)
        ckpt.encoder["kind"] = "lstm_attn"
        with pytest.raises(ConfigError):
            encoders_from_checkpoint(ckpt)


@pytest.mark.parametrize("kwargs", [{"num_candidates": 1}, {"batch_size": 0}, {"iterations": -1}])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        PretrainConfig(**kwargs)


def test_documented_defaults():
    pc = PretrainConfig()
    assert (pc.num_candidates, pc.batch_size, pc.iterations, pc.learning_rate) == (3, 128, 3000, 1e-3)


def test_skips_counted_in_result():
    docs = [
        Document("a", [["x"]], ("p", "q")), Document("b", [["y"]], ("p",)),
        Document("c", [["z"]], ("r",)), Document("d", [["w"]], ("r",)),
    ]
    vocab, labels = build_vocabs(docs)
    cfg = EncoderConfig("lw_lstm", len(vocab), len(labels), 3, 3, 1, 0.0)
    res = run_pretraining(docs, vocab, labels, cfg, PretrainConfig(num_candidates=2, batch_size=4, iterations=1), 4)
    assert res.skipped >= 1  # "q" is held by one document only
