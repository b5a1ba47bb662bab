"""Neighbour tables, correlation matrices and frequency-binned F1."""
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from lwpt.analysis import (
    ReprIndex, correlation_report, cosine_matrix, encode_index, frequency_bins, frequency_f1_report,
    neighbors, off_diagonal, write_reports,
)
from lwpt.corpus import Document, build_vocabs, encode_documents
from lwpt.encoders import Encoder, EncoderConfig
from lwpt.errors import ConfigError, ParameterError
from lwpt.metrics import EvalInstance, evaluate


def random_index(n_docs=20, l=3, D=4, seed=0):
    rng = np.random.default_rng(seed)
    sets = [frozenset(np.flatnonzero(rng.random(l) < 0.5).tolist() or [0]) for _ in range(n_docs)]
    return ReprIndex(rng.normal(size=(l, n_docs, D)), [f"d{i}" for i in range(n_docs)], sets,
                     [f"L{k}" for k in range(l)])


@pytest.fixture(scope="module")
def encoded(synth_small):
    docs, _ = synth_small
    docs = docs[:40]
    vocab, labels = build_vocabs(docs)
    cfg = EncoderConfig("lw_lstm", len(vocab), len(labels), 5, 5, 1, 0.2)
    t_enc, c_enc = Encoder(cfg, rng=0), Encoder(cfg, rng=1)
    index = encode_index(docs, t_enc, c_enc, vocab, labels, 16)
    return docs, vocab, labels, t_enc, c_enc, index


class TestIndex:
    def test_shape(self, encoded):
        docs, _, labels, _, _, index = encoded
        assert index.reps.shape == (len(labels), len(docs), 10)

    def test_fused_concatenates(self, encoded):
        docs, vocab, labels, t_enc, c_enc, index = encoded
        fused = encode_index(docs, t_enc, c_enc, vocab, labels, 16, source="fused")
        c_only = encode_index(docs, t_enc, c_enc, vocab, labels, 16, source="c")
        np.testing.assert_array_equal(fused.reps[..., :10], index.reps)
        np.testing.assert_array_equal(fused.reps[..., 10:], c_only.reps)

    def test_single_document_matches_row(self, encoded):
        """Batch composition must not leak into a document's vectors."""
        docs, vocab, labels, t_enc, _, index = encoded
        one = encode_documents([docs[7]], vocab, labels, 16)
        for k in range(len(labels)):
            np.testing.assert_allclose(t_enc.encode(one, k).data[0], index.reps[k, 7], atol=1e-12)

    def test_batch_size_irrelevant(self, encoded):
        docs, vocab, labels, t_enc, c_enc, index = encoded
        small = encode_index(docs, t_enc, c_enc, vocab, labels, 16, batch_size=3)
        np.testing.assert_allclose(small.reps, index.reps, atol=1e-12)

    def test_bad_source(self, encoded):
        docs, vocab, labels, t_enc, c_enc, _ = encoded
        with pytest.raises(ConfigError):
            encode_index(docs, t_enc, c_enc, vocab, labels, 16, source="head")

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ConfigError):
            ReprIndex(np.zeros((2, 2, 3)), ["a", "a"], [frozenset({0})] * 2, ["x", "y"])

    def test_unknown_id_and_label(self):
        index = random_index()
        with pytest.raises(KeyError, match="nope"):
            index.position("nope")
        with pytest.raises(KeyError, match="L0, L1, L2"):
            index.label_id("zzz")


class TestCosine:
    @given(arrays(np.float64, (6, 3), elements=st.floats(-5, 5)).filter(lambda a: (np.abs(a).sum(1) > 1e-3).all()),
           st.floats(0.01, 100))
    def test_scale_invariance_and_self_similarity(self, x, c):
        s = cosine_matrix(x)
        np.testing.assert_allclose(np.diag(s), 1.0, atol=1e-12)
        np.testing.assert_allclose(cosine_matrix(c * x), s, atol=1e-12)
        assert np.all(np.abs(s) <= 1.0)

    def test_zero_row_is_orthogonal(self):
        s = cosine_matrix(np.array([[0.0, 0.0], [1.0, 0.0]]))
        assert s[0, 1] == 0.0


class TestNeighbors:
    def test_brute_force_ranking(self):
        index = random_index(20, seed=3)
        k, q = 1, 5
        x = index.reps[k]
        sims = [(float(x[q] @ x[j] / (np.linalg.norm(x[q]) * np.linalg.norm(x[j]))), j) for j in range(20) if j != q]
        expected = [f"d{j}" for _, j in sorted(sims, key=lambda p: -p[0])[:7]]
        table = neighbors(index, "d5", "L1", K=7)
        assert table.neighbors == expected
        assert table.scores == sorted(table.scores, reverse=True)

    def test_duplicate_is_top_neighbor(self):
        index = random_index(15, seed=4)
        index.reps[:, 9] = 3.0 * index.reps[:, 2]
        table = neighbors(index, "d2", 0, K=3)
        assert table.neighbors[0] == "d9"
        assert table.scores[0] == pytest.approx(1.0, abs=1e-12)

    def test_full_neighbourhood_gives_corpus_frequencies(self):
        index = random_index(20, seed=5)
        table = neighbors(index, "d0", "L2", K=19)
        member = index.membership()[1:]
        for j, name in enumerate(index.label_names):
            assert table.frequency[name] == pytest.approx(member[:, j].mean(), abs=1e-15)
        assert "d0" not in table.neighbors

    def test_frequencies_sum_to_mean_label_count(self):
        index = random_index(20, seed=6)
        table = neighbors(index, "d3", "L0", K=8)
        pos = [index.position(d) for d in table.neighbors]
        mean_size = np.mean([len(index.label_sets[i]) for i in pos])
        assert sum(table.frequency.values()) == pytest.approx(mean_size, abs=1e-12)

    def test_display_threshold(self):
        index = random_index(20, seed=7)
        table = neighbors(index, "d1", "L0", K=10, threshold=0.35)
        shown = table.displayed()
        assert all(v >= 0.35 for v in shown.values())
        assert set(shown) == {k for k, v in table.frequency.items() if v >= 0.35}
        assert list(shown.values()) == sorted(shown.values(), reverse=True)

    @pytest.mark.parametrize("K", [0, 20, 25])
    def test_bad_k(self, K):
        with pytest.raises(ParameterError):
            neighbors(random_index(20), "d0", 0, K=K)

    def test_unknown_query(self):
        with pytest.raises(KeyError):
            neighbors(random_index(), "missing", 0, K=3)


class TestCorrelation:
    def test_rows_in_unit_interval(self):
        rep = correlation_report(random_index(30, l=4, seed=8), K=5)
        assert rep.measured.shape == (4, 4)
        assert np.all((rep.measured >= 0) & (rep.measured <= 1))
        assert rep.spearman is None

    def test_row_matches_neighbor_tables(self):
        """Row a is the mean of the a-wise neighbour tables over a-holding queries."""
        index = random_index(25, l=3, seed=9)
        rep = correlation_report(index, K=6)
        for a in range(3):
            holders = [d for d, s in zip(index.doc_ids, index.label_sets) if a in s]
            tables = [neighbors(index, d, a, K=6) for d in holders]
            expected = [np.mean([t.frequency[n] for t in tables]) for n in index.label_names]
            np.testing.assert_allclose(rep.measured[a], expected, atol=1e-12)
            assert rep.queries[a] == len(holders)

    def test_spearman_against_self(self):
        index = random_index(30, l=4, seed=10)
        measured = correlation_report(index, K=5).measured
        rep = correlation_report(index, measured, K=5)
        assert rep.spearman == pytest.approx(1.0)

    def test_planted_shape_checked(self):
        with pytest.raises(ConfigError):
            correlation_report(random_index(l=3), np.eye(4), K=3)

    def test_off_diagonal(self):
        a = np.arange(9.0).reshape(3, 3)
        np.testing.assert_array_equal(off_diagonal(a), [1, 2, 3, 5, 6, 7])


def _docs_with_counts(counts):
    docs, i = [], 0
    for lab, c in counts.items():
        for _ in range(c):
            docs.append(Document(f"x{i}", [["w"]], (lab,)))
            i += 1
    return docs


class TestFrequencyF1:
    def test_bins_partition_labels(self):
        counts = {"a": 1, "b": 3, "c": 10, "d": 40, "e": 100}
        xs = [EvalInstance([0] * 5, {k}) for k in range(5)]
        report = evaluate(xs, [{k} if k % 2 else set() for k in range(5)], list(counts))
        freq = frequency_f1_report(_docs_with_counts(counts), report, num_bins=3)
        seen = [lab for b in freq.bins for lab in b.labels]
        assert sorted(seen) == sorted(counts)
        assert freq.frequency == counts
        for b in freq.bins:
            for lab in b.labels:
                assert b.low <= counts[lab] <= b.high

    def test_single_bin_mean_is_macro_f1(self):
        counts = {"a": 2, "b": 5, "c": 9}
        xs = [EvalInstance([0] * 3, {0, 1}), EvalInstance([0] * 3, {2})]
        report = evaluate(xs, [{0}, {1, 2}], list(counts))
        freq = frequency_f1_report(_docs_with_counts(counts), report, num_bins=1)
        assert freq.bins[0].mean_f1 == pytest.approx(report.macro_f1, abs=1e-15)

    def test_edges(self):
        np.testing.assert_allclose(frequency_bins(np.array([1.0, 1000.0]), 3), [1, 10, 100, 1000])
        np.testing.assert_allclose(frequency_bins(np.array([0.0, 10.0]), 2, "linear"), [0, 5, 10])
        with pytest.raises(ConfigError):
            frequency_bins(np.array([1.0]), 2, "cubic")
        with pytest.raises(ParameterError):
            frequency_bins(np.array([1.0]), 0)

    def test_csv_header(self):
        counts = {"a": 1, "b": 2}
        report = evaluate([EvalInstance([0, 0], {0})], [{0}], list(counts))
        csv_text = frequency_f1_report(_docs_with_counts(counts), report, 2).to_csv()
        assert csv_text.splitlines()[0] == "bin,low,high,count,mean_f1,labels"


def test_write_reports(tmp_path):
    index = random_index(12)
    table = neighbors(index, "d0", "L0", K=4)
    corr = correlation_report(index, K=4)
    written = write_reports(tmp_path, table, corr)
    assert written == ["neighbors.json", "correlation.json"]
    back = json.loads((tmp_path / "neighbors.json").read_text())
    assert back["neighbors"] == table.neighbors and "displayed" in back
    assert np.allclose(json.loads((tmp_path / "correlation.json").read_text())["measured"], corr.measured)
