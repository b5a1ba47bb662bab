"""The four evaluation metrics against hand counts and brute-force oracles."""
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from lwpt.errors import ConfigError, CorpusParseError, UsageError
from lwpt.metrics import (
    EvalInstance, MetricsReport, evaluate, evaluate_file, hamming_loss, macro_f1, micro_f1,
    one_error, read_predictions,
)


@st.composite
def eval_sets(draw, max_labels=10, max_n=50):
    l = draw(st.integers(2, max_labels))
    n = draw(st.integers(1, max_n))
    label = st.integers(0, l - 1)
    instances, decided = [], []
    for _ in range(n):
        scores = draw(st.lists(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]) | st.floats(0, 1), min_size=l, max_size=l))
        gold = draw(st.sets(label, min_size=1, max_size=l))
        instances.append(EvalInstance(scores, gold))
        decided.append(draw(st.sets(label, max_size=l)))
    return l, instances, decided


def oracle_values(l, instances, decided):
    golds = [x.gold for x in instances]
    return (
        oracles.one_error([x.scores for x in instances], golds),
        oracles.hamming_loss(golds, decided, l),
        oracles.macro_f1(golds, decided, l),
        oracles.micro_f1(golds, decided, l),
    )


class TestOneError:
    def test_all_correct(self):
        xs = [EvalInstance([0.9, 0.1], {0}), EvalInstance([0.2, 0.7], {1})]
        assert one_error(xs) == 0.0

    def test_half_wrong(self):
        xs = [EvalInstance([0.9, 0.1], {0}), EvalInstance([0.9, 0.7], {1})]
        assert one_error(xs) == 0.5

    def test_ties_pick_smallest_id(self):
        assert one_error([EvalInstance([0.5, 0.5], {0})]) == 0.0
        assert one_error([EvalInstance([0.5, 0.5], {1})]) == 1.0

    def test_empty_input(self):
        with pytest.raises(UsageError):
            one_error([])

    @given(eval_sets())
    def test_monotone_transform_invariance(self, data):
        _, instances, _ = data
        warped = [EvalInstance([8.0 * s for s in x.scores], x.gold) for x in instances]
        assert one_error(warped) == one_error(instances)


class TestHammingLoss:
    def test_perfect_and_complement(self):
        xs = [EvalInstance([0, 0, 0], {0, 2}), EvalInstance([0, 0, 0], {1})]
        assert hamming_loss(xs, [{0, 2}, {1}]) == 0.0
        assert hamming_loss(xs, [{1}, {0, 2}]) == 1.0

    def test_hand_count(self):
        """N = 3, l = 4: 1 + 2 + 3 mismatched slots out of 12."""
        xs = [EvalInstance([0] * 4, g) for g in ({0}, {1, 2}, {3})]
        decided = [{0, 1}, {1, 3, 2, 0}, {0, 1}]
        assert hamming_loss(xs, decided) == pytest.approx((1 + 2 + 3) / 12, abs=1e-15)
        assert hamming_loss(xs, decided, "gold") == pytest.approx(6 / 4, abs=1e-15)

    def test_symmetric(self):
        gold_sets = [{0}, {1, 2}]
        decided = [{0, 1}, {2}]
        a = hamming_loss([EvalInstance([0] * 3, g) for g in gold_sets], decided)
        b = hamming_loss([EvalInstance([0] * 3, d) for d in decided], gold_sets)
        assert a == b

    def test_unknown_denominator(self):
        with pytest.raises(ConfigError):
            hamming_loss([EvalInstance([0, 0], {0})], [{0}], "docs")


class TestF1:
    def test_perfect(self):
        xs = [EvalInstance([0, 0], {0}), EvalInstance([0, 0], {1})]
        assert macro_f1(xs, [{0}, {1}]) == 1.0
        assert micro_f1(xs, [{0}, {1}]) == 1.0

    def test_one_label_always_wrong(self):
        """Label 0 always right, label 1 never predicted when present: macro 0.5."""
        xs = [EvalInstance([0, 0], {0, 1}), EvalInstance([0, 0], {0, 1})]
        assert macro_f1(xs, [{0}, {0}]) == 0.5

    def test_no_predictions(self):
        xs = [EvalInstance([0, 0], {0})]
        assert micro_f1(xs, [set()]) == 0.0

    def test_absent_label_scores_zero(self):
        xs = [EvalInstance([0, 0, 0], {0})]
        assert macro_f1(xs, [{0}]) == pytest.approx(1 / 3)

    def test_single_label_micro_equals_accuracy(self):
        rng = np.random.default_rng(0)
        gold = rng.integers(0, 4, 40)
        pred = np.where(rng.random(40) < 0.6, gold, rng.integers(0, 4, 40))
        xs = [EvalInstance([0] * 4, {g}) for g in gold]
        assert micro_f1(xs, [{p} for p in pred]) == pytest.approx(np.mean(gold == pred), abs=1e-15)


class TestOracleAgreement:
    @given(eval_sets())
    def test_all_four_metrics(self, data):
        l, instances, decided = data
        ours = (one_error(instances), hamming_loss(instances, decided),
                macro_f1(instances, decided), micro_f1(instances, decided))
        np.testing.assert_allclose(ours, oracle_values(l, instances, decided), rtol=0, atol=1e-12)

    @given(eval_sets(), st.randoms(use_true_random=False))
    def test_permutation_invariance(self, data, rnd):
        l, instances, decided = data
        order = list(range(len(instances)))
        rnd.shuffle(order)
        a = evaluate(instances, decided)
        b = evaluate([instances[i] for i in order], [decided[i] for i in order])
        assert a.to_json() == b.to_json()

    @given(eval_sets())
    def test_report_consistent_with_per_label(self, data):
        l, instances, decided = data
        r = evaluate(instances, decided)
        assert r.macro_f1 == pytest.approx(np.mean([x["f1"] for x in r.per_label]), abs=1e-15)
        for v in (r.one_error, r.hamming_loss, r.macro_f1, r.micro_f1):
            assert 0.0 <= v <= 1.0


class TestValidation:
    def test_empty_gold(self):
        with pytest.raises(ConfigError):
            EvalInstance([0.1, 0.2], set())

    def test_gold_out_of_range(self):
        with pytest.raises(ConfigError):
            EvalInstance([0.1, 0.2], {2})

    def test_ragged_scores(self):
        with pytest.raises(ConfigError):
            one_error([EvalInstance([0, 0], {0}), EvalInstance([0, 0, 0], {0})])

    def test_misaligned_decisions(self):
        with pytest.raises(ConfigError):
            micro_f1([EvalInstance([0, 0], {0})], [{0}, {1}])


class TestReport:
    def test_json_round_trip(self, tmp_path):
        r = evaluate([EvalInstance([0.9, 0.2], {0})], [{0}], ["a", "b"])
        r.save(tmp_path / "m.json")
        back = MetricsReport.from_json(json.loads((tmp_path / "m.json").read_text()))
        assert back == r
        assert {"label", "precision", "recall", "f1", "support"} <= set(back.per_label[0])

    def test_table_orientation(self):
        r = evaluate([EvalInstance([0.9, 0.2], {0})], [{0}], ["a", "b"])
        head = r.table().splitlines()[0]
        assert head.index("OE") < head.index("HL") < head.index("MacroF1") < head.index("MicroF1")


class TestPredictionsFile:
    def write(self, path, rows, labels=("x", "y")):
        path.write_text("".join(json.dumps(r) + "\n" for r in rows))
        (path.parent / "labels.json").write_text(json.dumps(list(labels)))

    def test_perfect_file(self, tmp_path):
        rows = [{"id": "a", "scores": [0.9, 0.1], "predicted": ["x"], "gold": ["x"]},
                {"id": "b", "scores": [0.2, 0.8], "predicted": ["y"], "gold": ["y"]}]
        self.write(tmp_path / "p.jsonl", rows)
        r = evaluate_file(tmp_path / "p.jsonl")
        assert (r.one_error, r.hamming_loss, r.macro_f1, r.micro_f1) == (0.0, 0.0, 1.0, 1.0)

    def test_parse_error_has_line_number(self, tmp_path):
        rows = [{"id": "a", "scores": [0.9, 0.1], "predicted": ["x"], "gold": ["x"]},
                {"id": "b", "scores": [0.2], "predicted": ["y"], "gold": ["y"]}]
        self.write(tmp_path / "p.jsonl", rows)
        with pytest.raises(CorpusParseError, match="line 2"):
            read_predictions(tmp_path / "p.jsonl")

    def test_unknown_label(self, tmp_path):
        self.write(tmp_path / "p.jsonl", [{"id": "a", "scores": [1, 0], "predicted": ["z"], "gold": ["x"]}])
        with pytest.raises(CorpusParseError, match="line 1"):
            read_predictions(tmp_path / "p.jsonl")

    def test_explicit_label_order_needed(self, tmp_path):
        (tmp_path / "p.jsonl").write_text(json.dumps({"id": "a", "scores": [1], "predicted": [], "gold": ["x"]}) + "\n")
        with pytest.raises(ConfigError):
            read_predictions(tmp_path / "p.jsonl")
        assert read_predictions(tmp_path / "p.jsonl", ["x"]).ids == ["a"]

    @given(eval_sets(max_n=10))
    def test_file_matches_oracle(self, tmp_path_factory, data):
        l, instances, decided = data
        names = [f"L{k}" for k in range(l)]
        rows = [{"id": str(i), "scores": list(x.scores), "predicted": [names[k] for k in sorted(d)],
                 "gold": [names[k] for k in sorted(x.gold)]} for i, (x, d) in enumerate(zip(instances, decided))]
        path = tmp_path_factory.mktemp("preds") / "p.jsonl"
        self.write(path, rows, names)
        r = evaluate_file(path)
        np.testing.assert_allclose(
            (r.one_error, r.hamming_loss, r.macro_f1, r.micro_f1),
            oracle_values(l, instances, decided), rtol=0, atol=1e-12,
        )
