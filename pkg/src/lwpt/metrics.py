"""Multi-label evaluation: one-error, Hamming loss, macro- and micro-F1.

One-error looks at raw scores; the other three compare decided label sets
with gold sets. Precision, recall and F1 are 0 whenever their denominator
is 0.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, CorpusParseError, UsageError

HAMMING_DENOMINATORS = ("slots", "gold")


@dataclass(frozen=True)
class EvalInstance:
    scores: tuple[float, ...]
    gold: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        object.__setattr__(self, "gold", frozenset(int(g) for g in self.gold))
        if not self.gold:
            raise ConfigError("an evaluation instance needs a non-empty gold label set")
        if min(self.gold) < 0 or max(self.gold) >= len(self.scores):
            raise ConfigError(f"gold labels {sorted(self.gold)} outside [0, {len(self.scores)})")


def _arrays(instances: Sequence[EvalInstance], decided=None):
    if len(instances) == 0:
        raise UsageError("metrics need at least one instance")
    l = len(instances[0].scores)
    if any(len(x.scores) != l for x in instances):
        raise ConfigError("instances disagree on the number of labels")
    scores = np.array([x.scores for x in instances], dtype=np.float64)
    gold = np.zeros((len(instances), l), dtype=bool)
    for i, x in enumerate(instances):
        gold[i, list(x.gold)] = True
    if decided is None:
        return scores, gold, None
    if len(decided) != len(instances):
        raise ConfigError(f"{len(decided)} decisions for {len(instances)} instances")
    pred = np.zeros_like(gold)
    for i, labs in enumerate(decided):
        labs = list(labs)
        if labs and (min(labs) < 0 or max(labs) >= l):
            raise ConfigError(f"decided labels {sorted(labs)} outside [0, {l})")
        pred[i, labs] = True
    return scores, gold, pred


def one_error_from_arrays(scores: np.ndarray, gold: np.ndarray) -> float:
    if scores.shape[0] == 0:
        raise UsageError("one_error needs at least one instance")
    top = np.argmax(scores, axis=1)  # first maximum, i.e. the smallest label id on ties
    return float(np.mean(~gold[np.arange(len(top)), top]))


def hamming_loss_from_arrays(gold: np.ndarray, pred: np.ndarray, denominator: str = "slots") -> float:
    if denominator not in HAMMING_DENOMINATORS:
        raise ConfigError(f"hamming denominator must be one of {HAMMING_DENOMINATORS}")
    wrong = np.count_nonzero(gold != pred)
    total = gold.size if denominator == "slots" else np.count_nonzero(gold)
    return float(wrong / total) if total else 0.0


def confusion_counts(gold: np.ndarray, pred: np.ndarray):
    """Per-label true positives, false positives and false negatives."""
    tp = np.count_nonzero(gold & pred, axis=0)
    fp = np.count_nonzero(~gold & pred, axis=0)
    fn = np.count_nonzero(gold & ~pred, axis=0)
    return tp, fp, fn


def _safe_div(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.divide(a, b, out=np.zeros_like(a), where=b > 0)


def prf(tp, fp, fn):
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2 * tp, 2 * tp + fp + fn)
    return precision, recall, f1


def macro_f1_from_arrays(gold: np.ndarray, pred: np.ndarray) -> float:
    return float(np.mean(prf(*confusion_counts(gold, pred))[2]))


def micro_f1_from_arrays(gold: np.ndarray, pred: np.ndarray) -> float:
    tp, fp, fn = (c.sum() for c in confusion_counts(gold, pred))
    return float(prf(tp, fp, fn)[2])


def one_error(instances: Sequence[EvalInstance]) -> float:
    """Fraction of instances whose top-scored label is not gold."""
    scores, gold, _ = _arrays(instances)
    return one_error_from_arrays(scores, gold)


def hamming_loss(instances, decided, denominator: str = "slots") -> float:
    """Mismatched label slots over ``N * l`` (or over the gold-label count)."""
    _, gold, pred = _arrays(instances, decided)
    return hamming_loss_from_arrays(gold, pred, denominator)


def macro_f1(instances, decided) -> float:
    _, gold, pred = _arrays(instances, decided)
    return macro_f1_from_arrays(gold, pred)


def micro_f1(instances, decided) -> float:
    _, gold, pred = _arrays(instances, decided)
    return micro_f1_from_arrays(gold, pred)


@dataclass
class MetricsReport:
    one_error: float
    hamming_loss: float
    macro_f1: float
    micro_f1: float
    per_label: list[dict] = field(default_factory=list)
    num_instances: int = 0
    hamming_denominator: str = "slots"

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "MetricsReport":
        return cls(**obj)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    def headline(self) -> str:
        """The four metrics: one-error and Hamming loss (lower is better), then the F1s."""
        return (f"OE(-) {self.one_error:.4f}  HL(-) {self.hamming_loss:.4f}  "
                f"MacroF1(+) {self.macro_f1:.4f}  MicroF1(+) {self.micro_f1:.4f}")

    def table(self) -> str:
        rows = [self.headline(), ""]
        rows.append(f"{'label':<16}{'prec':>8}{'recall':>8}{'f1':>8}{'support':>9}{'freq':>8}")
        for r in self.per_label:
            rows.append(
                f"{r['label']:<16}{r['precision']:>8.4f}{r['recall']:>8.4f}{r['f1']:>8.4f}"
                f"{r['support']:>9d}{r['frequency']:>8.4f}"
            )
        return "\n".join(rows)


def evaluate_arrays(scores, gold, pred, label_names=None, hamming_denominator="slots") -> MetricsReport:
    """Full report from [N, l] scores and boolean gold / decision matrices."""
    scores = np.asarray(scores, dtype=np.float64)
    gold = np.asarray(gold, dtype=bool)
    pred = np.asarray(pred, dtype=bool)
    if not (scores.shape == gold.shape == pred.shape) or scores.ndim != 2:
        raise ConfigError(f"shape mismatch: scores {scores.shape}, gold {gold.shape}, pred {pred.shape}")
    n, l = gold.shape
    names = list(label_names) if label_names is not None else [str(k) for k in range(l)]
    tp, fp, fn = confusion_counts(gold, pred)
    p, r, f = prf(tp, fp, fn)
    support = gold.sum(axis=0)
    per_label = [
        {"label": names[k], "precision": float(p[k]), "recall": float(r[k]), "f1": float(f[k]),
         "support": int(support[k]), "frequency": float(support[k] / n) if n else 0.0}
        for k in range(l)
    ]
    return MetricsReport(
        one_error_from_arrays(scores, gold),
        hamming_loss_from_arrays(gold, pred, hamming_denominator),
        float(np.mean(f)),
        micro_f1_from_arrays(gold, pred),
        per_label,
        n,
        hamming_denominator,
    )


def evaluate(instances, decided, label_names=None, hamming_denominator="slots") -> MetricsReport:
    scores, gold, pred = _arrays(instances, decided)
    return evaluate_arrays(scores, gold, pred, label_names, hamming_denominator)


@dataclass
class Predictions:
    ids: list[str]
    scores: np.ndarray
    gold: np.ndarray
    predicted: np.ndarray
    labels: list[str]


def read_predictions(path, labels: Sequence[str] | None = None) -> Predictions:
    """Parse a predictions file; label order comes from ``labels`` or ``labels.json`` beside it."""
    path = Path(path)
    if labels is None:
        side = path.parent / "labels.json"
        if not side.exists():
            raise ConfigError(f"no label order given and {side} does not exist")
        labels = json.loads(side.read_text())
    labels = list(labels)
    index = {name: k for k, name in enumerate(labels)}
    ids, scores, gold, pred = [], [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(f"invalid JSON ({exc.msg})", lineno, path) from None
            try:
                s = [float(x) for x in rec["scores"]]
                g = [index[x] for x in rec["gold"]]
                p = [index[x] for x in rec["predicted"]]
                doc_id = str(rec["id"])
            except KeyError as exc:
                raise CorpusParseError(f"missing field or unknown label {exc}", lineno, path) from None
            except (TypeError, ValueError) as exc:
                raise CorpusParseError(f"malformed record: {exc}", lineno, path) from None
            if len(s) != len(labels):
                raise CorpusParseError(f"{len(s)} scores for {len(labels)} labels", lineno, path)
            if not g:
                raise CorpusParseError("empty gold label set", lineno, path)
            ids.append(doc_id)
            scores.append(s)
            gold.append(np.isin(np.arange(len(labels)), g))
            pred.append(np.isin(np.arange(len(labels)), p))
    if not ids:
        raise CorpusParseError("no predictions in file", None, path)
    return Predictions(ids, np.array(scores), np.array(gold), np.array(pred), labels)


def evaluate_file(path, labels=None, hamming_denominator="slots") -> MetricsReport:
    preds = read_predictions(path, labels)
    return evaluate_arrays(preds.scores, preds.gold, preds.predicted, preds.labels, hamming_denominator)
