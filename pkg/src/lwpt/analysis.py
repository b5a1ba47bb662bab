"""Label-correlation analyses over label-wise document representations.

* nearest neighbours of a document under its k-wise representation, with
  the label make-up of those neighbours;
* a label x label matrix of neighbour label frequencies, optionally rank
  correlated against a planted ground truth;
* mean F1 of labels bucketed by training frequency.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

from .checkpoint import Checkpoint
from .corpus import Document, LabelVocab, SynthTruth, Vocab, encode_documents
from .encoders import Encoder
from .errors import ConfigError, ParameterError
from .metrics import MetricsReport
from .pretrain import encoders_from_checkpoint
from .tensor import no_grad

SOURCES = ("t", "c", "fused")
DISPLAY_THRESHOLD = 0.10
DEFAULT_TOPK = 50


@dataclass
class ReprIndex:
    """``reps[k]`` holds every document's k-wise vector: [l, N, D]."""

    reps: np.ndarray
    doc_ids: list[str]
    label_sets: list[frozenset]
    label_names: list[str]
    source: str = "t"

    def __post_init__(self):
        self._pos = {d: i for i, d in enumerate(self.doc_ids)}
        if len(self._pos) != len(self.doc_ids):
            raise ConfigError("document ids in an index must be unique")

    @property
    def num_docs(self) -> int:
        return self.reps.shape[1]

    def position(self, doc_id: str) -> int:
        try:
            return self._pos[doc_id]
        except KeyError:
            raise KeyError(f"unknown document id {doc_id!r}") from None

    def label_id(self, name: str) -> int:
        if name not in self.label_names:
            raise KeyError(f"unknown label {name!r}; valid labels: {', '.join(self.label_names)}")
        return self.label_names.index(name)

    def membership(self) -> np.ndarray:
        """Boolean [N, l] label membership."""
        y = np.zeros((self.num_docs, len(self.label_names)), dtype=bool)
        for i, s in enumerate(self.label_sets):
            y[i, list(s)] = True
        return y


def encode_index(docs: Sequence[Document], t_enc: Encoder, c_enc: Encoder, vocab: Vocab,
                 label_vocab: LabelVocab, t: int, m: int = 1, source: str = "t",
                 batch_size: int = 256) -> ReprIndex:
    """Eval-mode (no dropout) label-wise representations of every document."""
    if source not in SOURCES:
        raise ConfigError(f"source must be one of {SOURCES}, got {source!r}")
    if t_enc.config.vocab_size != len(vocab) or t_enc.config.num_labels != len(label_vocab):
        raise ConfigError("encoder dims do not match the vocabularies")
    batch = encode_documents(docs, vocab, label_vocab, t, m, t_enc.config.mode)
    parts = []
    with no_grad():
        for b in batch.iter_batches(batch_size):
            if source == "t":
                q = t_enc.encode_all(b).data
            elif source == "c":
                q = c_enc.encode_all(b).data
            else:
                q = np.concatenate([t_enc.encode_all(b).data, c_enc.encode_all(b).data], axis=-1)
            parts.append(q)
    reps = np.concatenate(parts).transpose(1, 0, 2).copy()          # [l, N, D]
    sets = [frozenset(label_vocab.encode(d.labels)) for d in docs]
    return ReprIndex(reps, [d.id for d in docs], sets, label_vocab.to_list(), source)


def build_index(docs: Sequence[Document], checkpoint: Checkpoint, source: str = "t",
                batch_size: int = 256) -> ReprIndex:
    """Index ``docs`` with the encoders and vocabularies stored in ``checkpoint``."""
    vocab, label_vocab = Vocab(checkpoint.vocab), LabelVocab(checkpoint.labels)
    unknown = sorted({lab for d in docs for lab in d.labels} - set(checkpoint.labels))
    if unknown:
        raise ConfigError(f"corpus labels {unknown} are not in the checkpoint label set")
    t_enc, c_enc = encoders_from_checkpoint(checkpoint)
    dims = checkpoint.dims
    return encode_index(docs, t_enc, c_enc, vocab, label_vocab, dims["t"], dims.get("m", 1),
                        source, batch_size)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, norm, out=np.zeros_like(x), where=norm > 0)


def cosine_matrix(x: np.ndarray) -> np.ndarray:
    u = _unit_rows(x)
    return np.clip(u @ u.T, -1.0, 1.0)


def _ranked(sim_row: np.ndarray, exclude: int) -> np.ndarray:
    """Document positions by descending similarity, ties by smaller position, ``exclude`` dropped."""
    order = np.argsort(-sim_row, kind="stable")
    return order[order != exclude]


@dataclass
class NeighborTable:
    query: str
    label: str
    neighbors: list[str]
    scores: list[float]
    frequency: dict[str, float]
    threshold: float = DISPLAY_THRESHOLD

    def displayed(self) -> dict[str, float]:
        """Frequencies at or above the display threshold, largest first."""
        keep = [(k, v) for k, v in self.frequency.items() if v >= self.threshold]
        return dict(sorted(keep, key=lambda kv: (-kv[1], kv[0])))

    def to_json(self) -> dict:
        out = asdict(self)
        out["displayed"] = self.displayed()
        return out

    def table(self) -> str:
        lines = [f"query {self.query} under {self.label}-wise representation, top {len(self.neighbors)}"]
        lines += [f"  {name:<16}{p:6.0%}" for name, p in self.displayed().items()]
        return "\n".join(lines)


def neighbors(index: ReprIndex, query: str, label, K: int = DEFAULT_TOPK,
              threshold: float = DISPLAY_THRESHOLD) -> NeighborTable:
    """Top-K cosine neighbours of ``query`` under its ``label``-wise vector."""
    k = index.label_id(label) if isinstance(label, str) else int(label)
    if not 0 <= k < len(index.label_names):
        raise KeyError(f"label id {k} out of range")
    if not 1 <= K < index.num_docs:
        raise ParameterError(f"K must satisfy 1 <= K < N = {index.num_docs}, got {K}")
    q = index.position(query)
    u = _unit_rows(index.reps[k])
    sim = np.clip(u @ u[q], -1.0, 1.0)
    top = _ranked(sim, q)[:K]
    member = index.membership()[top]
    freq = {name: float(member[:, j].mean()) for j, name in enumerate(index.label_names)}
    return NeighborTable(query, index.label_names[k], [index.doc_ids[i] for i in top],
                         [float(sim[i]) for i in top], freq, threshold)


@dataclass
class CorrelationReport:
    labels: list[str]
    measured: np.ndarray            # [l, l]: row a = mean label frequencies among a-wise neighbours
    queries: list[int]              # number of a-holding query documents per row
    K: int
    planted: np.ndarray | None = None
    spearman: float | None = None

    def to_json(self) -> dict:
        return {
            "labels": self.labels,
            "K": self.K,
            "measured": self.measured.tolist(),
            "queries": self.queries,
            "planted": None if self.planted is None else self.planted.tolist(),
            "spearman": self.spearman,
        }


def off_diagonal(a: np.ndarray) -> np.ndarray:
    return a[~np.eye(a.shape[0], dtype=bool)]


def correlation_report(index: ReprIndex, truth: SynthTruth | np.ndarray | None = None,
                       K: int = DEFAULT_TOPK) -> CorrelationReport:
    """Row a, column b: mean fraction of a-wise top-K neighbours that carry b,
    averaged over query documents that carry a.

    With a planted truth matrix the Spearman correlation between measured
    and planted off-diagonal entries is included.
    """
    if not 1 <= K < index.num_docs:
        raise ParameterError(f"K must satisfy 1 <= K < N = {index.num_docs}, got {K}")
    l = len(index.label_names)
    member = index.membership()
    measured = np.zeros((l, l))
    counts = []
    for a in range(l):
        holders = np.flatnonzero(member[:, a])
        counts.append(int(holders.size))
        if holders.size == 0:
            continue
        u = _unit_rows(index.reps[a])
        sim = np.clip(u[holders] @ u.T, -1.0, 1.0)
        sim[np.arange(holders.size), holders] = -np.inf          # drop the query itself
        top = np.argsort(-sim, axis=1, kind="stable")[:, :K]
        measured[a] = member[top].mean(axis=1).mean(axis=0)
    planted, rho = None, None
    if truth is not None:
        planted = np.asarray(truth.correlation if isinstance(truth, SynthTruth) else truth, dtype=np.float64)
        if planted.shape != (l, l):
            raise ConfigError(f"planted matrix {planted.shape} does not match {l} labels")
        if isinstance(truth, SynthTruth) and list(truth.labels) != index.label_names:
            order = [list(truth.labels).index(n) for n in index.label_names]
            planted = planted[np.ix_(order, order)]
        res = spearmanr(off_diagonal(measured), off_diagonal(planted))
        rho = float(res.statistic) if np.isfinite(res.statistic) else None
    return CorrelationReport(index.label_names, measured, counts, K, planted, rho)


@dataclass
class FrequencyBin:
    low: float
    high: float
    labels: list[str] = field(default_factory=list)
    mean_f1: float | None = None

    @property
    def count(self) -> int:
        return len(self.labels)


@dataclass
class FrequencyF1Report:
    bins: list[FrequencyBin]
    frequency: dict[str, int]

    def to_json(self) -> dict:
        return {
            "bins": [dict(asdict(b), count=b.count) for b in self.bins],
            "frequency": self.frequency,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin", "low", "high", "count", "mean_f1", "labels"])
        for i, b in enumerate(self.bins):
            w.writerow([i, b.low, b.high, b.count, "" if b.mean_f1 is None else b.mean_f1,
                        " ".join(b.labels)])
        return buf.getvalue()


def frequency_bins(freqs: np.ndarray, num_bins: int = 5, scheme: str = "log") -> np.ndarray:
    """Bin edges over label frequencies (``num_bins + 1`` values, last edge inclusive)."""
    if num_bins < 1:
        raise ParameterError("num_bins must be >= 1")
    lo, hi = float(freqs.min()), float(freqs.max())
    if scheme == "log":
        lo = max(lo, 1.0)
        hi = max(hi, lo)
        return np.geomspace(lo, hi, num_bins + 1) if hi > lo else np.full(num_bins + 1, lo)
    if scheme == "linear":
        return np.linspace(lo, hi, num_bins + 1)
    raise ConfigError(f"bin scheme must be 'log' or 'linear', got {scheme!r}")


def frequency_f1_report(train_docs: Sequence[Document], report: MetricsReport, num_bins: int = 5,
                        scheme: str = "log") -> FrequencyF1Report:
    """Mean per-label F1 for labels bucketed by how many training documents carry them."""
    names = [r["label"] for r in report.per_label]
    f1 = {r["label"]: r["f1"] for r in report.per_label}
    counts = {n: 0 for n in names}
    for d in train_docs:
        for lab in d.labels:
            if lab in counts:
                counts[lab] += 1
    freqs = np.array([counts[n] for n in names], dtype=np.float64)
    edges = frequency_bins(freqs, num_bins, scheme)
    # every label lands in exactly one bin: right-open except the last
    which = np.clip(np.searchsorted(edges, freqs, side="right") - 1, 0, num_bins - 1)
    bins = []
    for i in range(num_bins):
        labs = [n for n, w in zip(names, which) if w == i]
        mean = float(np.mean([f1[n] for n in labs])) if labs else None
        bins.append(FrequencyBin(float(edges[i]), float(edges[i + 1]), labs, mean))
    return FrequencyF1Report(bins, counts)


def write_reports(out_dir, table: NeighborTable | None = None, corr: CorrelationReport | None = None,
                  freq: FrequencyF1Report | None = None) -> list[str]:
    """Write ``neighbors.json``, ``correlation.json`` and ``freq_f1.csv`` (whichever are given)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if table is not None:
        (out / "neighbors.json").write_text(json.dumps(table.to_json(), indent=1) + "\n")
        written.append("neighbors.json")
    if corr is not None:
        (out / "correlation.json").write_text(json.dumps(corr.to_json(), indent=1) + "\n")
        written.append("correlation.json")
    if freq is not None:
        (out / "freq_f1.csv").write_text(freq.to_csv())
        (out / "freq_f1.json").write_text(json.dumps(freq.to_json(), indent=1) + "\n")
        written += ["freq_f1.csv", "freq_f1.json"]
    return written
