"""Dataset ingestion, vocabularies, batching and the synthetic corpus generator.

On-disk format is JSON Lines, one document per line::

    {"id": "doc-1", "sentences": [["tok", ...], ...], "labels": ["rock", ...]}
"""
from __future__ import annotations

import itertools
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, CorpusParseError, ParameterError

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"


@dataclass
class Document:
    id: str
    sentences: list[list[str]]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        # set semantics, first-seen order kept for readability
        self.labels = tuple(dict.fromkeys(self.labels))

    @property
    def tokens(self) -> list[str]:
        return [tok for sent in self.sentences for tok in sent]

    def to_json(self) -> dict:
        return {"id": self.id, "sentences": self.sentences, "labels": list(self.labels)}


# ---------------------------------------------------------------- file I/O

def _parse_record(obj, lineno: int, path, require_labels: bool) -> Document:
    if not isinstance(obj, dict):
        raise CorpusParseError("record is not a JSON object", lineno, path)
    try:
        doc_id, sentences = obj["id"], obj["sentences"]
    except KeyError as exc:
        raise CorpusParseError(f"missing field {exc.args[0]!r}", lineno, path) from None
    labels = obj.get("labels", [])
    if not isinstance(doc_id, str):
        raise CorpusParseError("'id' must be a string", lineno, path)
    if (
        not isinstance(sentences, list)
        or not sentences
        or not all(isinstance(s, list) for s in sentences)
    ):
        raise CorpusParseError("'sentences' must be a non-empty list of token lists", lineno, path)
    for s in sentences:
        if not s:
            raise CorpusParseError(f"document {doc_id!r} has an empty sentence", lineno, path)
        if not all(isinstance(tok, str) for tok in s):
            raise CorpusParseError("tokens must be strings", lineno, path)
    if not isinstance(labels, list) or not all(isinstance(lab, str) for lab in labels):
        raise CorpusParseError("'labels' must be a list of strings", lineno, path)
    if require_labels and not labels:
        raise CorpusParseError(f"document {doc_id!r} has an empty label set", lineno, path)
    return Document(doc_id, [list(s) for s in sentences], tuple(labels))


def load_corpus(path, require_labels: bool = True) -> list[Document]:
    """Read a JSONL corpus. Set ``require_labels=False`` for prediction-time input."""
    path = Path(path)
    docs = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(f"invalid JSON ({exc.msg})", lineno, path) from None
            docs.append(_parse_record(obj, lineno, path, require_labels))
    return docs


def write_corpus(docs: Iterable[Document], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_json(), ensure_ascii=False) + "\n")


# ------------------------------------------------------------- vocabularies

class Vocab:
    """Token vocabulary with reserved ids 0 (PAD) and 1 (UNK)."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos = [PAD_TOKEN, UNK_TOKEN, *tokens]
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ConfigError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.itos)

    def __contains__(self, tok):
        return tok in self.stoi and self.stoi[tok] > UNK

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(tok, UNK) for tok in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def to_list(self) -> list[str]:
        return self.itos[2:]


class LabelVocab:
    def __init__(self, labels: Sequence[str]):
        self.itos = list(labels)
        self.stoi = {lab: i for i, lab in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ConfigError("duplicate labels in label vocabulary")

    def __len__(self):
        return len(self.itos)

    def __contains__(self, lab):
        return lab in self.stoi

    def encode(self, labels: Iterable[str]) -> list[int]:
        try:
            return [self.stoi[lab] for lab in labels]
        except KeyError as exc:
            raise ConfigError(f"unknown label {exc.args[0]!r}; known: {self.itos}") from None

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def to_list(self) -> list[str]:
        return list(self.itos)


def _by_frequency(counts: Counter, min_count: int = 1) -> list[str]:
    return [k for k, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])) if n >= min_count]


def build_vocabs(docs: Sequence[Document], min_count: int = 1) -> tuple[Vocab, LabelVocab]:
    """Build token and label vocabularies with frequency-then-lexicographic ids."""
    if not docs:
        raise ConfigError("cannot build vocabularies from an empty corpus")
    tokens = Counter(tok for d in docs for tok in d.tokens)
    labels = Counter(lab for d in docs for lab in d.labels)
    return Vocab(_by_frequency(tokens, min_count)), LabelVocab(_by_frequency(labels))


# ----------------------------------------------------------------- batching

@dataclass
class Batch:
    """Padded id arrays for a group of documents.

    flat: ``word_ids``/``word_mask`` are [B, t]; hierarchical: [B, m, t] with
    ``sentence_mask`` [B, m]. ``labels`` is multi-hot [B, l].
    """

    mode: str
    word_ids: np.ndarray
    word_mask: np.ndarray
    labels: np.ndarray
    doc_ids: list[str]
    sentence_mask: np.ndarray | None = None

    def __len__(self):
        return self.word_ids.shape[0]

    def take(self, idx) -> "Batch":
        idx = np.asarray(idx, dtype=np.int64)
        return Batch(
            self.mode,
            self.word_ids[idx],
            self.word_mask[idx],
            self.labels[idx],
            [self.doc_ids[i] for i in idx],
            None if self.sentence_mask is None else self.sentence_mask[idx],
        )

    def trimmed(self) -> "Batch":
        """Drop trailing columns (and sentences) that are padding in every row."""
        if self.mode == "flat":
            t = max(1, int(np.flatnonzero(self.word_mask.any(axis=0)).max(initial=0)) + 1)
            if t == self.word_ids.shape[1]:
                return self
            return Batch(self.mode, self.word_ids[:, :t], self.word_mask[:, :t],
                         self.labels, self.doc_ids)
        m = max(1, int(np.flatnonzero(self.sentence_mask.any(axis=0)).max(initial=0)) + 1)
        t = max(1, int(np.flatnonzero(self.word_mask.any(axis=(0, 1))).max(initial=0)) + 1)
        if (m, t) == self.word_ids.shape[1:]:
            return self
        return Batch(self.mode, self.word_ids[:, :m, :t], self.word_mask[:, :m, :t],
                     self.labels, self.doc_ids, self.sentence_mask[:, :m])

    def iter_batches(self, size: int, order=None):
        order = np.arange(len(self)) if order is None else np.asarray(order)
        for start in range(0, len(order), size):
            yield self.take(order[start:start + size])


def _check_mode(mode: str):
    if mode not in ("flat", "hierarchical"):
        raise ConfigError(f"batch mode must be 'flat' or 'hierarchical', got {mode!r}")


def encode_documents(
    docs: Sequence[Document],
    vocab: Vocab,
    label_vocab: LabelVocab,
    t: int,
    m: int = 1,
    mode: str = "flat",
) -> Batch:
    """Encode every document into one padded :class:`Batch` (prefix truncation)."""
    _check_mode(mode)
    if t < 1 or m < 1:
        raise ParameterError(f"t and m must be >= 1, got t={t}, m={m}")
    n = len(docs)
    labels = np.zeros((n, len(label_vocab)))
    if mode == "flat":
        ids = np.zeros((n, t), dtype=np.int64)
        for r, doc in enumerate(docs):
            row = vocab.encode(doc.tokens[:t])
            ids[r, : len(row)] = row
        sent_mask = None
        lengths = np.array([min(len(d.tokens), t) for d in docs])
        mask = (np.arange(t)[None, :] < lengths[:, None]).astype(np.float64)
    else:
        ids = np.zeros((n, m, t), dtype=np.int64)
        mask = np.zeros((n, m, t))
        for r, doc in enumerate(docs):
            for j, sent in enumerate(doc.sentences[:m]):
                row = vocab.encode(sent[:t])
                ids[r, j, : len(row)] = row
                mask[r, j, : len(row)] = 1.0
        sent_mask = (mask.sum(axis=2) > 0).astype(np.float64)
    for r, doc in enumerate(docs):
        labels[r, label_vocab.encode(doc.labels)] = 1.0
    return Batch(mode, ids, mask, labels, [d.id for d in docs], sent_mask)


def batchify(
    docs: Sequence[Document],
    vocab: Vocab,
    label_vocab: LabelVocab,
    t: int,
    m: int = 1,
    mode: str = "flat",
    batch_size: int | None = None,
) -> list[Batch]:
    """Split ``docs`` (in order) into padded batches of at most ``batch_size``."""
    full = encode_documents(docs, vocab, label_vocab, t, m, mode)
    if batch_size is None:
        return [full]
    return list(full.iter_batches(batch_size))


# -------------------------------------------------------------- statistics

@dataclass
class CorpusStats:
    num_docs: int
    vocab_size: int
    num_labels: int
    avg_labels_per_doc: float
    avg_words_per_doc: float
    label_frequency: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "num_docs": self.num_docs,
            "vocab_size": self.vocab_size,
            "num_labels": self.num_labels,
            "avg_labels_per_doc": self.avg_labels_per_doc,
            "avg_words_per_doc": self.avg_words_per_doc,
            "label_frequency": self.label_frequency,
        }


def corpus_stats(docs: Sequence[Document]) -> CorpusStats:
    if not docs:
        raise ConfigError("corpus_stats needs at least one document")
    freq = Counter(lab for d in docs for lab in d.labels)
    return CorpusStats(
        num_docs=len(docs),
        vocab_size=len({tok for d in docs for tok in d.tokens}),
        num_labels=len(freq),
        avg_labels_per_doc=sum(len(d.labels) for d in docs) / len(docs),
        avg_words_per_doc=sum(len(d.tokens) for d in docs) / len(docs),
        label_frequency=dict(sorted(freq.items())),
    )


def cooccurrence(docs: Sequence[Document], label_names: Sequence[str]) -> np.ndarray:
    """Empirical ``P(b in doc | a in doc)`` as an [l, l] matrix (row a, column b)."""
    lv = LabelVocab(label_names)
    y = np.zeros((len(docs), len(lv)))
    for r, d in enumerate(docs):
        y[r, lv.encode(d.labels)] = 1.0
    counts = y.T @ y
    with np.errstate(invalid="ignore", divide="ignore"):
        out = counts / np.diag(counts)[:, None]
    return np.nan_to_num(out)


# --------------------------------------------------------- synthetic corpus

@dataclass
class SynthTruth:
    """Ground truth emitted alongside a synthetic corpus."""

    labels: list[str]
    correlation: np.ndarray           # P(b | a), row a, column b
    label_probability: np.ndarray     # P(a)
    signature_tokens: dict[str, list[str]]
    correlation_pairs: list[tuple[str, str, float]]

    def to_json(self) -> dict:
        return {
            "labels": self.labels,
            "correlation": self.correlation.tolist(),
            "label_probability": self.label_probability.tolist(),
            "signature_tokens": self.signature_tokens,
            "correlation_pairs": [list(p) for p in self.correlation_pairs],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SynthTruth":
        return cls(
            labels=list(obj["labels"]),
            correlation=np.asarray(obj["correlation"], dtype=np.float64),
            label_probability=np.asarray(obj["label_probability"], dtype=np.float64),
            signature_tokens={k: list(v) for k, v in obj["signature_tokens"].items()},
            correlation_pairs=[(a, b, float(s)) for a, b, s in obj["correlation_pairs"]],
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "SynthTruth":
        return cls.from_json(json.loads(Path(path).read_text()))


def label_names(num_labels: int) -> list[str]:
    width = len(str(num_labels - 1))
    return [f"L{k:0{width}d}" for k in range(num_labels)]


def _label_set_distribution(rates, edges, max_labels):
    """Exact distribution over final label sets of the generator (after rejection)."""
    l = len(rates)
    dist: dict[frozenset, float] = {}

    def expand(current: frozenset, queue: tuple, prob: float):
        if len(current) > max_labels:
            return
        if not queue:
            dist[current] = dist.get(current, 0.0) + prob
            return
        head, rest = queue[0], queue[1:]
        branches = [(current, rest, prob)]
        for b, s in edges.get(head, ()):
            new = []
            for cur, q, p in branches:
                if b in cur:
                    new.append((cur, q, p))
                    continue
                if s > 0:
                    new.append((cur | {b}, q + (b,), p * s))
                if s < 1:
                    new.append((cur, q, p * (1 - s)))
            branches = new
        for cur, q, p in branches:
            if p > 0:
                expand(cur, q, p)

    for size in range(1, max_labels + 1):
        for base in itertools.combinations(range(l), size):
            p = 1.0
            for k in range(l):
                p *= rates[k] if k in base else 1.0 - rates[k]
            if p > 0:
                expand(frozenset(base), tuple(base), p)
    total = sum(dist.values())
    return {s: p / total for s, p in dist.items()}


def synth_corpus(
    num_labels: int,
    num_docs: int,
    correlation_pairs: Sequence[tuple] = (),
    signature_tokens_per_label: int = 5,
    noise_rate: float = 0.3,
    rng: np.random.Generator | int | None = 0,
    label_rates: Sequence[float] | float = 0.3,
    tokens_per_label: int = 4,
    sentence_length: int = 6,
    noise_vocab_size: int = 40,
    max_labels: int = 3,
) -> tuple[list[Document], SynthTruth]:
    """Generate documents whose label sets carry planted co-occurrences.

    Each label is switched on independently with its base rate; every time a
    label ``a`` enters the set, each planted pair ``(a, b, strength)`` adds
    ``b`` with probability ``strength``. Sets that end up empty or larger than
    ``max_labels`` are redrawn. A document's text is ``tokens_per_label``
    draws from each of its labels' private signature tokens, padded with
    noise tokens so that roughly ``noise_rate`` of its tokens are noise, then
    shuffled and cut into sentences.

    ``correlation_pairs`` holds ``(a, b, strength)`` with labels given as ids
    or names. Returns the documents and a :class:`SynthTruth` whose
    ``correlation`` matrix is the exact ``P(b | a)`` of this process.
    """
    if num_labels < 2:
        raise ParameterError(f"need at least 2 labels, got {num_labels}")
    if signature_tokens_per_label < 1 or tokens_per_label < 1:
        raise ParameterError("signature_tokens_per_label and tokens_per_label must be >= 1")
    if not 0.0 <= noise_rate < 1.0:
        raise ParameterError(f"noise_rate must be in [0, 1), got {noise_rate}")
    if num_docs < 0 or max_labels < 1 or sentence_length < 1:
        raise ParameterError("num_docs >= 0, max_labels >= 1 and sentence_length >= 1 required")
    if noise_rate > 0 and noise_vocab_size < 1:
        raise ParameterError("noise tokens requested but noise_vocab_size < 1")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    names = label_names(num_labels)
    rates = np.broadcast_to(np.asarray(label_rates, dtype=np.float64), (num_labels,)).copy()
    if ((rates <= 0) | (rates >= 1)).any():
        raise ParameterError("label rates must lie in (0, 1)")

    def resolve(lab):
        if isinstance(lab, str):
            if lab not in names:
                raise ParameterError(f"unknown label {lab!r} in correlation_pairs")
            return names.index(lab)
        if not 0 <= int(lab) < num_labels:
            raise ParameterError(f"label id {lab} out of range")
        return int(lab)

    edges: dict[int, list[tuple[int, float]]] = {}
    pairs = []
    for a, b, s in correlation_pairs:
        a, b, s = resolve(a), resolve(b), float(s)
        if not 0.0 <= s <= 1.0:
            raise ParameterError(f"correlation strength must be in [0, 1], got {s}")
        if a == b:
            raise ParameterError("a label cannot be correlated with itself")
        edges.setdefault(a, []).append((b, s))
        pairs.append((names[a], names[b], s))

    signatures = {
        name: [f"{name.lower()}_w{j}" for j in range(signature_tokens_per_label)] for name in names
    }
    noise = [f"n{j:02d}" for j in range(noise_vocab_size)]

    def draw_labels() -> list[int]:
        while True:
            base = [k for k in range(num_labels) if rng.random() < rates[k]]
            if not base or len(base) > max_labels:
                continue
            current, queue = set(base), list(base)
            while queue:
                head = queue.pop(0)
                for b, s in edges.get(head, ()):
                    if b not in current and rng.random() < s:
                        current.add(b)
                        queue.append(b)
            if len(current) <= max_labels:
                return sorted(current)

    docs = []
    width = len(str(max(num_docs - 1, 0)))
    for i in range(num_docs):
        labs = draw_labels()
        toks = [
            signatures[names[k]][j]
            for k in labs
            for j in rng.integers(0, signature_tokens_per_label, tokens_per_label)
        ]
        n_noise = int(round(len(toks) * noise_rate / (1.0 - noise_rate)))
        toks += [noise[j] for j in rng.integers(0, len(noise), n_noise)] if n_noise else []
        toks = [toks[j] for j in rng.permutation(len(toks))]
        sents = [toks[s:s + sentence_length] for s in range(0, len(toks), sentence_length)]
        docs.append(Document(f"syn-{i:0{width}d}", sents, tuple(names[k] for k in labs)))

    dist = _label_set_distribution(rates, edges, max_labels)
    joint = np.zeros((num_labels, num_labels))
    for labs, p in dist.items():
        idx = np.fromiter(labs, dtype=np.int64)
        joint[np.ix_(idx, idx)] += p
    marginal = np.diag(joint).copy()
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.nan_to_num(joint / marginal[:, None])
    truth = SynthTruth(names, corr, marginal, signatures, pairs)
    return docs, truth


def split_corpus(docs: Sequence[Document], fractions=(0.7, 0.15, 0.15), rng=None):
    """Shuffle and split into consecutive parts whose sizes sum to ``len(docs)``."""
    n = len(docs)
    order = np.arange(n) if rng is None else np.random.default_rng(rng).permutation(n)
    cuts = np.floor(np.cumsum(fractions)[:-1] * n + 1e-9).astype(int)
    return [[docs[i] for i in part] for part in np.split(order, cuts)]
