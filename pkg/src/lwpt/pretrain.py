"""Label-wise contrastive pre-training of a T-Encoder / C-Encoder pair.

For every (target document, label k) pair, one document that also carries
k is hidden among ``n - 1`` documents that do not; the encoders are trained
so that the dot product of the target's k-wise vector with the positive's
k-wise vector wins a softmax over all candidates.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import functional as F
from .checkpoint import Checkpoint
from .corpus import Batch, Document, LabelVocab, Vocab, encode_documents
from .encoders import Encoder, EncoderConfig
from .errors import ConfigError, SkipInstance
from .optim import AdamState, adam_step
from .tensor import Tensor, as_tensor, backward, reshape, tsum

log = logging.getLogger(__name__)


@dataclass
class PretrainConfig:
    num_candidates: int = 3
    batch_size: int = 128
    iterations: int = 3000
    learning_rate: float = 1e-3
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.num_candidates < 2:
            raise ConfigError("num_candidates must be >= 2 (one positive, at least one negative)")
        if self.batch_size < 1 or self.iterations < 0:
            raise ConfigError("batch_size must be >= 1 and iterations >= 0")


@dataclass(frozen=True)
class PretrainInstance:
    """Indices into the corpus: target, label, candidates and where the positive sits."""

    target: int
    label_k: int
    candidates: tuple[int, ...]
    positive_index: int


class LabelIndex:
    """Which documents carry (and lack) each label id."""

    def __init__(self, label_sets: Sequence[Sequence[int]], num_labels: int):
        self.label_sets = [frozenset(s) for s in label_sets]
        self.num_labels = num_labels
        y = np.zeros((len(self.label_sets), num_labels), dtype=bool)
        for i, s in enumerate(self.label_sets):
            y[i, list(s)] = True
        self.with_label = [np.flatnonzero(y[:, k]) for k in range(num_labels)]
        self.without_label = [np.flatnonzero(~y[:, k]) for k in range(num_labels)]

    @classmethod
    def from_docs(cls, docs: Sequence[Document], label_vocab: LabelVocab) -> "LabelIndex":
        return cls([label_vocab.encode(d.labels) for d in docs], len(label_vocab))

    def __len__(self):
        return len(self.label_sets)


def sample_instance(index: LabelIndex, target: int, k: int, n: int, rng) -> PretrainInstance:
    """Draw one positive (uniform over other holders of ``k``) and ``n - 1`` negatives.

    Raises :class:`SkipInstance` when no other document carries ``k`` and
    :class:`ConfigError` when fewer than ``n - 1`` documents lack it.
    """
    if k not in index.label_sets[target]:
        raise ConfigError(f"document {target} does not carry label {k}")
    holders = index.with_label[k]
    holders = holders[holders != target]
    if holders.size == 0:
        raise SkipInstance(f"no other document carries label {k}")
    pool = index.without_label[k]
    if pool.size < n - 1:
        raise ConfigError(
            f"label {k}: need {n - 1} negatives but only {pool.size} documents lack it"
        )
    positive = int(holders[rng.integers(holders.size)])
    negatives = rng.choice(pool, size=n - 1, replace=False).tolist()
    pos = int(rng.integers(n))
    cands = negatives[:pos] + [positive] + negatives[pos:]
    return PretrainInstance(target, k, tuple(int(c) for c in cands), pos)


class InstanceStream:
    """Endless shuffled stream of instances, one per (document, label) pair per epoch.

    Pairs with no available positive are dropped and counted in ``skipped``.
    """

    def __init__(self, index: LabelIndex, n: int, rng):
        self.index = index
        self.n = n
        self.rng = rng
        self.pairs = [(i, k) for i, s in enumerate(index.label_sets) for k in sorted(s)]
        self.skipped = 0
        self.epochs = 0

    def epoch(self) -> list[PretrainInstance]:
        out = []
        for j in self.rng.permutation(len(self.pairs)):
            i, k = self.pairs[j]
            try:
                out.append(sample_instance(self.index, i, k, self.n, self.rng))
            except SkipInstance:
                self.skipped += 1
        self.epochs += 1
        return out

    def __iter__(self) -> Iterator[PretrainInstance]:
        while True:
            batch = self.epoch()
            if not batch:
                raise ConfigError("no (document, label) pair has a positive candidate")
            yield from batch

    def batches(self, size: int) -> Iterator[list[PretrainInstance]]:
        it = iter(self)
        while True:
            yield [next(it) for _ in range(size)]


def instance_stream(index: LabelIndex, n: int, rng) -> InstanceStream:
    return InstanceStream(index, n, rng)


def pretrain_loss(q_target, q_cands, positive_index) -> Tensor:
    """Mean over instances of ``-log softmax(q_t . q_c_i)[positive]``.

    Accepts a single instance (``[D]``, ``[n, D]``, int) or a batch
    (``[B, D]``, ``[B, n, D]``, int array ``[B]``).
    """
    qt, qc = as_tensor(q_target), as_tensor(q_cands)
    if qt.ndim == 1:
        qt = reshape(qt, (1, qt.shape[0]))
        qc = reshape(qc, (1, *qc.shape))
    B, n, D = qc.shape
    if qt.shape != (B, D):
        raise ConfigError(f"target {qt.shape} and candidates {qc.shape} do not align")
    pos = np.broadcast_to(np.asarray(positive_index, dtype=np.int64), (B,))
    scores = tsum(reshape(qt, (B, 1, D)) * qc, axis=-1)
    logp = F.log_softmax(scores, axis=-1)
    return -tsum(logp[np.arange(B), pos]) * (1.0 / B)


@dataclass
class PretrainResult:
    t_encoder: Encoder
    c_encoder: Encoder
    loss_history: list[float] = field(default_factory=list)
    skipped: int = 0
    epochs: int = 0


def instance_loss(t_enc: Encoder, c_enc: Encoder, corpus: Batch, instances, training=False, rng=None):
    targets = np.array([x.target for x in instances])
    ks = np.array([x.label_k for x in instances])
    cands = np.array([x.candidates for x in instances])
    pos = np.array([x.positive_index for x in instances])
    B, n = cands.shape
    qt = t_enc.encode(corpus.take(targets), ks, training, rng)
    qc = c_enc.encode(corpus.take(cands.reshape(-1)), np.repeat(ks, n), training, rng)
    return pretrain_loss(qt, reshape(qc, (B, n, qc.shape[-1])), pos)


def seed_streams(seed: int, count: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def run_pretraining(
    docs: Sequence[Document],
    vocab: Vocab,
    label_vocab: LabelVocab,
    encoder_config: EncoderConfig,
    config: PretrainConfig,
    t: int,
    m: int = 1,
) -> PretrainResult:
    """Train both encoders jointly with Adam on the contrastive objective."""
    init_t, init_c, sample_rng, drop_rng = seed_streams(config.seed, 4)
    t_enc = Encoder(encoder_config, rng=init_t)
    c_enc = Encoder(encoder_config, rng=init_c)
    corpus = encode_documents(docs, vocab, label_vocab, t, m, encoder_config.mode)
    stream = InstanceStream(LabelIndex.from_docs(docs, label_vocab), config.num_candidates, sample_rng)
    params = {f"t.{k}": v for k, v in t_enc.params.items()}
    params.update({f"c.{k}": v for k, v in c_enc.params.items()})
    state = AdamState(learning_rate=config.learning_rate)
    history: list[float] = []
    batches = stream.batches(config.batch_size)
    for step in range(1, config.iterations + 1):
        loss = instance_loss(t_enc, c_enc, corpus, next(batches), True, drop_rng)
        backward(loss)
        adam_step(params, state)
        history.append(loss.item())
        if config.log_every and step % config.log_every == 0:
            log.info("pretrain step %d: mean loss %.4f", step, np.mean(history[-config.log_every:]))
    return PretrainResult(t_enc, c_enc, history, stream.skipped, stream.epochs)


def encoder_checkpoint(
    t_enc: Encoder, c_enc: Encoder, vocab: Vocab, label_vocab: LabelVocab, t: int, m: int,
    extra: dict | None = None, head: dict[str, np.ndarray] | None = None,
) -> Checkpoint:
    params = {f"t.{k}": v.data.copy() for k, v in t_enc.params.items()}
    params.update({f"c.{k}": v.data.copy() for k, v in c_enc.params.items()})
    for k, v in (head or {}).items():
        params[f"head.{k}"] = np.array(v, dtype=np.float64)
    cfg = t_enc.config
    dims = {"d": cfg.hidden_dim, "embed_dim": cfg.embed_dim, "t": t, "m": m, "l": cfg.num_labels}
    return Checkpoint(params, asdict(cfg), dims, vocab.to_list(), label_vocab.to_list(), extra or {})


def result_checkpoint(result: PretrainResult, vocab, label_vocab, t, m, config: PretrainConfig) -> Checkpoint:
    extra = {
        "stage": "pretrain",
        "pretrain": asdict(config),
        "loss_history": result.loss_history,
        "skipped_pairs": result.skipped,
    }
    return encoder_checkpoint(result.t_encoder, result.c_encoder, vocab, label_vocab, t, m, extra)


def encoders_from_checkpoint(ckpt: Checkpoint) -> tuple[Encoder, Encoder]:
    cfg = EncoderConfig(**ckpt.encoder)
    pair = []
    for prefix in ("t", "c"):
        arrays = ckpt.subset(prefix)
        expected = Encoder(cfg, rng=0).params
        if set(arrays) != set(expected) or any(arrays[k].shape != expected[k].shape for k in expected):
            raise ConfigError(f"checkpoint {prefix}-encoder parameters do not match {cfg.kind}")
        pair.append(Encoder(cfg, {k: Tensor(v.copy(), True, k) for k, v in arrays.items()}))
    return pair[0], pair[1]
