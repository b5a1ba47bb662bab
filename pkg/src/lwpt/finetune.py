"""Fused label-wise classifier: T/C encoder outputs -> sigmoid head, trained under BCE.

For each label k the document row is ``[Q^t_k ; Q^c_k]`` (4h wide); the
``l`` rows are flattened and mapped to ``l`` logits by one affine layer.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import functional as F
from .checkpoint import Checkpoint
from .corpus import Batch, Document, LabelVocab, Vocab, encode_documents
from .encoders import Encoder, EncoderConfig, xavier
from .errors import ConfigError
from .metrics import micro_f1_from_arrays
from .optim import AdamState, adam_step
from .pretrain import encoder_checkpoint, encoders_from_checkpoint, seed_streams
from .tensor import Tensor, as_tensor, backward, clip, concat, log, matmul, no_grad, reshape, tsum

log_ = logging.getLogger(__name__)

CLAMP = 1e-12


@dataclass
class FinetuneConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    freeze_encoders: bool = False
    threshold: float = 0.5
    head_bias: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")


def fuse(batch: Batch, t_enc: Encoder, c_enc: Encoder, training=False, rng=None) -> Tensor:
    """Fused representation M [B, l, 4h]: row k is ``[Q^t_k ; Q^c_k]``."""
    if t_enc.config != c_enc.config:
        raise ConfigError(
            f"T-Encoder ({t_enc.kind}) and C-Encoder ({c_enc.kind}) must share kind and dims"
        )
    qt = t_enc.encode_all(batch, training, rng)
    qc = c_enc.encode_all(batch, training, rng)
    return concat([qt, qc], axis=-1)


def logits(M, W, bias=None) -> Tensor:
    M = as_tensor(M)
    B, l, w = M.shape
    if W.shape != (l * w, l):
        raise ConfigError(f"head weight {W.shape} does not fit fused input [{l} x {w}]")
    z = matmul(reshape(M, (B, l * w)), W)
    return z if bias is None else z + bias


def predict(M, W, bias=None) -> Tensor:
    """Label probabilities ``sigmoid(flatten(M) @ W + bias)``: [B, l]."""
    return F.sigmoid(logits(M, W, bias))


def bce_loss(y_hat, y) -> Tensor:
    """Binary cross-entropy summed over labels and averaged over documents."""
    y_hat = as_tensor(y_hat)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ConfigError(f"predictions {y_hat.shape} and targets {y.shape} differ in shape")
    pos = log(clip(y_hat, CLAMP, 1.0))
    neg = log(clip(1.0 - y_hat, CLAMP, 1.0))
    per_doc = -tsum(pos * y + neg * (1.0 - y), axis=-1)
    return tsum(per_doc) * (1.0 / y.shape[0])


def decide_labels(y_hat, threshold: float = 0.5) -> list[int]:
    """Label ids scoring at least ``threshold``; the argmax alone if none does."""
    p = np.asarray(y_hat.data if isinstance(y_hat, Tensor) else y_hat, dtype=np.float64)
    chosen = np.flatnonzero(p >= threshold)
    if chosen.size == 0:
        chosen = np.array([int(np.argmax(p))])
    return chosen.tolist()


def decide_matrix(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Row-wise :func:`decide_labels` as a boolean [N, l] matrix."""
    probs = np.asarray(probs)
    out = probs >= threshold
    empty = ~out.any(axis=1)
    out[np.flatnonzero(empty), np.argmax(probs[empty], axis=1)] = True
    return out


class Classifier:
    """Both encoders plus the head ``W [(l*4h) x l]`` and optional bias ``[l]``."""

    def __init__(self, t_enc: Encoder, c_enc: Encoder, head: dict[str, Tensor] | None = None,
                 head_bias: bool = True, rng=None):
        if t_enc.config != c_enc.config:
            raise ConfigError("T-Encoder and C-Encoder configurations differ")
        self.t_enc, self.c_enc = t_enc, c_enc
        l, D = t_enc.config.num_labels, 2 * t_enc.config.output_dim
        if head is None:
            rng = np.random.default_rng(rng)
            head = {"W": Tensor(xavier(rng, (l * D, l)), True, "W")}
            if head_bias:
                head["bias"] = Tensor(np.zeros(l), True, "bias")
        if head["W"].shape != (l * D, l):
            raise ConfigError(f"head W {head['W'].shape} does not match encoders ({l * D}, {l})")
        self.head = head

    @property
    def config(self) -> EncoderConfig:
        return self.t_enc.config

    def parameters(self, include_encoders: bool = True) -> dict[str, Tensor]:
        params = {f"head.{k}": v for k, v in self.head.items()}
        if include_encoders:
            params.update({f"t.{k}": v for k, v in self.t_enc.params.items()})
            params.update({f"c.{k}": v for k, v in self.c_enc.params.items()})
        return params

    def fuse(self, batch: Batch, training=False, rng=None) -> Tensor:
        return fuse(batch, self.t_enc, self.c_enc, training, rng)

    def forward(self, M) -> Tensor:
        return predict(M, self.head["W"], self.head.get("bias"))

    def predict_proba(self, batch: Batch, batch_size: int = 256) -> np.ndarray:
        """Eval-mode probabilities [N, l] (no dropout, no graph)."""
        with no_grad():
            parts = [self.forward(self.fuse(b)).data for b in batch.iter_batches(batch_size)]
        return np.concatenate(parts) if parts else np.zeros((0, self.config.num_labels))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def restore(self, snap: dict[str, np.ndarray]):
        for k, v in self.parameters().items():
            v.data = snap[k].copy()


@dataclass
class FinetuneResult:
    model: Classifier
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_micro_f1: float = 0.0


def _check_checkpoint(ckpt: Checkpoint, enc_cfg: EncoderConfig, vocab: Vocab, label_vocab: LabelVocab):
    if EncoderConfig(**ckpt.encoder) != enc_cfg:
        raise ConfigError(
            f"checkpoint encoder {ckpt.encoder} does not match requested {asdict(enc_cfg)}"
        )
    if ckpt.vocab != vocab.to_list() or ckpt.labels != label_vocab.to_list():
        raise ConfigError("checkpoint vocabularies differ from the corpus vocabularies")


def build_model(enc_cfg: EncoderConfig, config: FinetuneConfig, checkpoint: Checkpoint | None = None,
                vocab: Vocab | None = None, label_vocab: LabelVocab | None = None) -> Classifier:
    init_t, init_c, init_head = seed_streams(config.seed, 5)[:3]
    if checkpoint is not None:
        if vocab is not None and label_vocab is not None:
            _check_checkpoint(checkpoint, enc_cfg, vocab, label_vocab)
        t_enc, c_enc = encoders_from_checkpoint(checkpoint)
    else:
        t_enc, c_enc = Encoder(enc_cfg, rng=init_t), Encoder(enc_cfg, rng=init_c)
    return Classifier(t_enc, c_enc, head_bias=config.head_bias, rng=init_head)


def run_finetune(
    train_docs: Sequence[Document],
    valid_docs: Sequence[Document],
    vocab: Vocab,
    label_vocab: LabelVocab,
    encoder_config: EncoderConfig,
    config: FinetuneConfig,
    t: int,
    m: int = 1,
    checkpoint: Checkpoint | None = None,
) -> FinetuneResult:
    """Train the head (and, unless frozen, both encoders) with Adam under BCE.

    The parameters of the epoch with the best validation Micro-F1 (earliest
    on ties; epoch 0 is the initialisation) are restored before returning.
    Training stops early once validation Micro-F1 reaches 1.0. With frozen
    encoders the fused features are computed once in eval mode.
    """
    model = build_model(encoder_config, config, checkpoint, vocab, label_vocab)
    shuffle_rng, drop_rng = seed_streams(config.seed, 5)[3:]
    mode = encoder_config.mode
    train = encode_documents(train_docs, vocab, label_vocab, t, m, mode)
    valid = encode_documents(valid_docs, vocab, label_vocab, t, m, mode)
    params = model.parameters(include_encoders=not config.freeze_encoders)
    state = AdamState(learning_rate=config.learning_rate)

    frozen_features = None
    if config.freeze_encoders:
        with no_grad():
            frozen_features = np.concatenate(
                [model.fuse(b).data for b in train.iter_batches(256)]
            ) if len(train) else None

    def validate() -> float:
        probs = model.predict_proba(valid)
        return micro_f1_from_arrays(valid.labels > 0, decide_matrix(probs, config.threshold))

    best = validate() if len(valid) else 0.0
    result = FinetuneResult(model, [{"epoch": 0, "train_loss": None, "valid_micro_f1": best}], 0, best)
    snap = model.snapshot()
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            sub = train.take(idx)
            if frozen_features is None:
                M = model.fuse(sub, True, drop_rng)
            else:
                M = Tensor(frozen_features[idx])
            loss = bce_loss(model.forward(M), sub.labels)
            backward(loss)
            adam_step(params, state)
            losses.append(loss.item())
        score = validate() if len(valid) else 0.0
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else None,
                 "valid_micro_f1": score}
        result.log.append(entry)
        log_.info("finetune epoch %d: loss %s valid micro-F1 %.4f", epoch, entry["train_loss"], score)
        if score > result.best_valid_micro_f1:
            result.best_epoch, result.best_valid_micro_f1 = epoch, score
            snap = model.snapshot()
        if result.best_valid_micro_f1 >= 1.0:
            break  # selection needs a strict improvement, so no later epoch can win
    model.restore(snap)
    return result


def finetune_checkpoint(result: FinetuneResult, vocab: Vocab, label_vocab: LabelVocab, t: int, m: int,
                        config: FinetuneConfig, extra: dict | None = None) -> Checkpoint:
    model = result.model
    info = {
        "stage": "finetune",
        "finetune": asdict(config),
        "best_epoch": result.best_epoch,
        "best_valid_micro_f1": result.best_valid_micro_f1,
        "log": result.log,
    }
    info.update(extra or {})
    head = {k: v.data for k, v in model.head.items()}
    return encoder_checkpoint(model.t_enc, model.c_enc, vocab, label_vocab, t, m, info, head)


def classifier_from_checkpoint(ckpt: Checkpoint) -> Classifier:
    t_enc, c_enc = encoders_from_checkpoint(ckpt)
    head = {k: Tensor(v.copy(), True, k) for k, v in ckpt.subset("head").items()}
    if "W" not in head:
        raise ConfigError("checkpoint has no classifier head (is it a pre-training checkpoint?)")
    return Classifier(t_enc, c_enc, head)


# ------------------------------------------------------------ predictions

def write_predictions(path, doc_ids: Sequence[str], probs: np.ndarray, decided: np.ndarray,
                      gold: np.ndarray, label_names: Sequence[str]) -> None:
    """One JSON object per line: ``{"id", "scores", "predicted", "gold"}``.

    Scores follow ``label_names`` order, which is also written to
    ``labels.json`` next to the file so the predictions are self-describing.
    """
    path = Path(path)
    names = list(label_names)
    with open(path, "w", encoding="utf-8") as fh:
        for i, doc_id in enumerate(doc_ids):
            rec = {
                "id": doc_id,
                "scores": [float(x) for x in probs[i]],
                "predicted": [names[k] for k in np.flatnonzero(decided[i])],
                "gold": [names[k] for k in np.flatnonzero(gold[i])],
            }
            fh.write(json.dumps(rec) + "\n")
    (path.parent / "labels.json").write_text(json.dumps(names) + "\n")


def predict_documents(model: Classifier, docs: Sequence[Document], vocab: Vocab, label_vocab: LabelVocab,
                      t: int, m: int, threshold: float):
    """Eval-mode probabilities, decisions and gold matrix for ``docs``."""
    batch = encode_documents(docs, vocab, label_vocab, t, m, model.config.mode)
    probs = model.predict_proba(batch)
    return batch, probs, decide_matrix(probs, threshold)
