"""One pre-train -> fine-tune -> evaluate run, shared by the CLI sweep and by tests."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .checkpoint import Checkpoint
from .corpus import Document, build_vocabs
from .encoders import BATCH_MODE, EncoderConfig
from .errors import ConfigError
from .finetune import FinetuneConfig, FinetuneResult, finetune_checkpoint, predict_documents, run_finetune
from .metrics import MetricsReport, evaluate_arrays
from .pretrain import PretrainConfig, PretrainResult, result_checkpoint, run_pretraining

# Sizes meant for real corpora: d = 256 / t = 256 for flat documents and
# d = 100 / t = 64 / m = 32 for sentence-segmented ones.
DEFAULT_DIMS = {"flat": {"dim": 256, "t": 256, "m": 1}, "hierarchical": {"dim": 100, "t": 64, "m": 32}}


def default_dims(kind: str) -> dict:
    if kind not in BATCH_MODE:
        raise ConfigError(f"unknown encoder kind {kind!r}")
    return dict(DEFAULT_DIMS[BATCH_MODE[kind]])


@dataclass
class ExperimentSpec:
    kind: str = "lw_lstm"
    dim: int = 16
    embed_dim: int | None = None
    lstm_layers: int = 2
    dropout_p: float = 0.2
    t: int = 24
    m: int = 1
    pretrain: PretrainConfig | None = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)

    def encoder_config(self, vocab_size: int, num_labels: int) -> EncoderConfig:
        return EncoderConfig(self.kind, vocab_size, num_labels, self.embed_dim or self.dim,
                             self.dim, self.lstm_layers, self.dropout_p)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    test_report: MetricsReport
    finetune: FinetuneResult
    finetune_checkpoint: Checkpoint
    pretrain: PretrainResult | None = None
    pretrain_checkpoint: Checkpoint | None = None

    def summary(self) -> dict:
        r = self.test_report
        out = {
            "one_error": r.one_error, "hamming_loss": r.hamming_loss,
            "macro_f1": r.macro_f1, "micro_f1": r.micro_f1,
            "best_epoch": self.finetune.best_epoch,
            "finetune_checkpoint": self.finetune_checkpoint.digest(),
        }
        if self.pretrain_checkpoint is not None:
            out["pretrain_checkpoint"] = self.pretrain_checkpoint.digest()
            out["pretrain_final_loss"] = float(np.mean(self.pretrain.loss_history[-100:]))
        return out


def run_experiment(train: Sequence[Document], valid: Sequence[Document], test: Sequence[Document],
                   spec: ExperimentSpec) -> ExperimentResult:
    """Pre-train on ``train`` (unless ``spec.pretrain`` is None), fine-tune, evaluate on ``test``."""
    vocab, label_vocab = build_vocabs(train)
    enc_cfg = spec.encoder_config(len(vocab), len(label_vocab))
    pt_result = pt_ckpt = None
    if spec.pretrain is not None:
        pt_result = run_pretraining(train, vocab, label_vocab, enc_cfg, spec.pretrain, spec.t, spec.m)
        pt_ckpt = result_checkpoint(pt_result, vocab, label_vocab, spec.t, spec.m, spec.pretrain)
    ft = run_finetune(train, valid, vocab, label_vocab, enc_cfg, spec.finetune, spec.t, spec.m, pt_ckpt)
    ft_ckpt = finetune_checkpoint(ft, vocab, label_vocab, spec.t, spec.m, spec.finetune,
                                  {"pretrained": pt_ckpt is not None})
    batch, probs, decided = predict_documents(ft.model, test, vocab, label_vocab, spec.t, spec.m,
                                              spec.finetune.threshold)
    report = evaluate_arrays(probs, batch.labels > 0, decided, label_vocab.to_list())
    return ExperimentResult(spec, report, ft, ft_ckpt, pt_result, pt_ckpt)
