"""Document encoders: label-wise (LW-LSTM, HLW-LSTM) and shared-context baselines.

All four kinds map a :class:`~lwpt.corpus.Batch` to one ``2h``-dimensional
vector per (document, label). The label-wise kinds hold one attention
context vector per label and attention level; the baselines (``lstm_attn``
and ``han``) hold a single shared one, so their output ignores the label.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import functional as F
from .corpus import Batch
from .errors import ConfigError, ModeError, ShapeError
from .tensor import Tensor, broadcast_to, embedding, reshape, stack, tsum

KINDS = ("lw_lstm", "hlw_lstm", "lstm_attn", "han")
LABEL_WISE = {"lw_lstm": True, "hlw_lstm": True, "lstm_attn": False, "han": False}
BATCH_MODE = {"lw_lstm": "flat", "lstm_attn": "flat", "hlw_lstm": "hierarchical", "han": "hierarchical"}


@dataclass
class EncoderConfig:
    kind: str
    vocab_size: int
    num_labels: int
    embed_dim: int = 100
    hidden_dim: int = 100
    lstm_layers: int = 2
    dropout_p: float = 0.2
    # small initial LayerNorm gain keeps untrained dot-product scores near 0,
    # so the untrained contrastive loss starts at ln(n)
    ln_gain_init: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown encoder kind {self.kind!r}; choose from {KINDS}")
        if min(self.embed_dim, self.hidden_dim, self.lstm_layers) < 1:
            raise ConfigError("embed_dim, hidden_dim and lstm_layers must be >= 1")
        if self.num_labels < 2:
            raise ConfigError(f"need at least 2 labels, got {self.num_labels}")
        if self.vocab_size < 3:
            raise ConfigError("vocab_size must cover PAD, UNK and at least one token")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.ln_gain_init <= 0.0:
            raise ConfigError("ln_gain_init must be positive")

    @property
    def mode(self) -> str:
        return BATCH_MODE[self.kind]

    @property
    def label_wise(self) -> bool:
        return LABEL_WISE[self.kind]

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden_dim

    def to_json(self) -> dict:
        return asdict(self)


def xavier(rng: np.random.Generator, shape) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _lstm_init(rng, prefix: str, d_in: int, h: int, params: dict):
    for direction in ("fwd", "bwd"):
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0  # forget gate
        params[f"{prefix}.{direction}.w_ih"] = xavier(rng, (d_in, 4 * h))
        params[f"{prefix}.{direction}.w_hh"] = xavier(rng, (h, 4 * h))
        params[f"{prefix}.{direction}.b"] = b


def init_params(config: EncoderConfig, rng) -> dict[str, Tensor]:
    """Xavier-uniform matrices, zero biases, forget-gate bias 1, LayerNorm gain ``ln_gain_init``."""
    rng = np.random.default_rng(rng)
    c = config
    h2 = 2 * c.hidden_dim
    n_ctx = c.num_labels if c.label_wise else 1
    raw: dict[str, np.ndarray] = {"embed": xavier(rng, (c.vocab_size, c.embed_dim))}
    if c.mode == "flat":
        for layer in range(c.lstm_layers):
            _lstm_init(rng, f"lstm{layer}", c.embed_dim if layer == 0 else h2, c.hidden_dim, raw)
        raw["ln.gain"], raw["ln.bias"] = np.full(h2, config.ln_gain_init), np.zeros(h2)
        raw["ctx"] = xavier(rng, (n_ctx, h2))
    else:
        _lstm_init(rng, "word", c.embed_dim, c.hidden_dim, raw)
        _lstm_init(rng, "sent", h2, c.hidden_dim, raw)
        for level in ("word", "sent"):
            raw[f"ln_{level}.gain"], raw[f"ln_{level}.bias"] = np.full(h2, config.ln_gain_init), np.zeros(h2)
        raw["ctx_word"] = xavier(rng, (n_ctx, h2))
        raw["ctx_sent"] = xavier(rng, (n_ctx, h2))
    return {name: Tensor(arr, requires_grad=True, name=name) for name, arr in raw.items()}


def bilstm(seq, mask, params: dict[str, Tensor], prefixes, dropout_p=0.0, training=False, rng=None):
    """Stacked bidirectional LSTM; ``prefixes`` names one parameter group per layer.

    seq: [B, t, d], mask: [B, t]. Returns [B, t, 2h] with the forward states
    in the first half of the feature axis. Dropout follows each layer.
    """
    seq = seq if isinstance(seq, Tensor) else Tensor(seq)
    mask = np.asarray(mask)
    if mask.shape != seq.shape[:2]:
        raise ShapeError(f"bilstm: mask {mask.shape} does not match sequence {seq.shape}")
    if not prefixes:
        raise ConfigError("bilstm needs at least one layer")
    out = seq
    for prefix in prefixes:
        fwd, bwd = (
            tuple(params[f"{prefix}.{side}.{w}"] for w in ("w_ih", "w_hh", "b"))
            for side in ("fwd", "bwd")
        )
        out = F.dropout(F.bilstm_layer(out, fwd, bwd, mask), dropout_p, training, rng)
    return out


def lw_attend(H: Tensor, mask, contexts: Tensor, k=None):
    """Label-conditioned attention pooling over positions.

    ``k`` selects context rows: an int (same label for every row), an int
    array of length B (one label per row) or None (every label). Returns
    ``(Q, alpha)`` with Q of shape [B, D] for int/array ``k`` and [B, L, D]
    for ``k=None``; alpha holds the matching attention weights over t.
    """
    n_ctx = contexts.shape[0]
    B, t, D = H.shape
    if k is None:
        rows = reshape(contexts, (1, n_ctx, 1, D))
    elif np.ndim(k) == 0:
        k = int(k)
        if not 0 <= k < n_ctx:
            raise IndexError(f"label id {k} out of range for {n_ctx} context vectors")
        rows = reshape(contexts[k:k + 1], (1, 1, 1, D))
    else:
        k = np.asarray(k, dtype=np.int64)
        if k.shape != (B,):
            raise ShapeError(f"per-row label ids must have shape ({B},), got {k.shape}")
        if k.min(initial=0) < 0 or k.max(initial=0) >= n_ctx:
            raise IndexError(f"label ids out of range for {n_ctx} context vectors")
        rows = reshape(embedding(contexts, k), (B, 1, 1, D))
    # elementwise products + sums (not matmul) keep each label's arithmetic
    # identical whether it is computed alone or alongside the others
    H4 = reshape(H, (B, 1, t, D))
    scores = tsum(H4 * rows, axis=-1)                            # [B, L, t]
    alpha = F.softmax(scores, np.asarray(mask)[:, None, :])
    L = alpha.shape[1]
    Q = tsum(reshape(alpha, (B, L, t, 1)) * H4, axis=2)          # [B, L, D]
    if k is None:
        return Q, alpha
    return reshape(Q, (B, D)), reshape(alpha, (B, t))


class Encoder:
    """One document encoder (a T-Encoder or a C-Encoder) and its parameters."""

    def __init__(self, config: EncoderConfig, params: dict[str, Tensor] | None = None, rng=None):
        self.config = config
        self.params = init_params(config, rng) if params is None else params

    @property
    def kind(self) -> str:
        return self.config.kind

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def _check(self, batch: Batch) -> Batch:
        if batch.mode != self.config.mode:
            raise ModeError(
                f"{self.kind} expects a {self.config.mode} batch, got {batch.mode}"
            )
        # all-padding tail columns cannot change any output (masking invariance)
        return batch.trimmed()

    def _embed(self, ids, training, rng):
        x = embedding(self.params["embed"], ids)
        return F.dropout(x, self.config.dropout_p, training, rng)

    def _label_sel(self, k, B):
        """Map the caller's label selector onto context rows for this kind."""
        if self.config.label_wise:
            return k
        return 0 if k is None or np.ndim(k) == 0 else np.zeros(B, dtype=np.int64)

    def hidden_states(self, batch: Batch, training=False, rng=None) -> Tensor:
        """Flat kinds: the LayerNormed BiLSTM states H [B, t, 2h]."""
        batch = self._check(batch)
        if self.config.mode != "flat":
            raise ModeError("hidden_states is defined for flat encoders only")
        c, p = self.config, self.params
        x = self._embed(batch.word_ids, training, rng)
        prefixes = [f"lstm{i}" for i in range(c.lstm_layers)]
        H = bilstm(x, batch.word_mask, p, prefixes, c.dropout_p, training, rng)
        return F.layer_norm(H, p["ln.gain"], p["ln.bias"])

    def _word_level(self, batch: Batch, training, rng):
        c, p = self.config, self.params
        B, m, t = batch.word_ids.shape
        x = self._embed(batch.word_ids.reshape(B * m, t), training, rng)
        wmask = batch.word_mask.reshape(B * m, t)
        Hw = bilstm(x, wmask, p, ["word"], c.dropout_p, training, rng)
        Hw = F.layer_norm(Hw, p["ln_word.gain"], p["ln_word.bias"])
        # empty (padding) sentences get a dummy slot so the softmax is defined;
        # the sentence mask removes them afterwards
        attn_mask = wmask.copy()
        attn_mask[attn_mask.sum(axis=1) == 0, 0] = 1.0
        return Hw, attn_mask

    def _sentence_level(self, S: Tensor, smask, k_rows, training, rng):
        c, p = self.config, self.params
        Hs = bilstm(S, smask, p, ["sent"], c.dropout_p, training, rng)
        Hs = F.layer_norm(Hs, p["ln_sent.gain"], p["ln_sent.bias"])
        Q, _ = lw_attend(Hs, smask, p["ctx_sent"], k_rows)
        return Q

    def encode(self, batch: Batch, k, training=False, rng=None) -> Tensor:
        """Q_k for every document: [B, 2h]. ``k`` is an int or one id per document."""
        batch = self._check(batch)
        B = len(batch)
        if np.ndim(k) and np.shape(k) != (B,):
            raise ShapeError(f"expected {B} label ids, got shape {np.shape(k)}")
        n = self.config.num_labels
        if np.any(np.asarray(k) < 0) or np.any(np.asarray(k) >= n):
            raise IndexError(f"label id out of range [0, {n})")
        sel = self._label_sel(k, B)
        p = self.params
        if self.config.mode == "flat":
            H = self.hidden_states(batch, training, rng)
            Q, _ = lw_attend(H, batch.word_mask, p["ctx"], sel)
            return Q
        m = batch.word_ids.shape[1]
        Hw, attn_mask = self._word_level(batch, training, rng)
        word_sel = sel if np.ndim(sel) == 0 else np.repeat(sel, m)
        S, _ = lw_attend(Hw, attn_mask, p["ctx_word"], word_sel)
        S = reshape(S, (B, m, S.shape[-1]))
        return self._sentence_level(S, batch.sentence_mask, sel, training, rng)

    def encode_all(self, batch: Batch, training=False, rng=None) -> Tensor:
        """Q_k for every document and label: [B, l, 2h].

        The word-level BiLSTM runs once per document; for the hierarchical
        label-wise encoder the sentence BiLSTM then runs once per label on
        that label's sentence vectors.
        """
        batch = self._check(batch)
        B, l, D = len(batch), self.config.num_labels, self.config.output_dim
        p = self.params
        if not self.config.label_wise:
            Q = self.encode(batch, 0, training, rng)
            return broadcast_to(reshape(Q, (B, 1, D)), (B, l, D))
        if self.config.mode == "flat":
            H = self.hidden_states(batch, training, rng)
            Q, _ = lw_attend(H, batch.word_mask, p["ctx"], None)
            return Q
        m = batch.word_ids.shape[1]
        Hw, attn_mask = self._word_level(batch, training, rng)
        S, _ = lw_attend(Hw, attn_mask, p["ctx_word"], None)      # [B*m, l, D]
        S = reshape(S, (B, m, l, D))
        per_label = [
            self._sentence_level(S[:, :, k], batch.sentence_mask, k, training, rng)
            for k in range(l)
        ]
        return stack(per_label, axis=1)


def lw_lstm_encode(batch: Batch, k, encoder: Encoder, training=False, rng=None) -> Tensor:
    if encoder.kind != "lw_lstm":
        raise ConfigError(f"expected an lw_lstm encoder, got {encoder.kind}")
    return encoder.encode(batch, k, training, rng)


def hlw_lstm_encode(batch: Batch, k, encoder: Encoder, training=False, rng=None) -> Tensor:
    if encoder.kind != "hlw_lstm":
        raise ConfigError(f"expected an hlw_lstm encoder, got {encoder.kind}")
    return encoder.encode(batch, k, training, rng)


def baseline_encode(batch: Batch, encoder: Encoder, training=False, rng=None) -> Tensor:
    if encoder.config.label_wise:
        raise ConfigError(f"{encoder.kind} is label-wise, not a baseline")
    return encoder.encode(batch, 0, training, rng)


def encode_all_labels(batch: Batch, encoder: Encoder, training=False, rng=None) -> Tensor:
    return encoder.encode_all(batch, training, rng)
