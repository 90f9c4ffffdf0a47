"""Self-attention user-intent encoder.

A stack of causal transformer blocks over item-embedding sequences: learned
position embeddings, multi-head scaled dot-product attention with a strict
causal mask, residual connections with layer norm (post-norm by default,
pre-norm behind a flag) and a position-wise ReLU feed-forward of inner
dimension d. Row t of the output is the preference vector for the prefix
ending at t.

Position embeddings are kept separate from the other parameters because
adaptation re-learns them while freezing the rest of the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, softmax
from .errors import ConfigError, DataError

_MASK_VALUE = -1e30


@dataclass
class IntentConfig:
    d: int = 256
    n_layers: int = 2
    n_heads: int = 2
    max_seq_len: int = 50
    dropout: float = 0.1
    pre_norm: bool = False

    def validate(self):
        if self.d < 1 or self.n_layers < 1 or self.n_heads < 1 or self.max_seq_len < 1:
            raise ConfigError("d, n_layers, n_heads, max_seq_len must be >= 1")
        if self.d % self.n_heads != 0:
            raise ConfigError("d must be divisible by n_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")


@dataclass
class LayerParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ff1_w: Tensor
    ff1_b: Tensor
    ff2_w: Tensor
    ff2_b: Tensor
    ln1_scale: Tensor
    ln1_shift: Tensor
    ln2_scale: Tensor
    ln2_shift: Tensor


@dataclass
class IntentParams:
    pos_emb: Tensor  # (max_seq_len, d)
    layers: list[LayerParams] = field(default_factory=list)

    def named_tensors(self):
        out = [("intent.pos_emb", self.pos_emb)]
        for i, lp in enumerate(self.layers):
            for name in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                         "ff1_w", "ff1_b", "ff2_w", "ff2_b",
                         "ln1_scale", "ln1_shift", "ln2_scale", "ln2_shift"):
                out.append((f"intent.layer{i}.{name}", getattr(lp, name)))
        return out

    def position_tensors(self):
        """The position-embedding partition (relearned during adaptation)."""
        return [("intent.pos_emb", self.pos_emb)]

    def backbone_tensors(self):
        """Everything except position embeddings (frozen during adaptation)."""
        return [nt for nt in self.named_tensors() if nt[0] != "intent.pos_emb"]


def layer_norm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + eps).sqrt() * scale + shift


def _dropout(x: Tensor, p: float, rng) -> Tensor:
    if p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return x * Tensor(keep)


def _causal_mask(t: int) -> np.ndarray:
    return np.triu(np.full((t, t), _MASK_VALUE), k=1)


def encode_batch(m: Tensor, params: IntentParams, cfg: IntentConfig,
                 train_mode: bool = False, rng=None,
                 attn_out: list | None = None) -> Tensor:
    """Encode a batch of equal-length sequences: (B, T, d) -> (B, T, d).

    Dropout (attention weights and feed-forward outputs) is active only in
    train_mode and draws from rng. attn_out, if given, collects the detached
    (B, H, T, T) attention matrices per layer.
    """
    b, t, d = m.shape
    if t == 0:
        raise DataError("cannot encode an empty sequence")
    if t > cfg.max_seq_len:
        raise DataError(f"sequence length {t} exceeds max_seq_len {cfg.max_seq_len}")
    if d != cfg.d:
        raise DataError(f"embedding dim {d} != configured d {cfg.d}")
    if train_mode and cfg.dropout > 0 and rng is None:
        raise ConfigError("train_mode with dropout requires an rng")

    h = cfg.n_heads
    dh = d // h
    scale = 1.0 / np.sqrt(dh)
    mask = Tensor(_causal_mask(t))
    x = m + params.pos_emb[:t]

    for lp in params.layers:
        attn_in = layer_norm(x, lp.ln1_scale, lp.ln1_shift) if cfg.pre_norm else x
        q = (attn_in @ lp.wq + lp.bq).reshape(b, t, h, dh).transpose((0, 2, 1, 3))
        k = (attn_in @ lp.wk + lp.bk).reshape(b, t, h, dh).transpose((0, 2, 1, 3))
        v = (attn_in @ lp.wv + lp.bv).reshape(b, t, h, dh).transpose((0, 2, 1, 3))
        scores = q @ k.transpose((0, 1, 3, 2)) * scale + mask
        attn = softmax(scores, axis=-1)
        if attn_out is not None:
            attn_out.append(attn.data.copy())
        if train_mode:
            attn = _dropout(attn, cfg.dropout, rng)
        ctx = (attn @ v).transpose((0, 2, 1, 3)).reshape(b, t, d)
        out = ctx @ lp.wo + lp.bo
        if cfg.pre_norm:
            x = x + out
            ff_in = layer_norm(x, lp.ln2_scale, lp.ln2_shift)
        else:
            x = layer_norm(x + out, lp.ln1_scale, lp.ln1_shift)
            ff_in = x
        ff = (ff_in @ lp.ff1_w + lp.ff1_b).relu() @ lp.ff2_w + lp.ff2_b
        if train_mode:
            ff = _dropout(ff, cfg.dropout, rng)
        if cfg.pre_norm:
            x = x + ff
        else:
            x = layer_norm(x + ff, lp.ln2_scale, lp.ln2_shift)
    return x


def encode_sequence(m, params: IntentParams, cfg: IntentConfig,
                    train_mode: bool = False, rng=None) -> Tensor:
    """Encode one sequence of item embeddings: (T, d) -> (T, d)."""
    if not isinstance(m, Tensor):
        m = Tensor(np.asarray(m, dtype=np.float64))
    if m.ndim != 2:
        raise DataError(f"expected a (T, d) matrix, got shape {m.shape}")
    t, d = m.shape
    out = encode_batch(m.reshape(1, t, d), params, cfg, train_mode, rng)
    return out.reshape(t, d)
