"""Training objectives.

Next-item recommendation loss: temperature-scaled softmax over cosine
similarities between preference vectors and the full candidate table (no
negative sampling), negative log likelihood of the ground-truth item.
Alignment regularizer: same construction with each item's transformed image
embedding as the anchor against all transformed text embeddings. Both are
stabilized with max-subtraction inside the log-sum-exp.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, gather_last, logsumexp
from .errors import ConfigError, DataError

DEFAULT_LAMBDA = 1e-3


@dataclass
class LossBreakdown:
    rec_loss: float
    align_reg: float
    total: float
    per_instance_p: list = field(default_factory=list)
    per_item_q: list = field(default_factory=list)


def _check_tau(tau: float):
    if not 0.0 < tau <= 1.0:
        raise ConfigError(f"tau must lie in (0, 1], got {tau}")


def normalize_rows(x: Tensor, what: str) -> Tensor:
    sq = (x * x).sum(axis=-1, keepdims=True)
    if (sq.data == 0.0).any():
        raise DataError(f"zero-norm vector in {what}")
    return x / sq.sqrt()


def cosine_matrix(a: Tensor, b: Tensor, what_a: str, what_b: str) -> Tensor:
    """Pairwise cosine similarities: (..., d) x (n, d) -> (..., n)."""
    an = normalize_rows(a, what_a)
    bn = normalize_rows(b, what_b)
    return an @ bn.transpose(tuple(range(bn.ndim - 2)) + (bn.ndim - 1, bn.ndim - 2))


def nll_with_rows(preferences: Tensor, target_rows: np.ndarray,
                  table_emb: Tensor, tau: float):
    """Softmax NLL where targets are already row indices into the table."""
    _check_tau(tau)
    cos = cosine_matrix(preferences, table_emb, "preferences", "candidate table")
    logits = cos * (1.0 / tau)
    lse = logsumexp(logits, axis=-1)
    target_logit = gather_last(logits, target_rows)
    loss = (lse - target_logit).sum()
    p = np.exp(target_logit.data - lse.data)
    return loss, p


def recommendation_loss(preferences: Tensor, target_ids, table_ids,
                        table_emb: Tensor, tau: float):
    """Negative log likelihood of the ground-truth next items.

    preferences: (..., d) preference vectors; target_ids an equally-shaped
    integer structure of ground-truth item ids; table_ids/table_emb the full
    candidate table. Returns (scalar loss Tensor, per-instance probability
    array matching target_ids' shape).
    """
    row_of = {int(i): r for r, i in enumerate(table_ids)}
    targets = np.asarray(target_ids)
    try:
        rows = np.vectorize(lambda i: row_of[int(i)], otypes=[np.int64])(targets)
    except KeyError as e:
        raise DataError(f"target item {e} missing from candidate table") from None
    return nll_with_rows(preferences, rows, table_emb, tau)


def alignment_regularizer(text_emb: Tensor, image_emb: Tensor, tau: float,
                          text_ids=None, image_ids=None):
    """Text-image alignment: image i as anchor against every text.

    Returns (scalar regularizer Tensor, per-item probability array q).
    """
    _check_tau(tau)
    if text_ids is not None or image_ids is not None:
        if list(map(int, text_ids)) != list(map(int, image_ids)):
            raise DataError("alignment regularizer: text/image item sets differ")
    if text_emb.shape != image_emb.shape:
        raise DataError(
            f"alignment regularizer shape mismatch: text {text_emb.shape}, "
            f"image {image_emb.shape}"
        )
    n = text_emb.shape[0]
    cos = cosine_matrix(image_emb, text_emb, "image embeddings", "text embeddings")
    logits = cos * (1.0 / tau)
    lse = logsumexp(logits, axis=-1)
    diag = gather_last(logits, np.arange(n))
    reg = (lse - diag).sum()
    q = np.exp(diag.data - lse.data)
    return reg, q


def pretrain_objective(rec_loss, align_reg, lam: float = DEFAULT_LAMBDA):
    """Combined pre-training objective rec_loss + lam * align_reg."""
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    return rec_loss + lam * align_reg


def breakdown(rec_loss: float, align_reg: float, lam: float,
              p=None, q=None) -> LossBreakdown:
    return LossBreakdown(
        rec_loss=float(rec_loss),
        align_reg=float(align_reg),
        total=float(pretrain_objective(rec_loss, align_reg, lam)),
        per_instance_p=[] if p is None else list(np.ravel(p)),
        per_item_q=[] if q is None else list(np.ravel(q)),
    )
