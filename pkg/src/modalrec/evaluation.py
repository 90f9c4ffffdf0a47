"""Ranking metrics, the evaluation protocol, and paired significance tests.

Every item in the target catalog is scored for every user (full-catalog
ranking, no candidate sampling). Validation ranks the held-out
second-to-last item given the train subsequence; test ranks the last item
given train plus the validation item (flag-controlled). Significance uses a
paired t-test with the Student-t CDF evaluated through a continued-fraction
incomplete beta, so no stats dependency is needed at runtime.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .adaptation import _rank_of
from .autodiff import Tensor
from .checkpoint import Checkpoint
from .dataio import SplitDataset
from .errors import ConfigError, DataError, NumericError
from .intent import encode_batch
from .training import ItemMatrix, table_forward

REPORT_VERSION = 1
DEFAULT_KS = (10, 50)


def recall_at_k(rank: int, k: int) -> float:
    if rank < 1:
        raise DataError(f"rank must be >= 1, got {rank}")
    return 1.0 if rank <= k else 0.0


def ndcg_at_k(rank: int, k: int) -> float:
    if rank < 1:
        raise DataError(f"rank must be >= 1, got {rank}")
    return 1.0 / math.log2(rank + 1.0) if rank <= k else 0.0


def metrics_from_scores(scores: np.ndarray, target_row: int, ks) -> dict:
    """Rank the target row within the score vector and compute all metrics."""
    rank = _rank_of(np.asarray(scores, dtype=np.float64), target_row)
    return {
        "rank": rank,
        "recall": {k: recall_at_k(rank, k) for k in ks},
        "ndcg": {k: ndcg_at_k(rank, k) for k in ks},
    }


def report_from_scores(task_id: str, ks, entries, meta: dict | None = None
                       ) -> "MetricsReport":
    """Assemble a MetricsReport from scored users.

    entries: (user_id, score vector over the id-sorted catalog, truth row)
    in canonical user order. This is evaluate()'s entire post-scoring path.
    """
    ks = sorted(int(k) for k in ks)
    users = [{"user_id": uid, **metrics_from_scores(scores, truth_row, ks)}
             for uid, scores, truth_row in entries]
    aggregates = {
        m: {k: float(np.mean([u[m][k] for u in users])) for k in ks}
        for m in ("recall", "ndcg")
    }
    return MetricsReport(task_id, ks, users, aggregates, meta or {})


@dataclass
class MetricsReport:
    task_id: str
    k_values: list[int]
    users: list[dict]          # {user_id, rank, recall: {k: v}, ndcg: {k: v}}
    aggregates: dict           # {recall: {k: mean}, ndcg: {k: mean}}
    meta: dict = field(default_factory=dict)

    def per_user(self, metric: str, k: int) -> np.ndarray:
        if metric not in ("recall", "ndcg"):
            raise ConfigError(f"unknown metric {metric!r}")
        if k not in self.k_values:
            raise ConfigError(f"k={k} not among the report's k_values {self.k_values}")
        return np.array([u[metric][k] for u in self.users], dtype=np.float64)

    def to_json(self) -> str:
        doc = {
            "version": REPORT_VERSION,
            "task_id": self.task_id,
            "k_values": list(self.k_values),
            "users": [
                {
                    "user_id": u["user_id"],
                    "rank": u["rank"],
                    "recall": {str(k): u["recall"][k] for k in self.k_values},
                    "ndcg": {str(k): u["ndcg"][k] for k in self.k_values},
                }
                for u in self.users
            ],
            "aggregates": {
                m: {str(k): self.aggregates[m][k] for k in self.k_values}
                for m in ("recall", "ndcg")
            },
            "meta": dict(sorted(self.meta.items())),
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        doc = json.loads(text)
        if doc.get("version") != REPORT_VERSION:
            raise DataError(f"unsupported report version {doc.get('version')}")
        ks = [int(k) for k in doc["k_values"]]
        users = [
            {
                "user_id": u["user_id"],
                "rank": int(u["rank"]),
                "recall": {k: float(u["recall"][str(k)]) for k in ks},
                "ndcg": {k: float(u["ndcg"][str(k)]) for k in ks},
            }
            for u in doc["users"]
        ]
        aggregates = {
            m: {k: float(doc["aggregates"][m][str(k)]) for k in ks}
            for m in ("recall", "ndcg")
        }
        return cls(doc["task_id"], ks, users, aggregates, doc.get("meta", {}))


def evaluate(checkpoint: Checkpoint, split_data: SplitDataset, split: str,
             ks=DEFAULT_KS, include_val_in_test: bool = True,
             meta: dict | None = None) -> MetricsReport:
    """Full-catalog evaluation of one split ('validation' or 'test')."""
    if checkpoint.stage not in ("adapted", "scratch"):
        raise ConfigError(
            f"evaluation requires an adapted or scratch checkpoint, "
            f"got stage={checkpoint.stage}")
    if split not in ("validation", "test"):
        raise ConfigError(f"unknown split {split!r}")
    ks = sorted(int(k) for k in ks)
    if not ks or ks[0] < 1:
        raise ConfigError("k values must be positive")

    irl_cfg, intent_cfg = checkpoint.irl_cfg, checkpoint.intent_cfg
    mat = ItemMatrix.from_items(split_data.items, irl_cfg, checkpoint.price_norm)
    table = table_forward(mat, checkpoint.irl_params, irl_cfg, "mean", None,
                          checkpoint.interaction_emb)
    v = table["item"].data
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    if (norms == 0).any():
        raise DataError("zero-norm item embedding")
    v_norm = v / norms

    jobs = []
    for u in split_data.users:
        if split == "validation":
            seq, truth = u.train, u.val
        else:
            seq = u.train + [u.val] if include_val_in_test else u.train
            truth = u.test
        if truth not in mat.row_of:
            raise DataError(f"user {u.user_id}: ground-truth item {truth} "
                            "missing from the item table")
        seq = seq[-intent_cfg.max_seq_len:]
        jobs.append((u.user_id, seq, mat.row_of[truth]))

    by_user = {}
    groups = {}
    for user_id, seq, truth_row in jobs:
        groups.setdefault(len(seq), []).append((user_id, seq, truth_row))
    for length, batch in sorted(groups.items()):
        rows = np.array([[mat.row_of[i] for i in seq] for _, seq, _ in batch])
        h = encode_batch(Tensor(v[rows]), checkpoint.intent_params, intent_cfg,
                         train_mode=False).data[:, -1, :]
        h_norm = h / np.linalg.norm(h, axis=1, keepdims=True)
        scores = h_norm @ v_norm.T
        for b, (user_id, _, truth_row) in enumerate(batch):
            by_user[user_id] = (scores[b], truth_row)

    entries = [(u.user_id, *by_user[u.user_id]) for u in split_data.users]
    base_meta = {
        "checkpoint_hash": checkpoint.config_hash.hex(),
        "seed": checkpoint.seed,
        "stage": checkpoint.stage,
        "variant": ("with_interaction_emb" if checkpoint.interaction_emb is not None
                    else "base"),
        "split": split,
    }
    base_meta.update(meta or {})
    return report_from_scores(split_data.task_id, ks, entries, base_meta)


# ----------------------------------------------------------------------
# paired t-test with a self-contained Student-t CDF


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (Lentz's algorithm)."""
    max_it, eps, fpmin = 300, 3e-14, 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_it + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise NumericError(f"incomplete beta failed to converge at a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: int) -> float:
    """P(|T| >= |t|) for T ~ Student-t with df degrees of freedom."""
    if df < 1:
        raise ConfigError("degrees of freedom must be >= 1")
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


def paired_t_test(report_a: MetricsReport, report_b: MetricsReport,
                  metric: str, k: int) -> tuple[float, float]:
    """Two-sided paired t-test on per-user metric differences (a - b)."""
    users_a = [u["user_id"] for u in report_a.users]
    users_b = [u["user_id"] for u in report_b.users]
    if users_a != users_b:
        raise DataError("reports cover different user sets or orders")
    n = len(users_a)
    if n < 2:
        raise DataError("paired t-test needs at least two users")
    diffs = report_a.per_user(metric, k) - report_b.per_user(metric, k)
    mean = float(np.mean(diffs))
    sd = float(np.std(diffs, ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / (sd / math.sqrt(n))
    return t, student_t_two_sided_p(t, n - 1)
