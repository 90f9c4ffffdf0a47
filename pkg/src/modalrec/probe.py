"""Cross-task transferability probe.

For a (target, auxiliary) task pair and one modality, items from the two
tasks are balanced (one auxiliary item sampled per target item, without
replacement), embedded with a pre-trained checkpoint's transformed modality
embeddings (mean-mode routing), and a binary classifier is trained to tell
the tasks apart. High accuracy means task-separable embeddings, i.e. low
cross-task transferability of that modality.

The classifier is logistic regression trained by full-batch gradient
descent (lr 0.1, up to 500 epochs, best-validation epoch selection); a
two-layer MLP variant sits behind the `hidden` flag.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .checkpoint import Checkpoint
from .dataio import TaskDataset
from .errors import ConfigError, DataError
from .irl import MODALITIES
from .training import ItemMatrix, table_forward

SPLIT_FRACTIONS = (0.7, 0.1)  # train, validation; remainder is test


@dataclass
class ProbeDataset:
    modality: str
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    n_per_class: int
    seed: int


@dataclass
class ProbeResult:
    target_id: str
    aux_id: str
    modality: str
    train_accuracy: float
    val_accuracy: float
    test_accuracy: float
    chosen_epoch: int
    n_per_class: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "target_id": self.target_id, "aux_id": self.aux_id,
            "modality": self.modality,
            "train_accuracy": self.train_accuracy,
            "val_accuracy": self.val_accuracy,
            "test_accuracy": self.test_accuracy,
            "chosen_epoch": self.chosen_epoch,
            "n_per_class": self.n_per_class, "seed": self.seed,
        }


def modality_features(task: TaskDataset, modality: str, checkpoint: Checkpoint,
                      rng_mode: str = "mean") -> tuple[np.ndarray, np.ndarray]:
    """Transformed embeddings of every item in the task, id-sorted."""
    if modality not in MODALITIES:
        raise ConfigError(f"unknown modality {modality!r}")
    mat = ItemMatrix.from_items(task.items, checkpoint.irl_cfg,
                                checkpoint.price_norm)
    table = table_forward(mat, checkpoint.irl_params, checkpoint.irl_cfg,
                          rng_mode, None)
    return mat.ids, table[f"z_{modality}"].data


def build_probe_dataset(target: TaskDataset, aux: TaskDataset, modality: str,
                        checkpoint: Checkpoint, seed: int,
                        rng_mode: str = "mean",
                        require_pretrained: bool = True) -> ProbeDataset:
    """Balanced, stratified 70/10/20 split of target-vs-aux item features."""
    if require_pretrained and checkpoint.stage != "pretrained":
        raise ConfigError(
            f"probe expects a pretrained checkpoint, got stage={checkpoint.stage}")
    n = len(target.items)
    if len(aux.items) < n:
        raise DataError(
            f"auxiliary task has {len(aux.items)} items; need >= {n} for "
            "balanced sampling without replacement")

    rng = np.random.default_rng(seed)
    _, target_feat = modality_features(target, modality, checkpoint, rng_mode)
    aux_ids, aux_feat = modality_features(aux, modality, checkpoint, rng_mode)
    chosen = np.sort(rng.choice(len(aux_ids), size=n, replace=False))
    aux_feat = aux_feat[chosen]

    n_train = int(np.floor(SPLIT_FRACTIONS[0] * n))
    n_val = int(np.floor(SPLIT_FRACTIONS[1] * n))
    parts = {"train": ([], []), "val": ([], []), "test": ([], [])}
    for feats, label in ((target_feat, 1.0), (aux_feat, 0.0)):
        order = rng.permutation(n)
        bounds = {
            "train": order[:n_train],
            "val": order[n_train:n_train + n_val],
            "test": order[n_train + n_val:],
        }
        for name, idx in bounds.items():
            parts[name][0].append(feats[idx])
            parts[name][1].append(np.full(len(idx), label))

    def cat(name):
        return (np.concatenate(parts[name][0]), np.concatenate(parts[name][1]))

    train_x, train_y = cat("train")
    val_x, val_y = cat("val")
    test_x, test_y = cat("test")
    return ProbeDataset(modality, train_x, train_y, val_x, val_y,
                        test_x, test_y, n, seed)


def _accuracy(logits: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean((logits > 0.0) == (y > 0.5)))


def train_linear_probe(ds: ProbeDataset, max_epochs: int = 500, lr: float = 0.1,
                       hidden: int | None = None,
                       target_id: str = "", aux_id: str = "") -> ProbeResult:
    """Train the probe classifier; returns accuracies at the best-val epoch.

    hidden=None is the linear probe; an integer turns on the two-layer MLP
    variant with that hidden width and ReLU.
    """
    for y in (ds.train_y, ds.val_y, ds.test_y):
        if len(np.unique(y)) < 2:
            raise DataError("degenerate probe split: only one class present")
    d = ds.train_x.shape[1]
    rng = np.random.default_rng(ds.seed)
    if hidden is None:
        params = [Tensor(np.zeros((d, 1)), requires_grad=True),
                  Tensor(np.zeros(1), requires_grad=True)]

        def logits_of(x):
            return x @ params[0].data + params[1].data

        def loss_graph():
            z = (Tensor(ds.train_x) @ params[0] + params[1]).reshape(len(ds.train_x))
            y = Tensor(ds.train_y)
            return (z.softplus() - y * z).mean()
    else:
        bound = 1.0 / np.sqrt(d)
        params = [Tensor(rng.uniform(-bound, bound, (d, hidden)), requires_grad=True),
                  Tensor(np.zeros(hidden), requires_grad=True),
                  Tensor(rng.uniform(-1.0 / np.sqrt(hidden), 1.0 / np.sqrt(hidden),
                                     (hidden, 1)), requires_grad=True),
                  Tensor(np.zeros(1), requires_grad=True)]

        def logits_of(x):
            h = np.maximum(x @ params[0].data + params[1].data, 0.0)
            return h @ params[2].data + params[3].data

        def loss_graph():
            h = (Tensor(ds.train_x) @ params[0] + params[1]).relu()
            z = (h @ params[2] + params[3]).reshape(len(ds.train_x))
            y = Tensor(ds.train_y)
            return (z.softplus() - y * z).mean()

    best = {"val": -1.0, "epoch": -1, "snapshot": None}
    for epoch in range(1, max_epochs + 1):
        for p in params:
            p.grad = None
        loss_graph().backward()
        for p in params:
            p.data = p.data - lr * p.grad
        val_acc = _accuracy(logits_of(ds.val_x).ravel(), ds.val_y)
        if val_acc > best["val"]:
            best.update(val=val_acc, epoch=epoch,
                        snapshot=[p.data for p in params])

    for p, data in zip(params, best["snapshot"]):
        p.data = data
    return ProbeResult(
        target_id=target_id, aux_id=aux_id, modality=ds.modality,
        train_accuracy=_accuracy(logits_of(ds.train_x).ravel(), ds.train_y),
        val_accuracy=best["val"],
        test_accuracy=_accuracy(logits_of(ds.test_x).ravel(), ds.test_y),
        chosen_epoch=best["epoch"], n_per_class=ds.n_per_class, seed=ds.seed,
    )


def probe_pair(target: TaskDataset, aux: TaskDataset, modality: str,
               checkpoint: Checkpoint, seed: int, max_epochs: int = 500,
               hidden: int | None = None, rng_mode: str = "mean") -> ProbeResult:
    ds = build_probe_dataset(target, aux, modality, checkpoint, seed, rng_mode)
    return train_linear_probe(ds, max_epochs=max_epochs, hidden=hidden,
                              target_id=target.task_id, aux_id=aux.task_id)


def probe_matrix(target: TaskDataset, aux_tasks: list[TaskDataset],
                 checkpoint: Checkpoint, seed: int, max_epochs: int = 500,
                 modalities=MODALITIES, hidden: int | None = None) -> str:
    """All (aux, modality) probes for one target task, as a JSON document."""
    results = []
    for aux in aux_tasks:
        for modality in modalities:
            results.append(probe_pair(target, aux, modality, checkpoint, seed,
                                      max_epochs, hidden).to_dict())
    return json.dumps({"target_id": target.task_id, "results": results},
                      indent=2) + "\n"
