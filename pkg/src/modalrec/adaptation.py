"""Adaptation of a pre-trained checkpoint to a target task.

Three modes:
  relearn  - item-representation parameters and position embeddings are
             re-initialized and trained on the target task; the rest of the
             intent encoder is copied from the checkpoint and frozen.
  finetune - item-representation parameters continue from their pre-trained
             values; the whole intent encoder (positions included) frozen.
  scratch  - everything initialized fresh and trained on the target task.

The with_interaction_emb variant additionally learns a per-item embedding
table over the target catalog, added on top of the content-based embedding.
Training minimizes the softmax NLL over the target catalog (no alignment
term); the returned checkpoint is the epoch snapshot with the best
validation Recall@10.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor
from .checkpoint import Checkpoint, InteractionEmb
from .config import digest_configs
from .dataio import ItemRecord, SplitDataset, TaskDataset, split_leave_one_out
from .errors import ConfigError, DataError
from .intent import IntentConfig, IntentParams, LayerParams, encode_batch
from .irl import IrlConfig, IrlParams, MODALITIES
from .training import (ItemMatrix, TrainConfig, build_instances,
                       init_interaction_emb, init_irl_params,
                       init_position_embedding, init_intent_params,
                       price_norm_stats, run_training, table_forward)

MODES = ("relearn", "finetune", "scratch")
VARIANTS = ("base", "with_interaction_emb")


@dataclass
class AdaptSpec:
    mode: str = "relearn"
    variant: str = "base"
    train: TrainConfig = field(default_factory=TrainConfig)
    beta: float | None = None  # overrides irl_cfg.beta for the target task

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown adaptation mode {self.mode!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        self.train.validate()


def _clone_tensor(t: Tensor, trainable: bool) -> Tensor:
    return Tensor(t.data.copy(), requires_grad=trainable)


def _clone_irl(params: IrlParams, trainable: bool) -> IrlParams:
    out = IrlParams()
    for m in MODALITIES:
        out.shift[m] = [_clone_tensor(t, trainable) for t in params.shift[m]]
        out.proj[m] = [_clone_tensor(t, trainable) for t in params.proj[m]]
        out.route_mean[m] = _clone_tensor(params.route_mean[m], trainable)
        out.route_std[m] = _clone_tensor(params.route_std[m], trainable)
    return out


def _clone_layers(layers, trainable: bool):
    out = []
    for lp in layers:
        out.append(LayerParams(**{
            f: _clone_tensor(getattr(lp, f), trainable)
            for f in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                      "ff1_w", "ff1_b", "ff2_w", "ff2_b",
                      "ln1_scale", "ln1_shift", "ln2_scale", "ln2_shift")
        }))
    return out


def _check_architecture(ckpt: Checkpoint, irl_cfg: IrlConfig,
                        intent_cfg: IntentConfig, d_text: int, d_image: int):
    c_irl, c_int = ckpt.irl_cfg, ckpt.intent_cfg
    same = (c_irl.d == irl_cfg.d and c_irl.n_h == irl_cfg.n_h
            and c_irl.d_p == irl_cfg.d_p and c_irl.omega == irl_cfg.omega
            and c_int.n_layers == intent_cfg.n_layers
            and c_int.n_heads == intent_cfg.n_heads
            and c_int.max_seq_len == intent_cfg.max_seq_len)
    if not same:
        raise DataError("checkpoint architecture does not match the adapt config")
    ck_text = ckpt.irl_params.shift["text"][0].shape[-1]
    ck_image = ckpt.irl_params.shift["image"][0].shape[-1]
    if (ck_text, ck_image) != (d_text, d_image):
        raise DataError(
            f"checkpoint modality dims ({ck_text}, {ck_image}) do not match "
            f"target items ({d_text}, {d_image})")


def _target_dims(items: dict[int, ItemRecord]) -> tuple[int, int]:
    rec = next(iter(items.values()))
    return len(rec.text_emb), len(rec.image_emb)


def _val_recall_at_10(split: SplitDataset, mat: ItemMatrix, irl_params, intent_params,
                      inter, irl_cfg, intent_cfg) -> float:
    """Mean validation Recall@10, mean-mode routing, dropout off."""
    table = table_forward(mat, irl_params, irl_cfg, "mean", None, inter)
    v = table["item"].data
    v_norm = v / np.linalg.norm(v, axis=1, keepdims=True)

    groups = {}
    for u in split.users:
        groups.setdefault(len(u.train), []).append(u)
    hits = 0
    for length, users in sorted(groups.items()):
        rows = np.array([[mat.row_of[i] for i in u.train] for u in users])
        m = Tensor(v[rows])
        h = encode_batch(m, intent_params, intent_cfg, train_mode=False).data[:, -1, :]
        h_norm = h / np.linalg.norm(h, axis=1, keepdims=True)
        scores = h_norm @ v_norm.T
        for b, u in enumerate(users):
            hits += int(_rank_of(scores[b], mat.row_of[u.val]) <= 10)
    return hits / len(split.users)


def _rank_of(scores: np.ndarray, target_row: int) -> int:
    """1-based rank under descending score, ties broken by ascending id
    (table rows are id-sorted)."""
    s = scores[target_row]
    better = int(np.sum(scores > s))
    tied_before = int(np.sum(scores[:target_row] == s))
    return better + tied_before + 1


def adapt(pretrained: Checkpoint | None, target: TaskDataset, spec: AdaptSpec,
          irl_cfg: IrlConfig, intent_cfg: IntentConfig) -> Checkpoint:
    """Adapt to the target task per spec.mode; returns the best-validation
    epoch snapshot as a stage=adapted (or scratch) checkpoint."""
    spec.validate()
    irl_cfg.validate()
    intent_cfg.validate()
    if spec.beta is not None:
        irl_cfg = replace(irl_cfg, beta=spec.beta)
    if spec.mode in ("relearn", "finetune"):
        if pretrained is None:
            raise ConfigError(f"{spec.mode} adaptation requires a pretrained checkpoint")
        if pretrained.stage != "pretrained":
            raise ConfigError(
                f"{spec.mode} adaptation requires a stage=pretrained checkpoint, "
                f"got {pretrained.stage}")
    elif pretrained is not None:
        raise ConfigError("scratch mode takes no input checkpoint")

    d_text, d_image = _target_dims(target.items)
    if spec.mode in ("relearn", "finetune"):
        _check_architecture(pretrained, irl_cfg, intent_cfg, d_text, d_image)
        price_norm = pretrained.price_norm
    else:
        price_norm = price_norm_stats([target.items])

    split = split_leave_one_out(target)
    mat = ItemMatrix.from_items(target.items, irl_cfg, price_norm)
    instances = build_instances(split, mat.row_of, spec.train.final_position_only)

    rng = np.random.default_rng(spec.train.seed)
    trainable = []
    if spec.mode == "relearn":
        irl_params = init_irl_params(d_text, d_image, irl_cfg, rng)
        pos = init_position_embedding(intent_cfg, rng)
        intent_params = IntentParams(
            pos_emb=pos, layers=_clone_layers(pretrained.intent_params.layers, False))
        trainable += irl_params.named_tensors()
        trainable.append(("intent.pos_emb", pos))
    elif spec.mode == "finetune":
        irl_params = _clone_irl(pretrained.irl_params, True)
        intent_params = IntentParams(
            pos_emb=_clone_tensor(pretrained.intent_params.pos_emb, False),
            layers=_clone_layers(pretrained.intent_params.layers, False))
        trainable += irl_params.named_tensors()
    else:  # scratch
        irl_params = init_irl_params(d_text, d_image, irl_cfg, rng)
        intent_params = init_intent_params(intent_cfg, rng)
        trainable += irl_params.named_tensors() + intent_params.named_tensors()

    inter = None
    if spec.variant == "with_interaction_emb":
        inter = init_interaction_emb(mat.ids, irl_cfg.d, rng)
        trainable += inter.named_tensors()

    best = {"recall": -1.0, "snapshot": None}

    def on_epoch_end(epoch, mean_loss):
        recall = _val_recall_at_10(split, mat, irl_params, intent_params, inter,
                                   irl_cfg, intent_cfg)
        if recall > best["recall"]:
            best["recall"] = recall
            best["snapshot"] = {name: t.data for name, t in trainable}

    run_training(instances, mat, irl_params, intent_params, inter, trainable,
                 spec.train, irl_cfg, intent_cfg, rng, use_align=False,
                 on_epoch_end=on_epoch_end)

    if best["snapshot"] is not None:
        for name, t in trainable:
            t.data = best["snapshot"][name]

    return Checkpoint(
        irl_params=irl_params, intent_params=intent_params, interaction_emb=inter,
        price_norm=price_norm,
        config_hash=digest_configs(spec.train, irl_cfg, intent_cfg),
        seed=spec.train.seed,
        stage="scratch" if spec.mode == "scratch" else "adapted",
        irl_cfg=irl_cfg, intent_cfg=intent_cfg,
    )


def score_all_items(checkpoint: Checkpoint, sequence: list[int],
                    items: dict[int, ItemRecord], rng_mode: str = "mean",
                    use_interaction: bool | None = None) -> list[tuple[int, float]]:
    """Rank the whole catalog for one user.

    sequence is the user's (time-ordered) history of item ids; items the
    target catalog. Scores are cosine similarities between the last hidden
    row and each item embedding, sorted descending with ties broken by
    ascending item_id. use_interaction=None reads the checkpoint's
    interaction table when present; False forces the content-only path.
    """
    if checkpoint.stage not in ("adapted", "scratch"):
        raise ConfigError(f"scoring requires an adapted or scratch checkpoint, "
                          f"got stage={checkpoint.stage}")
    if not sequence:
        raise DataError("cannot score an empty sequence")
    for item_id in sequence:
        if item_id not in items:
            raise DataError(f"sequence item {item_id} not in the item table")

    irl_cfg, intent_cfg = checkpoint.irl_cfg, checkpoint.intent_cfg
    mat = ItemMatrix.from_items(items, irl_cfg, checkpoint.price_norm)
    inter = checkpoint.interaction_emb if use_interaction in (None, True) else None
    if use_interaction is True and inter is None:
        raise ConfigError("checkpoint carries no interaction table")
    table = table_forward(mat, checkpoint.irl_params, irl_cfg, rng_mode,
                          None, inter)
    v = table["item"].data
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    if (norms == 0).any():
        raise DataError("zero-norm item embedding")
    v_norm = v / norms

    seq = sequence[-intent_cfg.max_seq_len:]
    rows = np.array([[mat.row_of[i] for i in seq]])
    h = encode_batch(Tensor(v[rows]), checkpoint.intent_params, intent_cfg,
                     train_mode=False).data[0, -1, :]
    h_norm = h / np.linalg.norm(h)
    scores = v_norm @ h_norm

    order = np.lexsort((mat.ids, -scores))
    return [(int(mat.ids[r]), float(scores[r])) for r in order]
