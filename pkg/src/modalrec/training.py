"""Gradient engine contract, optimizer, and the pre-training loop.

Training builds the full candidate-table embeddings once per step, encodes
batched sequences grouped by length, and sums the softmax NLL over every
causal position (row t predicts item t+1). Adam updates the trainable set;
everything runs single-threaded off one seeded rng stream, so fixed
(seed, data, config) reproduces a bit-identical checkpoint.

gradient_check verifies the analytic gradients of the combined objective
against central finite differences on a tiny configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import objective
from .autodiff import Tensor, take_rows
from .checkpoint import Checkpoint, InteractionEmb
from .config import digest_configs
from .dataio import ItemRecord, SplitDataset, TaskDataset, split_leave_one_out
from .errors import ConfigError, DataError, NumericError
from .intent import IntentConfig, IntentParams, LayerParams, encode_batch
from .irl import IrlConfig, IrlParams, MODALITIES, embed_table, encode_prices
from .objective import alignment_regularizer, nll_with_rows


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 2048
    n_epochs: int = 30
    tau: float = 0.07
    lambda_: float = 1e-3
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout: float = 0.1
    grad_check_tol: float = 1e-4
    final_position_only: bool = False
    sample_routing: bool = True  # reparameterized routing noise during training
    sampled_candidates: int = 0  # >0: softmax over targets + k sampled items

    def validate(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must lie in (0, 1]")
        if self.lambda_ < 0:
            raise ConfigError("lambda must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")


# ----------------------------------------------------------------------
# parameter initialization (uniform +-1/sqrt(fan_in) for projections, zeros
# for biases/shifts, N(0, 0.02^2) for embedding tables)


def _linear(rng, fan_in, *shape) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


def _zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _embedding(rng, *shape) -> Tensor:
    return Tensor(rng.normal(0.0, 0.02, shape), requires_grad=True)


def init_irl_params(d_text: int, d_image: int, cfg: IrlConfig, rng) -> IrlParams:
    dims = {"text": d_text, "image": d_image, "price": cfg.d_p}
    params = IrlParams()
    for m in MODALITIES:
        d_in = dims[m]
        shift_dim = cfg.d if m == "price" else d_in
        params.shift[m] = [_zeros(shift_dim) for _ in range(cfg.n_h)]
        params.proj[m] = [_linear(rng, d_in, d_in, cfg.d) for _ in range(cfg.n_h)]
        params.route_mean[m] = _linear(rng, d_in, d_in, cfg.n_h)
        params.route_std[m] = _linear(rng, d_in, d_in, cfg.n_h)
    return params


def init_position_embedding(cfg: IntentConfig, rng) -> Tensor:
    return _embedding(rng, cfg.max_seq_len, cfg.d)


def init_intent_params(cfg: IntentConfig, rng) -> IntentParams:
    d = cfg.d
    layers = []
    for _ in range(cfg.n_layers):
        layers.append(LayerParams(
            wq=_linear(rng, d, d, d), bq=_zeros(d),
            wk=_linear(rng, d, d, d), bk=_zeros(d),
            wv=_linear(rng, d, d, d), bv=_zeros(d),
            wo=_linear(rng, d, d, d), bo=_zeros(d),
            ff1_w=_linear(rng, d, d, d), ff1_b=_zeros(d),
            ff2_w=_linear(rng, d, d, d), ff2_b=_zeros(d),
            ln1_scale=Tensor(np.ones(d), requires_grad=True), ln1_shift=_zeros(d),
            ln2_scale=Tensor(np.ones(d), requires_grad=True), ln2_shift=_zeros(d),
        ))
    return IntentParams(pos_emb=init_position_embedding(cfg, rng), layers=layers)


def init_interaction_emb(item_ids, d: int, rng) -> InteractionEmb:
    ids = np.sort(np.asarray(list(item_ids), dtype=np.int64))
    return InteractionEmb(ids=ids, table=_embedding(rng, len(ids), d))


# ----------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState,
              cfg: TrainConfig) -> tuple[np.ndarray, AdamState]:
    """One Adam update; returns the new parameter array and state."""
    if param.shape != grad.shape:
        raise DataError(f"adam_step shape mismatch {param.shape} vs {grad.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    t = state.t + 1
    m = b1 * state.m + (1 - b1) * grad
    v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    new_param = param - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return new_param, AdamState(m=m, v=v, t=t)


class AdamOptimizer:
    def __init__(self, named_tensors, cfg: TrainConfig):
        self.cfg = cfg
        self.slots = [
            (name, t, AdamState(np.zeros_like(t.data), np.zeros_like(t.data)))
            for name, t in named_tensors
        ]

    def zero_grad(self):
        for _, t, _ in self.slots:
            t.grad = None

    def step(self):
        for i, (name, t, state) in enumerate(self.slots):
            grad = t.grad if t.grad is not None else np.zeros_like(t.data)
            try:
                t.data, new_state = adam_step(t.data, grad, state, self.cfg)
            except NumericError as e:
                raise NumericError(f"{e} in parameter {name}") from None
            self.slots[i] = (name, t, new_state)


# ----------------------------------------------------------------------
# data marshalling


@dataclass
class ItemMatrix:
    """Sorted, array-backed view of an item table ready for the model."""

    ids: np.ndarray            # (n,) sorted int64
    text: Tensor               # (n, d_text) constant
    image: Tensor              # (n, d_image) constant
    price_emb: Tensor          # (n, d_p) constant
    raw_prices: np.ndarray
    row_of: dict

    @classmethod
    def from_items(cls, items: dict[int, ItemRecord], irl_cfg: IrlConfig,
                   price_norm: tuple[float, float]) -> "ItemMatrix":
        ids = np.sort(np.fromiter(items.keys(), dtype=np.int64, count=len(items)))
        text = np.stack([np.asarray(items[int(i)].text_emb, dtype=np.float64) for i in ids])
        image = np.stack([np.asarray(items[int(i)].image_emb, dtype=np.float64) for i in ids])
        raw = np.array([items[int(i)].price for i in ids], dtype=np.float64)
        normalized = normalize_prices(raw, price_norm, irl_cfg.price_norm_max)
        return cls(
            ids=ids, text=Tensor(text), image=Tensor(image),
            price_emb=Tensor(encode_prices(normalized, irl_cfg.d_p, irl_cfg.omega)),
            raw_prices=raw, row_of={int(i): r for r, i in enumerate(ids)},
        )


def normalize_prices(raw: np.ndarray, price_norm: tuple[float, float],
                     price_norm_max: float) -> np.ndarray:
    lo, hi = price_norm
    if hi <= lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo) * price_norm_max


def price_norm_stats(item_sets) -> tuple[float, float]:
    prices = [rec.price for items in item_sets for rec in items.values()]
    if not prices:
        raise DataError("cannot compute price statistics over an empty item set")
    return float(min(prices)), float(max(prices))


def table_forward(mat: ItemMatrix, irl_params: IrlParams, irl_cfg: IrlConfig,
                  rng_mode: str = "mean", rng=None,
                  inter: InteractionEmb | None = None) -> dict:
    inter_t = None
    if inter is not None:
        if not np.array_equal(inter.ids, mat.ids):
            raise DataError("interaction table does not cover the item table")
        inter_t = inter.table
    return embed_table(mat.text, mat.image, mat.price_emb, irl_params, irl_cfg,
                       rng_mode, rng, interaction=inter_t)


@dataclass
class Instances:
    """Per-sequence training rows: inputs[i] feeds the encoder, targets[i]
    are the rows each position must predict."""

    inputs: list = field(default_factory=list)
    targets: list = field(default_factory=list)

    @property
    def n_positions(self) -> int:
        return sum(len(t) for t in self.targets)


def build_instances(split: SplitDataset, row_of: dict,
                    final_position_only: bool = False) -> Instances:
    inst = Instances()
    for user in split.users:
        if len(user.train) < 2:
            continue  # nothing to predict inside the train subsequence
        rows = np.array([row_of[i] for i in user.train], dtype=np.int64)
        if final_position_only:
            inst.inputs.append(rows[:-1])
            inst.targets.append(rows[-1:])
        else:
            inst.inputs.append(rows[:-1])
            inst.targets.append(rows[1:])
    return inst


def _group_by_length(indices, inputs):
    groups = {}
    for i in indices:
        groups.setdefault(len(inputs[i]), []).append(i)
    return [groups[k] for k in sorted(groups)]


# ----------------------------------------------------------------------
# training loop


def batch_objective(seq_indices, instances: Instances, mat: ItemMatrix,
                    irl_params: IrlParams, intent_params: IntentParams,
                    inter: InteractionEmb | None, train_cfg: TrainConfig,
                    irl_cfg: IrlConfig, intent_cfg: IntentConfig,
                    rng=None, train_mode: bool = True, use_align: bool = True):
    """Loss graph for one batch of sequences; returns (total, rec, align)."""
    routing = "sample" if (train_mode and train_cfg.sample_routing) else "mean"
    table = table_forward(mat, irl_params, irl_cfg, routing, rng, inter)
    v_table = table["item"]

    # optional sampled-softmax hook: restrict the loss denominator to the
    # batch targets plus k uniformly sampled items (off by default)
    remap = None
    v_cand = v_table
    if train_cfg.sampled_candidates > 0:
        if rng is None:
            raise ConfigError("sampled_candidates requires an rng")
        n_items = v_table.shape[0]
        tgt_rows = np.concatenate([instances.targets[i] for i in seq_indices])
        k = min(train_cfg.sampled_candidates, n_items)
        extra = rng.choice(n_items, size=k, replace=False)
        cand_rows = np.unique(np.concatenate([tgt_rows, extra]))
        remap = np.full(n_items, -1, dtype=np.int64)
        remap[cand_rows] = np.arange(len(cand_rows))
        v_cand = take_rows(v_table, cand_rows)

    rec = None
    final_only = train_cfg.final_position_only
    for group in _group_by_length(seq_indices, instances.inputs):
        inp = np.stack([instances.inputs[i] for i in group])
        tgt = np.stack([instances.targets[i] for i in group])
        if remap is not None:
            tgt = remap[tgt]
        m = take_rows(v_table, inp)
        h = encode_batch(m, intent_params, intent_cfg, train_mode, rng)
        if final_only:
            h = h[:, -1:, :]
        loss, _ = nll_with_rows(h, tgt, v_cand, train_cfg.tau)
        rec = loss if rec is None else rec + loss

    if rec is None:
        raise DataError("batch contains no trainable sequences")

    align = None
    if use_align and train_cfg.lambda_ > 0 and not (irl_cfg.zero_text or irl_cfg.zero_image):
        batch_rows = np.unique(np.concatenate(
            [instances.inputs[i] for i in seq_indices]
            + [instances.targets[i] for i in seq_indices]))
        z_t = take_rows(table["z_text"], batch_rows)
        z_m = take_rows(table["z_image"], batch_rows)
        align, _ = alignment_regularizer(z_t, z_m, train_cfg.tau)
        total = rec + train_cfg.lambda_ * align
    else:
        total = rec
    return total, rec, align


def run_training(instances: Instances, mat: ItemMatrix, irl_params: IrlParams,
                 intent_params: IntentParams, inter: InteractionEmb | None,
                 trainable, train_cfg: TrainConfig, irl_cfg: IrlConfig,
                 intent_cfg: IntentConfig, rng, use_align: bool,
                 on_epoch_end=None) -> list[float]:
    """Adam-optimize `trainable` tensors; returns mean per-position loss per
    epoch. on_epoch_end(epoch, mean_loss) runs after each epoch (used by
    adaptation for validation snapshots)."""
    opt = AdamOptimizer(trainable, train_cfg)
    history = []
    n_seq = len(instances.inputs)
    if n_seq == 0:
        raise DataError("no trainable sequences (all train subsequences too short)")
    for epoch in range(train_cfg.n_epochs):
        order = rng.permutation(n_seq)
        epoch_sum = 0.0
        for start in range(0, n_seq, train_cfg.batch_size):
            batch = order[start:start + train_cfg.batch_size]
            total, rec, align = batch_objective(
                batch, instances, mat, irl_params, intent_params, inter,
                train_cfg, irl_cfg, intent_cfg, rng, True, use_align)
            if not np.isfinite(total.data):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}: rec={float(rec.data)!r}, "
                    f"align={None if align is None else float(align.data)!r}")
            opt.zero_grad()
            total.backward()
            opt.step()
            epoch_sum += float(rec.data)
        mean_loss = epoch_sum / instances.n_positions
        history.append(mean_loss)
        if on_epoch_end is not None:
            on_epoch_end(epoch, mean_loss)
    return history


def merge_task_items(tasks) -> dict[int, ItemRecord]:
    merged: dict[int, ItemRecord] = {}
    for task in tasks:
        for item_id, rec in task.items.items():
            if item_id in merged:
                prev = merged[item_id]
                if (prev.price != rec.price
                        or not np.array_equal(prev.text_emb, rec.text_emb)
                        or not np.array_equal(prev.image_emb, rec.image_emb)):
                    raise DataError(
                        f"item {item_id} appears in multiple tasks with "
                        "conflicting records")
            else:
                merged[item_id] = rec
    return merged


def _check_dims(tasks):
    dims = set()
    for task in tasks:
        for rec in task.items.values():
            dims.add((len(rec.text_emb), len(rec.image_emb)))
            break
    if len(dims) != 1:
        raise DataError(f"tasks disagree on embedding dims: {sorted(dims)}")
    return dims.pop()


def pretrain(aux_tasks: list[TaskDataset], cfg: TrainConfig,
             irl_cfg: IrlConfig, intent_cfg: IntentConfig) -> Checkpoint:
    """Joint pre-training over every auxiliary task's train split.

    The candidate table is the union of all task items; price normalization
    statistics are computed over that union and frozen into the checkpoint.
    """
    if not aux_tasks:
        raise DataError("pretraining requires at least one auxiliary task")
    cfg.validate()
    irl_cfg.validate()
    intent_cfg.validate()
    d_text, d_image = _check_dims(aux_tasks)

    union = merge_task_items(aux_tasks)
    price_norm = price_norm_stats([t.items for t in aux_tasks])
    mat = ItemMatrix.from_items(union, irl_cfg, price_norm)

    instances = Instances()
    for task in aux_tasks:
        part = build_instances(split_leave_one_out(task), mat.row_of,
                               cfg.final_position_only)
        instances.inputs += part.inputs
        instances.targets += part.targets

    rng = np.random.default_rng(cfg.seed)
    irl_params = init_irl_params(d_text, d_image, irl_cfg, rng)
    intent_params = init_intent_params(intent_cfg, rng)
    trainable = irl_params.named_tensors() + intent_params.named_tensors()

    run_training(instances, mat, irl_params, intent_params, None, trainable,
                 cfg, irl_cfg, intent_cfg, rng, use_align=True)

    return Checkpoint(
        irl_params=irl_params, intent_params=intent_params, interaction_emb=None,
        price_norm=price_norm, config_hash=digest_configs(cfg, irl_cfg, intent_cfg),
        seed=cfg.seed, stage="pretrained", irl_cfg=irl_cfg, intent_cfg=intent_cfg,
    )


# ----------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckConfig:
    d: int = 8
    n_h: int = 2
    n_layers: int = 1
    n_heads: int = 1
    d_text: int = 6
    d_image: int = 5
    d_p: int = 4
    n_items: int = 20
    n_sequences: int = 4
    max_seq_len: int = 8
    tau: float = 0.07
    lambda_: float = 1e-3
    beta: float = 0.3
    step: float = 1e-5


def finite_difference_gradients(objective_fn, named_tensors, step: float = 1e-5):
    """Central-difference gradients of scalar objective_fn() for each tensor."""
    out = {}
    for name, tensor in named_tensors:
        data = tensor.data
        grad = np.zeros_like(data)
        it = np.nditer(data, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = data[idx]
            data[idx] = orig + step
            fp = objective_fn()
            data[idx] = orig - step
            fm = objective_fn()
            data[idx] = orig
            grad[idx] = (fp - fm) / (2.0 * step)
            it.iternext()
        out[name] = grad
    return out


def group_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max_i |a_i - n_i| / max(||a||_inf, ||n||_inf, 1e-8)."""
    scale = max(np.max(np.abs(analytic), initial=0.0),
                np.max(np.abs(numeric), initial=0.0), 1e-8)
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / scale)


def _gradcheck_fixture(gc: GradCheckConfig, seed: int):
    rng = np.random.default_rng(seed)
    irl_cfg = IrlConfig(d=gc.d, n_h=gc.n_h, d_p=gc.d_p, omega=100.0, beta=gc.beta)
    intent_cfg = IntentConfig(d=gc.d, n_layers=gc.n_layers, n_heads=gc.n_heads,
                              max_seq_len=gc.max_seq_len, dropout=0.0)
    items = {
        i: ItemRecord(i, rng.standard_normal(gc.d_text),
                      rng.standard_normal(gc.d_image),
                      float(rng.uniform(0.0, 100.0)))
        for i in range(gc.n_items)
    }
    mat = ItemMatrix.from_items(items, irl_cfg, (0.0, 100.0))
    irl_params = init_irl_params(gc.d_text, gc.d_image, irl_cfg, rng)
    intent_params = init_intent_params(intent_cfg, rng)
    inter = init_interaction_emb(range(gc.n_items), gc.d, rng)

    instances = Instances()
    for _ in range(gc.n_sequences):
        length = int(rng.integers(4, gc.max_seq_len))
        walk = rng.integers(0, gc.n_items, length)
        instances.inputs.append(walk[:-1].astype(np.int64))
        instances.targets.append(walk[1:].astype(np.int64))
    return irl_cfg, intent_cfg, mat, irl_params, intent_params, inter, instances


def gradient_check(gc: GradCheckConfig | None = None, seed: int = 0) -> dict[str, float]:
    """Max relative error of analytic vs finite-difference gradients, per
    parameter group, on the combined objective (rec loss over an item table
    with interaction embeddings + alignment regularizer), mean-mode routing
    and dropout off."""
    gc = gc or GradCheckConfig()
    (irl_cfg, intent_cfg, mat, irl_params, intent_params, inter,
     instances) = _gradcheck_fixture(gc, seed)
    train_cfg = TrainConfig(tau=gc.tau, lambda_=gc.lambda_, dropout=0.0,
                            sample_routing=False)
    named = (irl_params.named_tensors() + intent_params.named_tensors()
             + inter.named_tensors())
    all_seqs = list(range(len(instances.inputs)))

    def objective_fn():
        total, _, _ = batch_objective(
            all_seqs, instances, mat, irl_params, intent_params, inter,
            train_cfg, irl_cfg, intent_cfg, rng=None, train_mode=False,
            use_align=True)
        return float(total.data)

    for _, t in named:
        t.grad = None
    total, _, _ = batch_objective(
        all_seqs, instances, mat, irl_params, intent_params, inter,
        train_cfg, irl_cfg, intent_cfg, rng=None, train_mode=False, use_align=True)
    total.backward()
    analytic = {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for name, t in named}

    numeric = finite_difference_gradients(objective_fn, named, gc.step)
    return {name: group_relative_error(analytic[name], numeric[name])
            for name, _ in named}
