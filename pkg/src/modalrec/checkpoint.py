"""Checkpoint container and its binary 'ANTC' file format.

Layout (little-endian):

    magic 'ANTC' | version u32 | config-hash 32 bytes | seed u64 | stage u8 |
    n_tensors u32 | n_tensors x (name_len u16, name utf-8, rank u8,
                                 rank x dim u32, float64 payload)

Besides the trainable parameters, scalar model-config entries are stored as
rank-0 tensors under cfg.* so a checkpoint is self-describing for scoring
and evaluation. Interaction-embedding item ids are stored as a float64
vector, which is exact for ids below 2**53.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields

import numpy as np

from .autodiff import Tensor
from .errors import CorruptionError, DataError, FormatError
from .intent import IntentConfig, IntentParams, LayerParams
from .irl import MODALITIES, IrlConfig, IrlParams

CKPT_MAGIC = b"ANTC"
CKPT_VERSION = 1
_HEADER = struct.Struct("<4sI32sQB")
STAGES = ("pretrained", "adapted", "scratch")


@dataclass
class InteractionEmb:
    """Per-item embedding table learned from target-task interactions."""

    ids: np.ndarray       # sorted item ids
    table: Tensor         # (n_items, d)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if np.any(self.ids[1:] <= self.ids[:-1]):
            raise DataError("interaction embedding ids must be strictly increasing")
        if np.any(self.ids >= 2**53):
            raise DataError("interaction embedding ids must fit in 53 bits")

    def row_of(self, item_id: int) -> int:
        row = int(np.searchsorted(self.ids, item_id))
        if row >= len(self.ids) or self.ids[row] != item_id:
            raise DataError(f"item {item_id} not in interaction embedding table")
        return row

    def named_tensors(self):
        return [("interaction.table", self.table)]


@dataclass
class Checkpoint:
    irl_params: IrlParams
    intent_params: IntentParams
    interaction_emb: InteractionEmb | None
    price_norm: tuple[float, float]
    config_hash: bytes
    seed: int
    stage: str
    irl_cfg: IrlConfig
    intent_cfg: IntentConfig

    def validate(self):
        if self.stage not in STAGES:
            raise DataError(f"unknown stage {self.stage!r}")
        if self.stage == "pretrained" and self.interaction_emb is not None:
            raise DataError("pretrained checkpoints carry no interaction embeddings")
        if len(self.config_hash) != 32:
            raise DataError("config hash must be 32 bytes")

    def named_tensors(self):
        out = list(self.irl_params.named_tensors())
        out += self.intent_params.named_tensors()
        if self.interaction_emb is not None:
            out += self.interaction_emb.named_tensors()
        return out


def _cfg_scalars(ckpt: Checkpoint) -> dict[str, float]:
    out = {}
    for f in fields(IrlConfig):
        out[f"cfg.irl.{f.name}"] = float(getattr(ckpt.irl_cfg, f.name))
    for f in fields(IntentConfig):
        out[f"cfg.intent.{f.name}"] = float(getattr(ckpt.intent_cfg, f.name))
    return out


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    ckpt.validate()
    entries = {name: t.data for name, t in ckpt.named_tensors()}
    if ckpt.interaction_emb is not None:
        entries["interaction.item_ids"] = ckpt.interaction_emb.ids.astype(np.float64)
    entries["price_norm"] = np.array(ckpt.price_norm, dtype=np.float64)
    for name, value in _cfg_scalars(ckpt).items():
        entries[name] = np.float64(value)

    blob = bytearray()
    blob += _HEADER.pack(CKPT_MAGIC, CKPT_VERSION, ckpt.config_hash,
                         ckpt.seed, STAGES.index(ckpt.stage))
    blob += struct.pack("<I", len(entries))
    for name in sorted(entries):
        arr = np.asarray(entries[name], dtype="<f8")
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded)) + encoded
        blob += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<I", dim)
        blob += arr.tobytes()
    with open(path, "wb") as f:
        f.write(blob)


def _read_exact(buf, offset, n, path):
    if offset + n > len(buf):
        raise CorruptionError(f"{path}: truncated checkpoint")
    return buf[offset:offset + n], offset + n


def load_checkpoint(path) -> Checkpoint:
    raw = open(path, "rb").read()
    if len(raw) < _HEADER.size + 4:
        raise CorruptionError(f"{path}: file shorter than header")
    magic, version, config_hash, seed, stage_code = _HEADER.unpack_from(raw, 0)
    if magic != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if stage_code >= len(STAGES):
        raise CorruptionError(f"{path}: bad stage byte {stage_code}")
    offset = _HEADER.size
    (count,) = struct.unpack_from("<I", raw, offset)
    offset += 4

    tensors = {}
    for _ in range(count):
        chunk, offset = _read_exact(raw, offset, 2, path)
        (name_len,) = struct.unpack("<H", chunk)
        chunk, offset = _read_exact(raw, offset, name_len, path)
        name = chunk.decode("utf-8")
        chunk, offset = _read_exact(raw, offset, 1, path)
        rank = chunk[0]
        dims = []
        for _ in range(rank):
            chunk, offset = _read_exact(raw, offset, 4, path)
            dims.append(struct.unpack("<I", chunk)[0])
        size = int(np.prod(dims, dtype=np.int64)) if dims else 1
        chunk, offset = _read_exact(raw, offset, size * 8, path)
        tensors[name] = np.frombuffer(chunk, dtype="<f8").reshape(dims).copy()
    if offset != len(raw):
        raise CorruptionError(f"{path}: {len(raw) - offset} trailing bytes")

    def scalar(name, cast=float):
        if name not in tensors:
            raise CorruptionError(f"{path}: missing entry {name}")
        return cast(tensors[name])

    irl_cfg = IrlConfig(
        d=scalar("cfg.irl.d", int), n_h=scalar("cfg.irl.n_h", int),
        d_p=scalar("cfg.irl.d_p", int), omega=scalar("cfg.irl.omega"),
        beta=scalar("cfg.irl.beta"),
        price_norm_max=scalar("cfg.irl.price_norm_max"),
        zero_text=bool(scalar("cfg.irl.zero_text")),
        zero_image=bool(scalar("cfg.irl.zero_image")),
        zero_price=bool(scalar("cfg.irl.zero_price")),
        zero_fusion=bool(scalar("cfg.irl.zero_fusion")),
        linear_routing=bool(scalar("cfg.irl.linear_routing")),
    )
    intent_cfg = IntentConfig(
        d=scalar("cfg.intent.d", int), n_layers=scalar("cfg.intent.n_layers", int),
        n_heads=scalar("cfg.intent.n_heads", int),
        max_seq_len=scalar("cfg.intent.max_seq_len", int),
        dropout=scalar("cfg.intent.dropout"),
        pre_norm=bool(scalar("cfg.intent.pre_norm")),
    )

    irl_params = IrlParams()
    for m in MODALITIES:
        heads = sorted(
            int(n.rsplit("shift", 1)[1]) for n in tensors
            if n.startswith(f"irl.{m}.shift")
        )
        if heads != list(range(len(heads))) or not heads:
            raise CorruptionError(f"{path}: malformed head set for {m}")
        irl_params.shift[m] = [Tensor(tensors[f"irl.{m}.shift{k}"]) for k in heads]
        irl_params.proj[m] = [Tensor(tensors[f"irl.{m}.proj{k}"]) for k in heads]
        irl_params.route_mean[m] = Tensor(tensors[f"irl.{m}.route_mean"])
        irl_params.route_std[m] = Tensor(tensors[f"irl.{m}.route_std"])

    layers = []
    for i in range(intent_cfg.n_layers):
        kwargs = {}
        for f in fields(LayerParams):
            key = f"intent.layer{i}.{f.name}"
            if key not in tensors:
                raise CorruptionError(f"{path}: missing entry {key}")
            kwargs[f.name] = Tensor(tensors[key])
        layers.append(LayerParams(**kwargs))
    intent_params = IntentParams(pos_emb=Tensor(tensors["intent.pos_emb"]),
                                 layers=layers)

    interaction = None
    if "interaction.table" in tensors:
        interaction = InteractionEmb(
            ids=tensors["interaction.item_ids"].astype(np.int64),
            table=Tensor(tensors["interaction.table"]),
        )

    pn = tensors["price_norm"]
    ckpt = Checkpoint(
        irl_params=irl_params, intent_params=intent_params,
        interaction_emb=interaction, price_norm=(float(pn[0]), float(pn[1])),
        config_hash=bytes(config_hash), seed=int(seed), stage=STAGES[stage_code],
        irl_cfg=irl_cfg, intent_cfg=intent_cfg,
    )
    ckpt.validate()
    return ckpt
