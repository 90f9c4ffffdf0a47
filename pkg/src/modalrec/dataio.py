"""On-disk formats and dataset loading.

A task directory holds items.tsv, interactions.tsv, text.emb, image.emb and
an optional meta.json. Embedding files are little-endian binary:

    magic 'ANTE' | version u32 | n_items u64 | dim u32 |
    n_items x (item_id u64, dim x f32), sorted ascending by item_id
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptionError, DataError, FormatError

EMB_MAGIC = b"ANTE"
EMB_VERSION = 1
_HEADER = struct.Struct("<4sIQI")

ROLES = ("auxiliary", "target")


@dataclass
class ItemRecord:
    item_id: int
    text_emb: np.ndarray
    image_emb: np.ndarray
    price: float


@dataclass
class TaskDataset:
    task_id: str
    items: dict[int, ItemRecord]
    sequences: list[tuple[str, list[int]]]  # (user_id, time-ordered item ids)
    role: str = "auxiliary"

    @property
    def n_users(self) -> int:
        return len(self.sequences)


@dataclass
class UserSplit:
    user_id: str
    train: list[int]
    val: int
    test: int


@dataclass
class SplitDataset:
    task_id: str
    items: dict[int, ItemRecord]
    users: list[UserSplit] = field(default_factory=list)


def read_embedding_file(path) -> tuple[int, dict[int, np.ndarray]]:
    """Parse an 'ANTE' file into (dim, {item_id: float32 vector})."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CorruptionError(f"{path}: file shorter than header")
    magic, version, n_items, dim = _HEADER.unpack_from(raw, 0)
    if magic != EMB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != EMB_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    rec_dtype = np.dtype([("id", "<u8"), ("vec", "<f4", (dim,))])
    expected = _HEADER.size + n_items * rec_dtype.itemsize
    if len(raw) != expected:
        raise CorruptionError(
            f"{path}: payload is {len(raw) - _HEADER.size} bytes, "
            f"expected {expected - _HEADER.size}"
        )
    records = np.frombuffer(raw, dtype=rec_dtype, count=n_items, offset=_HEADER.size)
    ids = records["id"]
    if len(np.unique(ids)) != len(ids):
        raise DataError(f"{path}: duplicate item_id in embedding file")
    return dim, {int(i): np.array(v) for i, v in zip(ids, records["vec"])}


def write_embedding_file(path, dim: int, embeddings: dict[int, np.ndarray]) -> None:
    """Write an 'ANTE' file; records sorted by item_id so output is deterministic."""
    for item_id, vec in embeddings.items():
        if len(np.ravel(vec)) != dim:
            raise DataError(
                f"item {item_id}: vector length {len(np.ravel(vec))} != dim {dim}"
            )
    rec_dtype = np.dtype([("id", "<u8"), ("vec", "<f4", (dim,))])
    records = np.empty(len(embeddings), dtype=rec_dtype)
    for row, item_id in enumerate(sorted(embeddings)):
        records[row] = (item_id, np.asarray(embeddings[item_id], dtype="<f4"))
    with open(path, "wb") as f:
        f.write(_HEADER.pack(EMB_MAGIC, EMB_VERSION, len(embeddings), dim))
        f.write(records.tobytes())


def _read_tsv(path, columns):
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header.split("\t") != list(columns):
            raise DataError(f"{path}: expected header {columns}, got {header!r}")
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != len(columns):
                raise DataError(f"{path}:{lineno}: expected {len(columns)} columns")
            rows.append(parts)
    return rows


def load_task_dataset(task_dir, max_seq_len: int, raw_mode: bool = False) -> TaskDataset:
    """Load one task directory.

    Sequences are time-sorted per user (ties broken by input order) and
    truncated to the most recent max_seq_len interactions. With raw_mode,
    items and then users with fewer than five interactions are dropped
    before truncation; otherwise the data is taken as pre-filtered and a
    sequence shorter than 3 is an error.
    """
    task_dir = Path(task_dir)
    for name in ("items.tsv", "interactions.tsv", "text.emb", "image.emb"):
        if not (task_dir / name).exists():
            raise DataError(f"{task_dir}: missing {name}")

    meta = {"task_id": task_dir.name, "role": "auxiliary"}
    meta_path = task_dir / "meta.json"
    if meta_path.exists():
        meta.update(json.loads(meta_path.read_text()))
    if meta["role"] not in ROLES:
        raise DataError(f"{task_dir}: bad role {meta['role']!r}")

    _, text_map = read_embedding_file(task_dir / "text.emb")
    _, image_map = read_embedding_file(task_dir / "image.emb")

    prices = {}
    for item_str, price_str in _read_tsv(task_dir / "items.tsv", ("item_id", "price")):
        item_id = int(item_str)
        if item_id in prices:
            raise DataError(f"{task_dir}: duplicate item_id {item_id} in items.tsv")
        price = float(price_str)
        if not np.isfinite(price) or price < 0:
            raise DataError(f"{task_dir}: item {item_id} has bad price {price_str}")
        prices[item_id] = price

    interactions = {}
    for user, item_str, ts_str in _read_tsv(
        task_dir / "interactions.tsv", ("user_id", "item_id", "timestamp")
    ):
        item_id = int(item_str)
        if item_id not in prices:
            raise DataError(
                f"{task_dir}: item {item_id} appears in interactions.tsv "
                "but not in items.tsv"
            )
        interactions.setdefault(user, []).append((int(ts_str), item_id))

    if raw_mode:
        counts = {}
        for events in interactions.values():
            for _, item_id in events:
                counts[item_id] = counts.get(item_id, 0) + 1
        kept_items = {i for i, c in counts.items() if c >= 5}
        interactions = {
            u: [e for e in events if e[1] in kept_items]
            for u, events in interactions.items()
        }
        interactions = {u: ev for u, ev in interactions.items() if len(ev) >= 5}
        prices = {i: p for i, p in prices.items() if i in kept_items}

    items = {}
    for item_id, price in prices.items():
        if item_id not in text_map or item_id not in image_map:
            raise DataError(f"{task_dir}: item {item_id} lacks a modality embedding")
        items[item_id] = ItemRecord(item_id, text_map[item_id], image_map[item_id], price)

    sequences = []
    for user in sorted(interactions):
        events = interactions[user]
        order = sorted(range(len(events)), key=lambda k: events[k][0])  # stable
        seq = [events[k][1] for k in order][-max_seq_len:]
        if len(seq) < 3:
            raise DataError(
                f"{task_dir}: user {user} has only {len(seq)} interactions; "
                "need at least 3 for leave-one-out"
            )
        sequences.append((user, seq))

    return TaskDataset(meta["task_id"], items, sequences, meta["role"])


def split_leave_one_out(dataset: TaskDataset) -> SplitDataset:
    """Last interaction for test, second-to-last for validation, rest for train."""
    users = []
    for user, seq in dataset.sequences:
        if len(seq) < 3:
            raise DataError(f"user {user}: sequence length {len(seq)} < 3")
        users.append(UserSplit(user, list(seq[:-2]), seq[-2], seq[-1]))
    return SplitDataset(dataset.task_id, dataset.items, users)
