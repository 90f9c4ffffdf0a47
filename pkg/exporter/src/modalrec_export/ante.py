"""Writer for the engine's 'ANTE' embedding file format.

Independent implementation against the published byte layout (the exporter
talks to the engine through files only):

    magic 'ANTE' | version u32=1 | n_items u64 | dim u32 |
    n_items x (item_id u64, dim x f32), sorted ascending by item_id
"""

import struct

import numpy as np

from .errors import MetadataError

MAGIC = b"ANTE"
VERSION = 1
_HEADER = struct.Struct("<4sIQI")


def write_ante(path, dim: int, embeddings: dict) -> None:
    for item_id, vec in embeddings.items():
        if int(item_id) < 0:
            raise MetadataError(f"negative item_id {item_id}")
        if len(np.ravel(vec)) != dim:
            raise MetadataError(
                f"item {item_id}: vector length {len(np.ravel(vec))} != dim {dim}")
    rec = np.dtype([("id", "<u8"), ("vec", "<f4", (dim,))])
    records = np.empty(len(embeddings), dtype=rec)
    for row, item_id in enumerate(sorted(embeddings)):
        records[row] = (item_id, np.asarray(embeddings[item_id], dtype="<f4"))
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, len(embeddings), dim))
        f.write(records.tobytes())
