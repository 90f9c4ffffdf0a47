"""Export pipeline: item metadata -> frozen encoders -> ANTE files.

The manifest is one JSON document:

    {
      "metadata": "items.jsonl",
      "images_root": ".",
      "text_encoder":  {"name": "hashed-bow", "dim": 64},
      "image_encoder": {"name": "pixel-projection", "dim": 64},
      "out_text": "text.emb",
      "out_image": "image.emb",
      "batch_size": 32
    }

Metadata is JSON-lines, one item per line with fields item_id plus any of
title / sub_categories / brand (concatenated in that order for the text
encoder; missing fields count as empty) and image (path, relative to
images_root). Each export writes a `<out>.provenance.json` sidecar
recording the encoder identity and version; re-running a manifest is
byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ante import write_ante
from .encoders import build_image_encoder, build_text_encoder
from .errors import ManifestError, MetadataError

TEXT_FIELDS = ("title", "sub_categories", "brand")


@dataclass
class ExportManifest:
    metadata: Path
    out_text: Path
    out_image: Path
    text_encoder: dict = field(default_factory=lambda: {"name": "hashed-bow"})
    image_encoder: dict = field(default_factory=lambda: {"name": "pixel-projection"})
    images_root: Path = Path(".")
    batch_size: int = 32

    @classmethod
    def from_file(cls, path) -> "ExportManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ManifestError(f"{path}: {e}") from None
        known = {"metadata", "out_text", "out_image", "text_encoder",
                 "image_encoder", "images_root", "batch_size"}
        unknown = set(doc) - known
        if unknown:
            raise ManifestError(f"unknown manifest keys: {sorted(unknown)}")
        for key in ("metadata", "out_text", "out_image"):
            if key not in doc:
                raise ManifestError(f"manifest missing required key {key!r}")
        base = path.parent
        return cls(
            metadata=base / doc["metadata"],
            out_text=base / doc["out_text"],
            out_image=base / doc["out_image"],
            text_encoder=doc.get("text_encoder", {"name": "hashed-bow"}),
            image_encoder=doc.get("image_encoder", {"name": "pixel-projection"}),
            images_root=base / doc.get("images_root", "."),
            batch_size=int(doc.get("batch_size", 32)),
        )

    def validate(self):
        if self.batch_size < 1:
            raise ManifestError("batch_size must be >= 1")
        if not Path(self.metadata).exists():
            raise MetadataError(f"metadata file {self.metadata} does not exist")


def read_metadata(path) -> list[dict]:
    items = []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise MetadataError(f"{path}:{lineno}: invalid JSON ({e})") from None
            if "item_id" not in row:
                raise MetadataError(f"{path}:{lineno}: missing item_id")
            item_id = int(row["item_id"])
            if item_id in seen:
                raise MetadataError(f"{path}:{lineno}: duplicate item_id {item_id}")
            seen.add(item_id)
            items.append(row)
    if not items:
        raise MetadataError(f"{path}: no items")
    return items


def item_text(row: dict) -> str:
    return " ".join(str(row.get(f, "") or "") for f in TEXT_FIELDS).strip()


def _write_sidecar(out_path: Path, encoder_info: dict, n_items: int,
                   metadata_path: Path):
    doc = {
        "encoder": encoder_info,
        "format": "ANTE v1",
        "metadata": Path(metadata_path).name,
        "n_items": n_items,
    }
    Path(str(out_path) + ".provenance.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n")


def export_text_embeddings(manifest: ExportManifest) -> Path:
    """Encode every item's concatenated text fields and write out_text."""
    manifest.validate()
    encoder = build_text_encoder(manifest.text_encoder)
    items = read_metadata(manifest.metadata)

    empty = [int(r["item_id"]) for r in items if not item_text(r)]
    if empty:
        raise MetadataError(f"items with no text at all: {sorted(empty)}")

    embeddings = {}
    for start in range(0, len(items), manifest.batch_size):
        batch = items[start:start + manifest.batch_size]
        vecs = encoder.encode_texts([item_text(r) for r in batch])
        for row, vec in zip(batch, vecs):
            embeddings[int(row["item_id"])] = vec
    write_ante(manifest.out_text, encoder.dim, embeddings)
    _write_sidecar(manifest.out_text, encoder.info(), len(items), manifest.metadata)
    return Path(manifest.out_text)


def export_image_embeddings(manifest: ExportManifest) -> Path:
    """Encode every item's image and write out_image."""
    manifest.validate()
    encoder = build_image_encoder(manifest.image_encoder)
    items = read_metadata(manifest.metadata)

    missing = []
    paths = {}
    for row in items:
        rel = row.get("image")
        if not rel:
            missing.append(int(row["item_id"]))
            continue
        path = Path(manifest.images_root) / rel
        if not path.exists():
            missing.append(int(row["item_id"]))
        else:
            paths[int(row["item_id"])] = path
    if missing:
        raise MetadataError(f"items with missing images: {sorted(missing)}")

    embeddings = {}
    ordered = [int(r["item_id"]) for r in items]
    for start in range(0, len(ordered), manifest.batch_size):
        batch_ids = ordered[start:start + manifest.batch_size]
        vecs = encoder.encode_images([paths[i] for i in batch_ids])
        for item_id, vec in zip(batch_ids, vecs):
            embeddings[item_id] = vec
    write_ante(manifest.out_image, encoder.dim, embeddings)
    _write_sidecar(manifest.out_image, encoder.info(), len(items), manifest.metadata)
    return Path(manifest.out_image)
