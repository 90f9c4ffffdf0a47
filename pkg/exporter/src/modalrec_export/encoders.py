"""Frozen encoders that turn raw item metadata into embedding vectors.

Two deterministic built-ins work fully offline:

  hashed-bow       text -> mean-pooled hashed bag of tokens
  pixel-projection image -> downscaled RGB pixels through a fixed random
                   projection

`hf-text` / `hf-image` wrap transformers checkpoints (pooled outputs) when
the weights are available locally; they are never required by the tests.
Every encoder carries a version string recorded in the provenance sidecar,
and none of them normalizes its output after pooling - the engine owns all
transformations downstream.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

from .errors import EncoderError, ManifestError

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class HashedBowText:
    """Mean-pooled hashed bag-of-tokens sentence encoder."""

    name = "hashed-bow"
    version = "1"

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ManifestError("hashed-bow dim must be >= 1")
        self.dim = dim

    def info(self) -> dict:
        return {"name": self.name, "version": self.version, "dim": self.dim}

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for row, text in enumerate(texts):
            tokens = _TOKEN_RE.findall(text.lower())
            if not tokens:
                continue
            for token in tokens:
                digest = hashlib.sha1(token.encode("utf-8")).digest()
                bucket = int.from_bytes(digest[:8], "little") % self.dim
                sign = 1.0 if digest[8] % 2 == 0 else -1.0
                out[row, bucket] += sign
            out[row] /= len(tokens)
        return out


class PixelProjectionImage:
    """16x16 RGB downscale followed by a fixed random projection."""

    name = "pixel-projection"
    version = "1"
    _SIDE = 16

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ManifestError("pixel-projection dim must be >= 1")
        self.dim = dim
        flat = 3 * self._SIDE * self._SIDE
        rng = np.random.default_rng(20240 + dim)  # frozen per output width
        self._proj = rng.standard_normal((flat, dim)).astype(np.float32)
        self._proj /= np.sqrt(flat)

    def info(self) -> dict:
        return {"name": self.name, "version": self.version, "dim": self.dim}

    def encode_images(self, paths: list) -> np.ndarray:
        from PIL import Image, UnidentifiedImageError

        out = np.zeros((len(paths), self.dim), dtype=np.float32)
        for row, path in enumerate(paths):
            try:
                with Image.open(path) as img:
                    img = img.convert("RGB").resize((self._SIDE, self._SIDE),
                                                    Image.BILINEAR)
                    pixels = np.asarray(img, dtype=np.float32) / 255.0
            except (OSError, UnidentifiedImageError) as e:
                raise EncoderError(f"unreadable image {path}: {e}") from None
            out[row] = pixels.reshape(-1) @ self._proj
        return out


class HfText:
    """transformers AutoModel sentence encoder (pooled output)."""

    name = "hf-text"

    def __init__(self, model: str):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer

            self._torch = torch
            self._tokenizer = AutoTokenizer.from_pretrained(model)
            self._model = AutoModel.from_pretrained(model).eval()
        except Exception as e:
            raise EncoderError(f"cannot load text encoder {model!r}: {e}") from None
        self.model_id = model
        self.dim = int(self._model.config.hidden_size)
        self.version = getattr(self._model.config, "transformers_version", "unknown")

    def info(self) -> dict:
        return {"name": self.name, "version": self.version,
                "model": self.model_id, "dim": self.dim}

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        with self._torch.no_grad():
            batch = self._tokenizer(texts, padding=True, truncation=True,
                                    return_tensors="pt")
            output = self._model(**batch)
        pooled = getattr(output, "pooler_output", None)
        if pooled is None:
            pooled = output.last_hidden_state.mean(dim=1)
        return pooled.numpy().astype(np.float32)


class HfImage:
    """transformers AutoModel vision encoder (pooled output)."""

    name = "hf-image"

    def __init__(self, model: str):
        try:
            import torch
            from transformers import AutoImageProcessor, AutoModel

            self._torch = torch
            self._processor = AutoImageProcessor.from_pretrained(model)
            self._model = AutoModel.from_pretrained(model).eval()
        except Exception as e:
            raise EncoderError(f"cannot load image encoder {model!r}: {e}") from None
        self.model_id = model
        self.dim = int(self._model.config.hidden_size)
        self.version = getattr(self._model.config, "transformers_version", "unknown")

    def info(self) -> dict:
        return {"name": self.name, "version": self.version,
                "model": self.model_id, "dim": self.dim}

    def encode_images(self, paths: list) -> np.ndarray:
        from PIL import Image

        images = [Image.open(p).convert("RGB") for p in paths]
        with self._torch.no_grad():
            batch = self._processor(images=images, return_tensors="pt")
            output = self._model(**batch)
        pooled = getattr(output, "pooler_output", None)
        if pooled is None:
            pooled = output.last_hidden_state.mean(dim=1)
        return pooled.numpy().astype(np.float32)


def build_text_encoder(spec: dict):
    name = spec.get("name")
    if name == "hashed-bow":
        return HashedBowText(dim=int(spec.get("dim", 64)))
    if name == "hf-text":
        if "model" not in spec:
            raise ManifestError("hf-text encoder needs a 'model' entry")
        return HfText(spec["model"])
    raise ManifestError(f"unknown text encoder {name!r}")


def build_image_encoder(spec: dict):
    name = spec.get("name")
    if name == "pixel-projection":
        return PixelProjectionImage(dim=int(spec.get("dim", 64)))
    if name == "hf-image":
        if "model" not in spec:
            raise ManifestError("hf-image encoder needs a 'model' entry")
        return HfImage(spec["model"])
    raise ManifestError(f"unknown image encoder {name!r}")
