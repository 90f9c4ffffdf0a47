"""Offline item-embedding exporter for the modalrec engine."""

from .ante import write_ante
from .encoders import (HashedBowText, HfImage, HfText, PixelProjectionImage,
                       build_image_encoder, build_text_encoder)
from .export import (ExportManifest, export_image_embeddings,
                     export_text_embeddings, item_text, read_metadata)

__version__ = "0.1.0"
