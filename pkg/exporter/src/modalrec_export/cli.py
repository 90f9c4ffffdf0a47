"""CLI: modalrec-export {text|image|all} --manifest manifest.json"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import EncoderError, ManifestError, MetadataError
from .export import ExportManifest, export_image_embeddings, export_text_embeddings


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="modalrec-export",
        description="Export item text/image embeddings to ANTE files.")
    parser.add_argument("what", choices=("text", "image", "all"))
    parser.add_argument("--manifest", required=True)
    args = parser.parse_args(argv)

    try:
        manifest = ExportManifest.from_file(args.manifest)
        if args.what in ("text", "all"):
            out = export_text_embeddings(manifest)
            print(f"text embeddings -> {out}")
        if args.what in ("image", "all"):
            out = export_image_embeddings(manifest)
            print(f"image embeddings -> {out}")
        return 0
    except ManifestError as e:
        print(f'error: {{"type": "manifest", "message": {json.dumps(str(e))}}}',
              file=sys.stderr)
        return 2
    except (MetadataError, EncoderError) as e:
        print(f'error: {{"type": "data", "message": {json.dumps(str(e))}}}',
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
