class ExportError(Exception):
    pass


class ManifestError(ExportError):
    """Bad manifest document or unknown encoder."""


class MetadataError(ExportError):
    """Bad item metadata: duplicates, missing text, unreadable images."""


class EncoderError(ExportError):
    """Encoder could not be loaded or failed while encoding."""
