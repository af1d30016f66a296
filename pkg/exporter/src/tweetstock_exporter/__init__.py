"""Offline tweet-embedding exporter writing the EMBC cache format."""

__version__ = "0.1.0"

from .exporter import (  # noqa: F401
    ExportError, ExportJob, ExportSummary, HashEncoder, TransformersEncoder,
    export_embeddings, normalize_tweet, resolve_encoder,
)
