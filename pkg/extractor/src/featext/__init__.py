"""Image feature extraction into FEAT1 containers."""

__version__ = "0.1.0"

from .extract import ExtractionJob, extract, write_feat1

__all__ = ["ExtractionJob", "extract", "write_feat1"]
