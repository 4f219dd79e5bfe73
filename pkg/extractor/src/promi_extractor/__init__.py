"""Offline feature exporter feeding the segmentation engine's file formats."""

from .boxes import derive_boxes
from .encoder import ENCODERS, build_encoder
from .export import export_features
from .spec import ExportSpec

__version__ = "0.1.0"

__all__ = ["ENCODERS", "ExportSpec", "build_encoder", "derive_boxes",
           "export_features"]
