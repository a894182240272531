"""Exporter from pretrained VGG16 checkpoints to the NNWB weight-bundle format.

The package writes three files per export: ``vgg16.nnwb`` (tensors plus
preprocessing metadata), ``labels.txt`` (1000 class names, one per line)
and ``manifest.json`` (provenance, the layer-name mapping table, and the
result of the reload-and-classify verification).  The bundle is the whole
interface: consumers read the file and never import this package or the
source framework.
"""

from .export import (
    ExportError,
    ExportManifest,
    SourceUnavailableError,
    export_bundle,
    probe_image,
)
from .mapping import LayerMap, layer_table
from .writer import write_nnwb

__all__ = [
    "ExportError",
    "ExportManifest",
    "LayerMap",
    "SourceUnavailableError",
    "export_bundle",
    "layer_table",
    "probe_image",
    "write_nnwb",
]

__version__ = "0.1.0"
