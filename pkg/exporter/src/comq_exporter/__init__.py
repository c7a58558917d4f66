"""Export PyTorch layers into quantizer manifests."""

from comq_exporter.capture import (
    ExportError,
    ExportResult,
    ExportSpec,
    SkippedLayer,
    export_model,
)
from comq_exporter.writer import write_tensor

__version__ = "0.1.0"
