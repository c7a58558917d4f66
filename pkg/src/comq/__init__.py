"""Calibration-aware coordinate-descent weight quantization."""

from comq.grid import (
    CodeSet,
    DegenerateLayerError,
    DegenerateScaleWarning,
    InvalidConfigError,
    NumericError,
    QuantConfig,
    QuantError,
    QuantizedLayer,
    ShapeMismatchError,
    affine_codes,
    default_lambda,
    dequantize,
    project_to_codes,
    symmetric_codes,
)

from comq.perchannel import PerChannelResult, comq_per_channel, rtn_per_channel
from comq.perlayer import PerLayerResult, comq_per_layer, rtn_per_layer
from comq.tensor_io import (
    ArtifactConsistencyError,
    LayerSpec,
    Manifest,
    ManifestError,
    ManifestWarning,
    TensorFormatError,
    load_manifest,
    load_quantized,
    load_tensor,
    save_quantized,
    save_tensor,
)
from comq.trace import Observer, StepEvent

__version__ = "0.1.0"
