"""Capture layer inputs from PyTorch models and write quantizer jobs.

The quantizer consumes (weight, calibration) matrix pairs: weights are
input-features x output-channels, calibration rows are examples of the
layer's input. Linear layers export their transposed weight directly.
Convolutions are rewritten as matrix products: the input is unfolded
into patches with the layer's own geometry, so every output pixel
becomes one calibration row and the kernel becomes a
(channels * kernel_h * kernel_w) x out_channels matrix. Biases are not
quantized; they ride along in a metadata sidecar.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from fnmatch import fnmatch
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from comq_exporter.writer import write_tensor

DEFAULT_ROW_CAP = 4096

TOY_MODELS = ("toy-mlp", "toy-conv")


class ExportError(RuntimeError):
    """Model could not be loaded or produced nothing exportable."""


@dataclass
class ExportSpec:
    """What to export and where.

    ``model`` is either a built-in toy identifier or a path to a
    checkpoint saved with ``torch.save(model)`` (the whole module, not
    a state dict: layer shapes live in the module). ``patterns`` are
    fnmatch filters over qualified submodule names; the default keeps
    every supported layer. Calibration inputs are drawn from a seeded
    standard normal, ``batches`` forward passes of ``batch_size`` rows
    each; ``input_shape`` is the per-example shape and is required for
    checkpoint models.
    """

    model: str
    out_dir: str | Path
    patterns: tuple[str, ...] = ("*",)
    batches: int = 4
    batch_size: int = 16
    input_shape: tuple[int, ...] | None = None
    row_cap: int = DEFAULT_ROW_CAP
    seed: int = 0


@dataclass
class SkippedLayer:
    name: str
    kind: str
    reason: str


@dataclass
class ExportResult:
    manifest_path: Path
    layer_names: list[str]
    skipped: list[SkippedLayer]
    # raw captured inputs per layer, kept for cross-checking exports
    # against the framework; not written to disk
    captured: dict[str, np.ndarray] = field(default_factory=dict)
    row_indices: dict[str, np.ndarray | None] = field(default_factory=dict)


class _ToyMLP(nn.Module):
    def __init__(self):
        super().__init__()
        self.fc1 = nn.Linear(16, 32)
        self.act = nn.ReLU()
        self.fc2 = nn.Linear(32, 8)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class _ToyConv(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(3, 5, kernel_size=3)

    def forward(self, x):
        return self.conv(x)


def build_model(spec: ExportSpec) -> tuple[nn.Module, tuple[int, ...]]:
    """Resolve the model field to a module and a per-example shape."""
    if spec.model == "toy-mlp":
        torch.manual_seed(spec.seed)
        return _ToyMLP(), spec.input_shape or (16,)
    if spec.model == "toy-conv":
        torch.manual_seed(spec.seed)
        return _ToyConv(), spec.input_shape or (3, 8, 8)
    path = Path(spec.model)
    if not path.exists():
        raise ExportError(f"model {spec.model!r} is neither a built-in "
                          f"({', '.join(TOY_MODELS)}) nor a checkpoint path")
    loaded = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(loaded, nn.Module):
        raise ExportError(f"checkpoint {spec.model!r} did not contain a module")
    if spec.input_shape is None:
        raise ExportError("checkpoint models need an explicit input shape")
    return loaded, spec.input_shape


def _supported(module: nn.Module) -> str | None:
    """Reason the module cannot be exported, None when it can."""
    if isinstance(module, nn.Linear):
        return None
    if isinstance(module, nn.Conv2d):
        if module.groups != 1:
            return "grouped convolutions do not flatten to one matmul"
        if module.padding_mode != "zeros":
            return f"padding mode {module.padding_mode!r} is not zero padding"
        return None
    return "unsupported layer kind"


def _rows_linear(inputs: torch.Tensor, layer: nn.Linear) -> np.ndarray:
    return inputs.reshape(-1, layer.in_features).numpy().astype(np.float32)


def _rows_conv(inputs: torch.Tensor, layer: nn.Conv2d) -> np.ndarray:
    patches = F.unfold(inputs, kernel_size=layer.kernel_size,
                       dilation=layer.dilation, padding=layer.padding,
                       stride=layer.stride)
    # (batch, channels*kh*kw, positions) -> one row per output pixel
    rows = patches.transpose(1, 2).reshape(-1, patches.shape[1])
    return rows.numpy().astype(np.float32)


def _weight_matrix(layer: nn.Module) -> np.ndarray:
    w = layer.weight.detach()
    if isinstance(layer, nn.Conv2d):
        w = w.reshape(w.shape[0], -1)
    return w.t().contiguous().numpy().astype(np.float32)


def export_model(spec: ExportSpec) -> ExportResult:
    """Run calibration forward passes and write tensors plus manifest.

    Selected layers must match one of ``spec.patterns``; a filter that
    matches nothing still writes a valid, empty manifest under a
    warning. Unsupported layer kinds that match are collected in the
    result's skipped list (also warned) rather than failing the export.
    """
    model, input_shape = build_model(spec)
    model.eval()

    chosen: list[tuple[str, nn.Module]] = []
    skipped: list[SkippedLayer] = []
    for name, module in model.named_modules():
        if name == "" or len(list(module.children())) > 0:
            continue
        if not any(fnmatch(name, pat) for pat in spec.patterns):
            continue
        if not hasattr(module, "weight"):
            continue
        reason = _supported(module)
        if reason is not None:
            skipped.append(SkippedLayer(name, type(module).__name__, reason))
            continue
        chosen.append((name, module))

    if not chosen:
        warnings.warn("no layer matched the filter patterns; "
                      "writing an empty manifest")
    for skip in skipped:
        warnings.warn(f"skipping {skip.name} ({skip.kind}): {skip.reason}")

    grabbed: dict[str, list[torch.Tensor]] = {name: [] for name, _ in chosen}
    handles = []
    for name, module in chosen:
        def hook(mod, args, _name=name):
            grabbed[_name].append(args[0].detach())
        handles.append(module.register_forward_pre_hook(hook))

    rng = np.random.default_rng(spec.seed)
    try:
        with torch.no_grad():
            for _ in range(spec.batches):
                batch = rng.standard_normal((spec.batch_size, *input_shape))
                model(torch.from_numpy(batch.astype(np.float32)))
    finally:
        for handle in handles:
            handle.remove()

    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = ExportResult(manifest_path=out / "manifest.json",
                          layer_names=[], skipped=skipped)
    manifest_layers = []
    meta_layers = {}
    for name, module in chosen:
        raw = torch.cat(grabbed[name], dim=0)
        if isinstance(module, nn.Linear):
            rows = _rows_linear(raw, module)
        else:
            rows = _rows_conv(raw, module)
        indices = None
        if rows.shape[0] > spec.row_cap:
            indices = np.sort(rng.choice(rows.shape[0], size=spec.row_cap,
                                         replace=False))
            rows = rows[indices]
        weight = _weight_matrix(module)

        safe = name.replace("/", ".")
        write_tensor(out / f"{safe}_w.ct", weight)
        write_tensor(out / f"{safe}_x.ct", rows)
        bias_file = None
        if module.bias is not None:
            bias_file = f"{safe}_b.ct"
            write_tensor(out / bias_file,
                         module.bias.detach().numpy().astype(np.float32))

        manifest_layers.append({"name": safe, "weight": f"{safe}_w.ct",
                                "calib": f"{safe}_x.ct"})
        meta_layers[safe] = {
            "source": name,
            "kind": "conv2d" if isinstance(module, nn.Conv2d) else "linear",
            "bias": bias_file,
            "weight_shape": list(module.weight.shape),
            "conv": ({
                "kernel": list(module.kernel_size),
                "stride": list(module.stride),
                "padding": list(module.padding),
                "dilation": list(module.dilation),
            } if isinstance(module, nn.Conv2d) else None),
        }
        result.layer_names.append(safe)
        result.captured[safe] = raw.numpy().astype(np.float32)
        result.row_indices[safe] = indices

    result.manifest_path.write_text(
        json.dumps({"layers": manifest_layers}, indent=2, sort_keys=True) + "\n")
    (out / "export_meta.json").write_text(json.dumps({
        "model": str(spec.model),
        "seed": spec.seed,
        "row_cap": spec.row_cap,
        "layers": meta_layers,
        "skipped": [{"name": s.name, "kind": s.kind, "reason": s.reason}
                    for s in skipped],
    }, indent=2, sort_keys=True) + "\n")
    return result
