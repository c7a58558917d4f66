"""On-disk formats: tensors, quantized-layer artifacts and job manifests.

Tensor files are a fixed little-endian layout, stable across platforms
and languages:

    bytes 0..7    magic "COMQTNSR"
    bytes 8..11   format version, uint32, currently 1
    byte  12      dtype code: 0 = float32, 1 = int8, 2 = int32
    byte  13      rank
    then          rank dimension sizes, uint64 each
    then          payload, row-major, little-endian, no padding

An artifact directory holds one subdirectory per layer with codes.ct,
scales.ct, zeros.ct and a JSON ``meta`` record. Codes narrow to int8 on
disk when both the bit width and the code values allow it. Manifests
are JSON with job-level
defaults and one weight/calib pair per layer; unknown keys warn instead
of failing so newer producers keep working against older readers.
"""

from __future__ import annotations

import json
import re
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from comq.grid import QuantizedLayer

MAGIC = b"COMQTNSR"
FORMAT_VERSION = 1
META_NAME = "meta"

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i1"), 2: np.dtype("<i4")}
_CODES = {np.dtype("float32"): 0, np.dtype("int8"): 1, np.dtype("int32"): 2}

_META_KEYS = frozenset(
    ("bits", "iters", "lambda", "granularity", "order", "solver_version",
     "error_before", "error_after")
)
_NAME_RE = re.compile(r"^[A-Za-z0-9._-]+$")


class TensorFormatError(Exception):
    """Base class for malformed tensor files and artifacts."""


class BadMagicError(TensorFormatError):
    """The file does not start with the tensor magic."""


class BadVersionError(TensorFormatError):
    """The format version is not one this reader understands."""


class BadDtypeError(TensorFormatError):
    """The dtype code is unknown, or an array has an unsupported dtype."""


class TruncatedPayloadError(TensorFormatError):
    """The payload length does not match the header's dimensions."""


class ArtifactConsistencyError(TensorFormatError):
    """An artifact's pieces disagree with each other or its metadata."""


class ManifestError(Exception):
    """The manifest is structurally invalid or references bad inputs."""


class ManifestWarning(UserWarning):
    """The manifest carries keys this reader does not understand."""


def save_tensor(path, array: np.ndarray) -> None:
    """Write an array in the tensor layout. The dtype must be float32,
    int8 or int32; callers cast deliberately, never silently."""
    arr = np.asarray(array)
    if not arr.flags["C_CONTIGUOUS"]:
        # ascontiguousarray would also promote rank-0 arrays to rank-1
        arr = np.ascontiguousarray(arr)
    code = _CODES.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise BadDtypeError(f"unsupported dtype {arr.dtype}; cast to f4/i1/i4 first")
    header = struct.pack("<8sIBB", MAGIC, FORMAT_VERSION, code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = arr.astype(_DTYPES[code], copy=False).tobytes(order="C")
    Path(path).write_bytes(header + dims + payload)


def _parse_header(blob: bytes, path) -> tuple[np.dtype, tuple[int, ...], int]:
    if len(blob) < 8:
        raise TruncatedPayloadError(f"{path}: file shorter than the magic")
    if blob[:8] != MAGIC:
        raise BadMagicError(f"{path}: not a tensor file (magic {blob[:8]!r})")
    if len(blob) < 14:
        raise TruncatedPayloadError(f"{path}: header cut short")
    version, code, rank = struct.unpack_from("<IBB", blob, 8)
    if version != FORMAT_VERSION:
        raise BadVersionError(f"{path}: version {version}, expected {FORMAT_VERSION}")
    if code not in _DTYPES:
        raise BadDtypeError(f"{path}: unknown dtype code {code}")
    if len(blob) < 14 + 8 * rank:
        raise TruncatedPayloadError(f"{path}: dimension list cut short")
    shape = struct.unpack_from(f"<{rank}Q", blob, 14)
    return _DTYPES[code], tuple(int(d) for d in shape), 14 + 8 * rank


def load_tensor(path) -> np.ndarray:
    """Read a tensor file back into a native-endian array."""
    blob = Path(path).read_bytes()
    dtype, shape, offset = _parse_header(blob, path)
    expected = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
    got = len(blob) - offset
    if got != expected:
        raise TruncatedPayloadError(
            f"{path}: payload holds {got} bytes, header promises {expected}"
        )
    data = np.frombuffer(blob, dtype=dtype, count=-1, offset=offset)
    return data.reshape(shape).astype(dtype.newbyteorder("="), copy=True)


def peek_tensor(path) -> tuple[np.dtype, tuple[int, ...]]:
    """Read only the header: dtype and shape, skipping the payload."""
    with open(path, "rb") as fh:
        blob = fh.read(14 + 8 * 255)
    dtype, shape, _ = _parse_header(blob, path)
    return dtype, shape


def save_quantized(layer_dir, layer: QuantizedLayer, meta: dict) -> None:
    """Write one layer's artifact: codes.ct, scales.ct, zeros.ct, meta.

    Codes narrow to int8 when the bit width fits a byte and every code
    value does too; zero points can place a narrow window far from the
    origin, in which case the codes stay int32 on disk.
    """
    missing = _META_KEYS - meta.keys()
    if missing:
        raise ArtifactConsistencyError(f"meta record lacks {sorted(missing)}")
    bits = int(meta["bits"])
    out = Path(layer_dir)
    out.mkdir(parents=True, exist_ok=True)
    codes = layer.codes
    if bits <= 8 and codes.min(initial=0) >= -128 and codes.max(initial=0) <= 127:
        codes = codes.astype(np.int8)
    save_tensor(out / "codes.ct", codes)
    save_tensor(out / "scales.ct", layer.scales)
    save_tensor(out / "zeros.ct", layer.zero_points)
    with open(out / META_NAME, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_quantized(layer_dir) -> tuple[QuantizedLayer, dict]:
    """Read a layer artifact back; codes widen to int32 in memory."""
    src = Path(layer_dir)
    codes = load_tensor(src / "codes.ct").astype(np.int32)
    scales = load_tensor(src / "scales.ct")
    zeros = load_tensor(src / "zeros.ct").astype(np.int32)
    meta_path = src / META_NAME
    if not meta_path.exists():
        raise ArtifactConsistencyError(f"{src}: missing {META_NAME} record")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    missing = _META_KEYS - meta.keys()
    if missing:
        raise ArtifactConsistencyError(f"{meta_path}: meta record lacks {sorted(missing)}")
    return QuantizedLayer(codes, scales, zeros), meta


@dataclass(frozen=True)
class LayerSpec:
    """One manifest entry, paths already resolved against the manifest."""

    name: str
    weight_path: Path
    calib_path: Path


@dataclass(frozen=True)
class Manifest:
    """Parsed manifest: layer entries plus job-level config defaults."""

    layers: tuple[LayerSpec, ...]
    defaults: dict = field(default_factory=dict)


_TOP_KEYS = frozenset(("layers", "defaults"))
_LAYER_KEYS = frozenset(("name", "weight", "calib"))
_DEFAULT_KEYS = frozenset(
    ("bits", "iters", "lambda", "granularity", "order", "scale_update")
)


def load_manifest(path, validate: bool = True) -> Manifest:
    """Parse a manifest and, by default, verify every referenced tensor.

    Validation confirms the files exist, parse as tensors, and that each
    calib's column count equals its weight's row count, so shape errors
    surface before any solver starts. Unknown keys anywhere produce
    warnings, not errors.
    """
    src = Path(path)
    try:
        raw = json.loads(src.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {src}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{src} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ManifestError(f"{src}: top level must be an object")
    for key in sorted(raw.keys() - _TOP_KEYS):
        warnings.warn(f"{src}: ignoring unknown key {key!r}", ManifestWarning,
                      stacklevel=2)
    defaults = raw.get("defaults", {})
    if not isinstance(defaults, dict):
        raise ManifestError(f"{src}: defaults must be an object")
    for key in sorted(defaults.keys() - _DEFAULT_KEYS):
        warnings.warn(f"{src}: ignoring unknown default {key!r}", ManifestWarning,
                      stacklevel=2)
    entries = raw.get("layers")
    if not isinstance(entries, list):
        raise ManifestError(f"{src}: manifest needs a 'layers' list")

    base = src.parent
    layers = []
    seen = set()
    for pos, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ManifestError(f"{src}: layer {pos} must be an object")
        for key in sorted(entry.keys() - _LAYER_KEYS):
            warnings.warn(f"{src}: layer {pos} has unknown key {key!r}",
                          ManifestWarning, stacklevel=2)
        try:
            name = entry["name"]
            weight = entry["weight"]
            calib = entry["calib"]
        except KeyError as exc:
            raise ManifestError(f"{src}: layer {pos} lacks {exc.args[0]!r}") from exc
        if not isinstance(name, str) or not _NAME_RE.match(name):
            raise ManifestError(f"{src}: layer {pos} name {name!r} is not a plain name")
        if name in seen:
            raise ManifestError(f"{src}: duplicate layer name {name!r}")
        seen.add(name)
        layers.append(LayerSpec(name, (base / weight).resolve(), (base / calib).resolve()))

    manifest = Manifest(tuple(layers), dict(defaults))
    if validate:
        validate_manifest(manifest)
    return manifest


def validate_manifest(manifest: Manifest) -> None:
    """Shape-check every layer pair without loading payloads."""
    for spec in manifest.layers:
        for label, p in (("weight", spec.weight_path), ("calib", spec.calib_path)):
            if not p.is_file():
                raise ManifestError(f"layer {spec.name!r}: {label} file {p} not found")
        try:
            _, w_shape = peek_tensor(spec.weight_path)
            _, x_shape = peek_tensor(spec.calib_path)
        except TensorFormatError as exc:
            raise ManifestError(f"layer {spec.name!r}: {exc}") from exc
        if len(w_shape) != 2 or len(x_shape) != 2:
            raise ManifestError(
                f"layer {spec.name!r}: need 2-D tensors, got {w_shape} and {x_shape}"
            )
        if x_shape[1] != w_shape[0]:
            raise ManifestError(
                f"layer {spec.name!r}: calib columns {x_shape[1]} "
                f"do not match weight rows {w_shape[0]}"
            )
