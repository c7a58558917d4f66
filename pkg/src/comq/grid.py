"""Quantization grids and the shared fixed-point arithmetic.

A code set is a contiguous integer interval. Symmetric grids span
[-2**(b-1), 2**(b-1) - 1] and carry no zero point; affine grids span
[z, z + 2**b - 1] for a per-channel zero point z. Projection rounds
half to even, then clamps to the interval, which is the exact minimizer
of any 1-D convex quadratic over the interval when applied to the
unconstrained minimizer.
"""

from __future__ import annotations

import numbers
from dataclasses import dataclass, field

import numpy as np

GRANULARITIES = ("per-layer", "per-channel")
ORDERS = ("cyclic", "greedy")
SCALE_UPDATES = ("ls", "code-norm")


class QuantError(Exception):
    """Base class for quantizer failures."""


class InvalidConfigError(QuantError):
    """A configuration field is out of its documented domain."""


class ShapeMismatchError(QuantError):
    """Operands have incompatible shapes."""


class NumericError(QuantError):
    """A non-finite value reached a place that requires finite input."""


class DegenerateLayerError(QuantError):
    """The layer cannot be quantized (for example an all-zero weight)."""


class DegenerateScaleWarning(RuntimeWarning):
    """A scale refit was skipped because its denominator vanished."""


def default_lambda(bits: int) -> float:
    """Default shrink on the min-max scale: keep full range at 4+ bits,
    tighten it at very low bit widths so small weights do not all
    collapse onto the zero code."""
    return 1.0 if bits >= 4 else 0.9


@dataclass(frozen=True)
class CodeSet:
    """Contiguous integer interval [lo, hi] of admissible codes."""

    lo: int
    hi: int

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise InvalidConfigError(f"empty code set [{self.lo}, {self.hi}]")

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    def contains(self, code: int) -> bool:
        return self.lo <= code <= self.hi

    def codes(self) -> np.ndarray:
        """All codes in ascending order, for exhaustive search."""
        return np.arange(self.lo, self.hi + 1, dtype=np.int64)


def symmetric_codes(bits: int) -> CodeSet:
    """Two's-complement style interval [-2**(b-1), 2**(b-1) - 1]."""
    if bits < 1:
        raise InvalidConfigError(f"bits must be >= 1, got {bits}")
    half = 1 << (bits - 1)
    return CodeSet(-half, half - 1)


def affine_codes(zero_point: int, bits: int) -> CodeSet:
    """Shifted interval [z, z + 2**b - 1] anchored at a zero point."""
    if bits < 1:
        raise InvalidConfigError(f"bits must be >= 1, got {bits}")
    z = int(zero_point)
    return CodeSet(z, z + (1 << bits) - 1)


def project_to_codes(value, code_set: CodeSet):
    """Round half to even, then clamp into the code set.

    Accepts a scalar or an ndarray. Scalars come back as python ints,
    arrays as int32. Non-finite input is rejected rather than silently
    saturated.
    """
    if isinstance(value, (numbers.Real, np.floating, np.integer)):
        v = float(value)
        if not np.isfinite(v):
            raise NumericError(f"cannot project non-finite value {v!r}")
        code = int(np.rint(v))
        return min(max(code, code_set.lo), code_set.hi)
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError("cannot project non-finite values")
    return np.clip(np.rint(arr), code_set.lo, code_set.hi).astype(np.int32)


def dequantize(codes, scales) -> np.ndarray:
    """Scale codes back to weights, entry (j, i) -> codes[j, i] * scale_i.

    ``scales`` is a scalar, a length-1 array (one shared scale), or a
    length-n array (one scale per column). The product is formed in
    binary32 so a saved and reloaded layer reproduces it bit for bit.
    """
    c = np.asarray(codes, dtype=np.float32)
    s = np.asarray(scales, dtype=np.float32)
    if s.ndim == 0:
        return c * s
    if s.ndim != 1:
        raise ShapeMismatchError(f"scales must be scalar or 1-D, got shape {s.shape}")
    if s.shape[0] == 1:
        return c * s[0]
    if c.ndim == 2 and s.shape[0] == c.shape[1]:
        return c * s[np.newaxis, :]
    raise ShapeMismatchError(
        f"scale count {s.shape[0]} matches neither 1 nor columns of {c.shape}"
    )


@dataclass
class QuantizedLayer:
    """Solver output: integer codes plus the scales that dequantize them.

    codes        int32, shape (m, n)
    scales       float32, length 1 (per-layer) or n (per-channel)
    zero_points  int32, length 0 (symmetric grid) or n (affine grids)

    The zero points only record the code window each column was
    constrained to; dequantization is codes * scales alone.
    """

    codes: np.ndarray
    scales: np.ndarray
    zero_points: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int32))

    def __post_init__(self) -> None:
        self.codes = np.asarray(self.codes, dtype=np.int32)
        self.scales = np.atleast_1d(np.asarray(self.scales, dtype=np.float32))
        self.zero_points = np.asarray(self.zero_points, dtype=np.int32)
        if self.codes.ndim != 2:
            raise ShapeMismatchError(f"codes must be 2-D, got shape {self.codes.shape}")
        n = self.codes.shape[1]
        if self.scales.shape[0] not in (1, n):
            raise ShapeMismatchError(
                f"expected 1 or {n} scales, got {self.scales.shape[0]}"
            )
        if self.zero_points.shape[0] not in (0, n):
            raise ShapeMismatchError(
                f"expected 0 or {n} zero points, got {self.zero_points.shape[0]}"
            )

    def dequantize(self) -> np.ndarray:
        return dequantize(self.codes, self.scales)


@dataclass(frozen=True)
class QuantConfig:
    """Knobs shared by both solvers.

    ``lam`` shrinks the min-max scale used by the per-channel
    initializer; when left unset it resolves by bit width (see
    ``default_lambda``). ``order`` defaults to cyclic for per-layer
    sweeps and greedy for per-channel sweeps. ``scale_update`` picks the
    denominator of the per-channel scale refit: "ls" divides by the
    calibrated output norm (the least-squares optimum), "code-norm"
    divides by the raw code norm.
    """

    bits: int
    iters: int = 3
    lam: float | None = None
    granularity: str = "per-channel"
    order: str | None = None
    tie_rule: str = "half-to-even"
    scale_update: str = "ls"

    def __post_init__(self) -> None:
        if not isinstance(self.bits, (int, np.integer)) or isinstance(self.bits, bool):
            raise InvalidConfigError(f"bits must be an integer, got {self.bits!r}")
        if not 1 <= self.bits <= 16:
            raise InvalidConfigError(f"bits must be in [1, 16], got {self.bits}")
        if not isinstance(self.iters, (int, np.integer)) or self.iters < 1:
            raise InvalidConfigError(f"iters must be a positive integer, got {self.iters!r}")
        if self.granularity not in GRANULARITIES:
            raise InvalidConfigError(
                f"granularity must be one of {GRANULARITIES}, got {self.granularity!r}"
            )
        if self.lam is None:
            object.__setattr__(self, "lam", default_lambda(self.bits))
        lam = float(self.lam)
        if not np.isfinite(lam) or not 0.0 < lam <= 1.0:
            raise InvalidConfigError(f"lam must lie in (0, 1], got {self.lam!r}")
        object.__setattr__(self, "lam", lam)
        if self.order is None:
            default = "cyclic" if self.granularity == "per-layer" else "greedy"
            object.__setattr__(self, "order", default)
        if self.order not in ORDERS:
            raise InvalidConfigError(f"order must be one of {ORDERS}, got {self.order!r}")
        if self.tie_rule != "half-to-even":
            raise InvalidConfigError(
                f"only the half-to-even tie rule is supported, got {self.tie_rule!r}"
            )
        if self.scale_update not in SCALE_UPDATES:
            raise InvalidConfigError(
                f"scale_update must be one of {SCALE_UPDATES}, got {self.scale_update!r}"
            )

    def code_bounds(self) -> CodeSet:
        """The symmetric code set for this bit width (per-layer grids)."""
        return symmetric_codes(self.bits)
