"""Per-layer coordinate descent with one shared scale.

The layer objective is ||X W_q - X W||_F^2 with W_q = scale * Q and
integer codes Q on a symmetric grid. Sweeps walk the weight rows; for a
fixed row every column's code is the projected 1-D least-squares fit of
that column's residual, then the shared scale is refit against the
calibrated outputs. Residuals are maintained by rank-1 updates and
replaced with an exact recomputation at every sweep boundary.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from comq.grid import (
    CodeSet,
    DegenerateLayerError,
    DegenerateScaleWarning,
    NumericError,
    QuantConfig,
    QuantizedLayer,
    ShapeMismatchError,
    project_to_codes,
    symmetric_codes,
)
from comq.trace import Observer, StepEvent


@dataclass
class PerLayerState:
    """Mutable solver state for one layer.

    ``codes`` is float64 because initialization seeds it with the
    real-valued W / scale; after one full sweep every entry is an
    integer from ``bounds``. ``residual`` holds X W - scale * X Q
    column by column.
    """

    weights: np.ndarray
    codes: np.ndarray
    scale: float
    residual: np.ndarray
    bounds: CodeSet
    sweep: int = 0

    @classmethod
    def create(cls, weights: np.ndarray, calib: np.ndarray, cfg: QuantConfig) -> "PerLayerState":
        scale, codes = init_per_layer(weights, cfg.bits)
        n_rows = calib.shape[0]
        return cls(
            weights=weights,
            codes=codes,
            scale=scale,
            residual=np.zeros((n_rows, weights.shape[1])),
            bounds=symmetric_codes(cfg.bits),
        )


@dataclass
class PerLayerResult:
    """Solver output plus the numbers tests and reports key on.

    ``rtn_error`` and ``final_error`` are squared reconstruction errors
    at float64; ``scale`` is the final scale before the binary32 cast
    stored in ``layer``. ``residual_drift`` records, per sweep, the worst
    relative gap between the incrementally maintained residual and its
    exact recomputation.
    """

    layer: QuantizedLayer
    scale: float
    rtn_error: float
    final_error: float
    degenerate: bool
    sweeps: int
    residual_drift: tuple[float, ...]


def init_per_layer(weights: np.ndarray, bits: int) -> tuple[float, np.ndarray]:
    """Initial shared scale and real-valued codes.

    The scale maps the average column peak to the top of the code range:
    scale = mean_i max_j |W[j, i]| / 2**(bits - 1). Codes start at
    W / scale so the starting reconstruction is exact and the first
    sweep effectively performs error-compensated rounding.
    """
    W = np.asarray(weights, dtype=np.float64)
    if W.ndim != 2:
        raise ShapeMismatchError(f"weights must be 2-D, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise NumericError("weights contain non-finite values")
    peaks = np.max(np.abs(W), axis=0)
    scale = float(peaks.mean()) / (1 << (bits - 1))
    if scale == 0.0:
        raise DegenerateLayerError("all-zero weight matrix has no usable scale")
    return scale, W / scale


def rtn_per_layer(weights: np.ndarray, bits: int) -> tuple[np.ndarray, float]:
    """Round-to-nearest codes at the initial scale, the no-calibration baseline."""
    scale, real_codes = init_per_layer(weights, bits)
    return project_to_codes(real_codes, symmetric_codes(bits)), scale


def coordinate_update(state: PerLayerState, calib: np.ndarray, row: int, col: int,
                      observer: Observer | None = None,
                      capture_target: bool = False) -> int:
    """Refit one code against the column residual and apply it in place.

    With s the column residual plus the current code's contribution, the
    new code is the projection of <x_row, s> / (scale * ||x_row||^2). A
    feature column that is identically zero cannot move the objective,
    so its code falls back to the plain rounding of the weight and the
    residual stays untouched.
    """
    x = calib[:, row]
    xx = float(x @ x)
    old = float(state.codes[row, col])
    r = state.residual[:, col]
    if xx == 0.0:
        p = state.weights[row, col] / state.scale
    else:
        p = float(x @ r) / (state.scale * xx) + old
    if not np.isfinite(p):
        raise NumericError(f"non-finite projection target at row {row}, col {col}")
    code = project_to_codes(p, state.bounds)
    if observer is not None:
        err_before = float(r @ r)
        target = r + state.scale * old * x if capture_target else None
    state.codes[row, col] = code
    if xx != 0.0 and code != old:
        r -= state.scale * (code - old) * x
    if observer is not None:
        observer(StepEvent(
            kind="coord",
            sweep=state.sweep,
            error_before=err_before,
            error_after=float(r @ r),
            row=row,
            col=col,
            old_code=old,
            new_code=code,
            old_feasible=float(old).is_integer() and state.bounds.contains(int(old)),
            scale=state.scale,
            code_lo=state.bounds.lo,
            code_hi=state.bounds.hi,
            target=target,
        ))
    return code


def update_scale_per_layer(codes: np.ndarray, calib: np.ndarray, weights: np.ndarray,
                           fallback: float | None = None) -> float:
    """Least-squares refit of the shared scale, <XQ, XW> / ||XQ||^2.

    When the quantized image X Q vanishes, or the fit lands exactly on
    zero, the refit is skipped: the fallback is returned under a
    degenerate-scale warning so downstream divisions stay defined.
    """
    image = calib @ codes
    denom = float(np.sum(image * image))
    if denom > 0.0:
        scale = float(np.sum(image * (calib @ weights))) / denom
        if scale != 0.0:
            return scale
    if fallback is None:
        raise NumericError("scale refit is degenerate and no fallback was given")
    warnings.warn(
        "scale refit degenerate (X Q vanished or fit hit zero); keeping previous scale",
        DegenerateScaleWarning,
        stacklevel=2,
    )
    return fallback


def _row_order(weights: np.ndarray, calib: np.ndarray, order: str) -> np.ndarray:
    if order == "cyclic":
        return np.arange(weights.shape[0])
    # Greedy: biggest joint magnitude of weight row and feature column first,
    # ties by ascending row index. Decided once from the original weights.
    mag = np.linalg.norm(calib, axis=0) * np.linalg.norm(weights, axis=1)
    return np.argsort(-mag, kind="stable")


def comq_per_layer(weights: np.ndarray, calib: np.ndarray, cfg: QuantConfig,
                   observer: Observer | None = None,
                   capture_targets: bool = False) -> PerLayerResult:
    """Quantize one layer to a symmetric grid with a single shared scale.

    Runs ``cfg.iters`` sweeps of row-by-row coordinate updates followed
    by a scale refit. An all-zero weight matrix cannot be scaled; it is
    passed through as zero codes under a warning and flagged degenerate
    so callers can surface the layer instead of failing the whole job.
    """
    W = np.asarray(weights, dtype=np.float64)
    X = np.asarray(calib, dtype=np.float64)
    if cfg.granularity != "per-layer":
        raise ShapeMismatchError(f"config granularity {cfg.granularity!r} is not per-layer")
    if W.ndim != 2 or X.ndim != 2:
        raise ShapeMismatchError(f"need 2-D weights and calib, got {W.shape} and {X.shape}")
    if X.shape[1] != W.shape[0]:
        raise ShapeMismatchError(
            f"calib columns {X.shape[1]} do not match weight rows {W.shape[0]}"
        )
    if not np.all(np.isfinite(X)):
        raise NumericError("calib contains non-finite values")

    if not np.any(W):
        warnings.warn("all-zero weight matrix passed through unquantized",
                      DegenerateScaleWarning, stacklevel=2)
        layer = QuantizedLayer(np.zeros(W.shape, np.int32), np.ones(1, np.float32))
        return PerLayerResult(layer, 1.0, 0.0, 0.0, True, 0, ())

    state = PerLayerState.create(W, X, cfg)
    xw = X @ W
    rtn_codes, scale0 = rtn_per_layer(W, cfg.bits)
    rtn_error = float(np.sum((scale0 * (X @ rtn_codes) - xw) ** 2))
    rows = _row_order(W, X, cfg.order)
    n = W.shape[1]
    drift: list[float] = []

    for sweep in range(1, cfg.iters + 1):
        state.sweep = sweep
        for j in rows:
            for i in range(n):
                coordinate_update(state, X, int(j), i, observer, capture_targets)
        exact = xw - state.scale * (X @ state.codes)
        gap = np.linalg.norm(state.residual - exact, axis=0)
        ref = 1.0 + np.linalg.norm(xw, axis=0)
        drift.append(float(np.max(gap / ref)))
        state.residual = exact
        err_before = float(np.sum(exact * exact))
        old_scale = state.scale
        state.scale = update_scale_per_layer(state.codes, X, W, fallback=old_scale)
        image = X @ state.codes
        state.residual = xw - state.scale * image
        if observer is not None:
            after = state.residual
            observer(StepEvent(
                kind="scale",
                sweep=sweep,
                error_before=err_before,
                error_after=float(np.sum(after * after)),
                scale=state.scale,
                scale_before=old_scale,
                ortho=float(np.sum(image * after)),
                image_norm=float(np.linalg.norm(image)),
                residual_norm=float(np.linalg.norm(after)),
            ))

    final_error = float(np.sum(state.residual**2))
    layer = QuantizedLayer(
        np.rint(state.codes).astype(np.int32),
        np.array([state.scale], dtype=np.float32),
    )
    return PerLayerResult(layer, state.scale, rtn_error, final_error, False,
                          cfg.iters, tuple(drift))
