"""Per-channel coordinate descent: one scale and code window per column.

Columns are independent. Each gets an affine code window anchored at a
zero point derived from its own min-max range, a greedy or cyclic visit
order over the weight rows, and its own scale refit after every sweep.
The zero point follows the scale between sweeps so the window keeps
covering the column's range.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
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
    affine_codes,
    project_to_codes,
)
from comq.trace import Observer, StepEvent


@dataclass
class ChannelState:
    """Mutable solver state for a single weight column."""

    weights: np.ndarray
    codes: np.ndarray
    scale: float
    zero_point: int
    bounds: CodeSet
    residual: np.ndarray
    col: int = 0
    sweep: int = 0


@dataclass
class PerChannelResult:
    """Aggregated output across all columns of the layer.

    ``scales`` keeps the float64 scales before the binary32 cast stored
    in ``layer``. ``rtn_error``, ``final_error`` and ``column_errors``
    are squared reconstruction errors; ``exact_columns`` lists constant
    columns that were represented exactly without running the solver.
    """

    layer: QuantizedLayer
    scales: np.ndarray
    rtn_error: float
    final_error: float
    column_errors: tuple[float, ...]
    exact_columns: tuple[int, ...]
    residual_drift: tuple[float, ...]
    sweeps: int


def init_per_channel(weights: np.ndarray, bits: int, lam: float) -> tuple[float, np.ndarray, int]:
    """Min-max scale, real-valued codes and zero point for one column.

    scale = lam * (max - min) / (2**bits - 1), shrunk below one at low
    bit widths so small-magnitude weights keep nonzero codes. The zero
    point rounds min / scale half to even. Constant columns have no
    range to map and are rejected; callers represent them exactly.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    if not 0.0 < lam <= 1.0:
        raise NumericError(f"lam must lie in (0, 1], got {lam}")
    w_min, w_max = float(w.min()), float(w.max())
    if w_max == w_min:
        raise DegenerateLayerError("constant column has no min-max range")
    scale = lam * (w_max - w_min) / ((1 << bits) - 1)
    zero = int(np.rint(w_min / scale))
    return scale, w / scale, zero


def exact_constant_column(value: float) -> tuple[float, int, int]:
    """Scale, code and zero point that represent a constant column exactly.

    scale = |c| (1 when c is zero) makes the shared code round(c / scale),
    either -1, 0 or 1, so code * scale reproduces c with no error at any
    supported bit width.
    """
    scale = abs(float(value)) if value != 0.0 else 1.0
    code = int(np.rint(value / scale))
    return scale, code, code


def greedy_order(weights: np.ndarray, calib: np.ndarray) -> np.ndarray:
    """Visit rows by descending |w_j| * ||x_j||, ties by ascending index.

    Large products dominate the reconstruction error, so settling them
    first lets later, smaller coordinates absorb the rounding debt.
    Decided once from the original weights, not revisited between sweeps.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    mag = np.abs(w) * np.linalg.norm(np.asarray(calib, dtype=np.float64), axis=0)
    return np.argsort(-mag, kind="stable")


def coordinate_update_channel(state: ChannelState, calib: np.ndarray, row: int,
                              observer: Observer | None = None,
                              capture_target: bool = False) -> int:
    """Refit one code of the column inside its current affine window."""
    x = calib[:, row]
    xx = float(x @ x)
    old = float(state.codes[row])
    r = state.residual
    if xx == 0.0:
        p = state.weights[row] / state.scale
    else:
        p = float(x @ r) / (state.scale * xx) + old
    if not np.isfinite(p):
        raise NumericError(f"non-finite projection target at row {row}")
    code = project_to_codes(p, state.bounds)
    if observer is not None:
        err_before = float(r @ r)
        target = r + state.scale * old * x if capture_target else None
    state.codes[row] = code
    if xx != 0.0 and code != old:
        r -= state.scale * (code - old) * x
    if observer is not None:
        observer(StepEvent(
            kind="coord",
            sweep=state.sweep,
            error_before=err_before,
            error_after=float(r @ r),
            row=row,
            col=state.col,
            old_code=old,
            new_code=code,
            old_feasible=float(old).is_integer() and state.bounds.contains(int(old)),
            scale=state.scale,
            zero_point=state.zero_point,
            code_lo=state.bounds.lo,
            code_hi=state.bounds.hi,
            target=target,
        ))
    return code


def update_scale_channel(codes: np.ndarray, calib: np.ndarray, weights: np.ndarray,
                         mode: str = "ls", fallback: float | None = None) -> float:
    """Refit one column's scale.

    "ls" divides <Xq, Xw> by ||Xq||^2, the least-squares optimum.
    "code-norm" divides by ||q||^2 instead, which ignores the calibration
    geometry and is kept only for side-by-side comparison. Affine windows
    assume a positive scale, so a vanishing or non-positive refit keeps
    the fallback under a degenerate-scale warning.
    """
    q = np.asarray(codes, dtype=np.float64).ravel()
    image = calib @ q
    if mode == "ls":
        denom = float(image @ image)
    elif mode == "code-norm":
        denom = float(q @ q)
    else:
        raise NumericError(f"unknown scale update mode {mode!r}")
    if denom > 0.0:
        scale = float(image @ (calib @ np.asarray(weights, dtype=np.float64).ravel())) / denom
        if scale > 0.0:
            return scale
    if fallback is None:
        raise NumericError("scale refit is degenerate and no fallback was given")
    warnings.warn(
        "per-channel scale refit degenerate or non-positive; keeping previous scale",
        DegenerateScaleWarning,
        stacklevel=2,
    )
    return fallback


def rtn_per_channel(weights: np.ndarray, bits: int, lam: float) -> tuple[np.ndarray, float, int]:
    """Round-to-nearest codes of one column at the min-max scale."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    if float(w.max()) == float(w.min()):
        scale, code, zero = exact_constant_column(float(w[0]))
        return np.full(w.shape, code, dtype=np.int32), scale, zero
    scale, real_codes, zero = init_per_channel(w, bits, lam)
    return project_to_codes(real_codes, affine_codes(zero, bits)), scale, zero


def _solve_column(col: int, w: np.ndarray, calib: np.ndarray, cfg: QuantConfig,
                  observer: Observer | None, capture_targets: bool):
    """Full coordinate descent for one column. Returns codes, scale,
    zero point, squared errors (final and round-to-nearest), per-sweep
    residual drift and the exact flag."""
    xw = calib @ w
    w_min, w_max = float(w.min()), float(w.max())
    if w_max == w_min:
        scale, code, zero = exact_constant_column(float(w[0]))
        codes = np.full(w.shape, code, dtype=np.int64)
        err = float(np.sum((scale * (calib @ codes) - xw) ** 2))
        return codes, scale, zero, err, err, (), True

    rtn_codes, rtn_scale, _ = rtn_per_channel(w, cfg.bits, cfg.lam)
    rtn_err = float(np.sum((rtn_scale * (calib @ rtn_codes) - xw) ** 2))

    scale, real_codes, zero = init_per_channel(w, cfg.bits, cfg.lam)
    state = ChannelState(
        weights=w,
        codes=real_codes,
        scale=scale,
        zero_point=zero,
        bounds=affine_codes(zero, cfg.bits),
        residual=np.zeros(calib.shape[0]),
        col=col,
    )
    if cfg.order == "greedy":
        rows = greedy_order(w, calib)
    else:
        rows = np.arange(w.shape[0])
    drift: list[float] = []
    ref = 1.0 + float(np.linalg.norm(xw))

    for sweep in range(1, cfg.iters + 1):
        state.sweep = sweep
        for j in rows:
            coordinate_update_channel(state, calib, int(j), observer, capture_targets)
        exact = xw - state.scale * (calib @ state.codes)
        drift.append(float(np.linalg.norm(state.residual - exact)) / ref)
        state.residual = exact
        err_before = float(exact @ exact)
        old_scale = state.scale
        state.scale = update_scale_channel(state.codes, calib, w, mode=cfg.scale_update,
                                           fallback=old_scale)
        image = calib @ state.codes
        state.residual = xw - state.scale * image
        if observer is not None:
            after = state.residual
            observer(StepEvent(
                kind="scale",
                sweep=sweep,
                error_before=err_before,
                error_after=float(after @ after),
                col=col,
                scale=state.scale,
                scale_before=old_scale,
                zero_point=state.zero_point,
                ortho=float(image @ after),
                image_norm=float(np.linalg.norm(image)),
                residual_norm=float(np.linalg.norm(after)),
            ))
        if sweep < cfg.iters:
            # Re-anchor the window to the new scale. The stored zero point
            # stays the one the final codes were projected under.
            state.zero_point = int(np.rint(w_min / state.scale))
            state.bounds = affine_codes(state.zero_point, cfg.bits)

    final_err = float(state.residual @ state.residual)
    codes = np.rint(state.codes).astype(np.int64)
    return codes, state.scale, state.zero_point, final_err, rtn_err, tuple(drift), False


def comq_per_channel(weights: np.ndarray, calib: np.ndarray, cfg: QuantConfig,
                     observer: Observer | None = None,
                     capture_targets: bool = False,
                     threads: int = 1) -> PerChannelResult:
    """Quantize one layer with an independent affine grid per column.

    Columns can be solved on a thread pool; results are assembled by
    column index, so the output is identical for any thread count. When
    an observer is attached the columns run sequentially to keep the
    event stream ordered.
    """
    W = np.asarray(weights, dtype=np.float64)
    X = np.asarray(calib, dtype=np.float64)
    if cfg.granularity != "per-channel":
        raise ShapeMismatchError(f"config granularity {cfg.granularity!r} is not per-channel")
    if W.ndim != 2 or X.ndim != 2:
        raise ShapeMismatchError(f"need 2-D weights and calib, got {W.shape} and {X.shape}")
    if X.shape[1] != W.shape[0]:
        raise ShapeMismatchError(
            f"calib columns {X.shape[1]} do not match weight rows {W.shape[0]}"
        )
    if not np.all(np.isfinite(W)):
        raise NumericError("weights contain non-finite values")
    if not np.all(np.isfinite(X)):
        raise NumericError("calib contains non-finite values")

    n = W.shape[1]
    work = lambda i: _solve_column(i, W[:, i].copy(), X, cfg, observer, capture_targets)
    if threads > 1 and observer is None and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(work, range(n)))
    else:
        outputs = [work(i) for i in range(n)]

    codes = np.stack([out[0] for out in outputs], axis=1).astype(np.int32)
    scales = np.array([out[1] for out in outputs], dtype=np.float64)
    zeros = np.array([out[2] for out in outputs], dtype=np.int32)
    col_errors = tuple(float(out[3]) for out in outputs)
    rtn_error = float(sum(out[4] for out in outputs))
    exact_cols = tuple(i for i, out in enumerate(outputs) if out[6])
    sweeps = max((len(out[5]) for out in outputs), default=0)
    drift = tuple(
        max((out[5][k] for out in outputs if len(out[5]) > k), default=0.0)
        for k in range(sweeps)
    )
    layer = QuantizedLayer(codes, scales.astype(np.float32), zeros)
    return PerChannelResult(layer, scales, rtn_error, float(sum(col_errors)),
                            col_errors, exact_cols, drift, cfg.iters)
