"""Slow, independent references for the solver's update rules.

Everything here searches instead of solving: coordinate updates are
checked against a literal scan over the code set, scale refits against a
dense 1-D scan, and whole tiny columns against exhaustive enumeration of
every admissible code vector. The implementations deliberately avoid the
closed forms used by the solvers so that a shared algebra bug cannot
hide. Exposed through the hidden ``comq oracle`` subcommand for harness
use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from comq.grid import (
    CodeSet,
    InvalidConfigError,
    NumericError,
    affine_codes,
    symmetric_codes,
)

SEARCH_SIZE_CAP = 1 << 20
SCAN_POINTS = 10_000
DEFAULT_LAMBDA_SWEEP = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


@dataclass(frozen=True)
class OracleResult:
    """Best configuration found by exhaustive search."""

    codes: np.ndarray
    scale: float
    zero_point: int | None
    error: float


def coordinate_argmin(x: np.ndarray, target: np.ndarray, scale: float, code_set: CodeSet) -> int:
    """Exhaustive minimizer of ||q * scale * x - target||^2 over the code set.

    Ties between codes with exactly equal error resolve to the code
    nearest the unconstrained minimizer, half to even, so the result is
    comparable code-for-code with the solver's projection rule.
    """
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    xx = float(x @ x)
    if xx == 0.0:
        raise NumericError("coordinate_argmin requires a nonzero feature column")
    if scale == 0.0 or not np.isfinite(scale):
        raise NumericError(f"coordinate_argmin requires a finite nonzero scale, got {scale}")
    codes = code_set.codes()
    errors = np.sum((codes[:, None] * (scale * x)[None, :] - target[None, :]) ** 2, axis=1)
    best = errors.min()
    ties = codes[errors == best]
    if ties.shape[0] == 1:
        return int(ties[0])
    # Exact ties: prefer proximity to the analytic minimizer, then evenness.
    p = float(x @ target) / (scale * xx)
    dist = np.abs(ties - p)
    nearest = ties[dist == dist.min()]
    for q in nearest:
        if q % 2 == 0:
            return int(q)
    return int(nearest[0])


def scale_argmin_1d(codes, calib, weights) -> float:
    """Search the scale that minimizes ||scale * X q - X w||^2.

    Dense scan over a symmetric bracket that provably contains the
    minimizer, then the vertex of the parabola through the best scan
    point and its neighbors. The objective is an exact quadratic in the
    scale, so the vertex is the minimizer up to rounding.
    """
    X = np.asarray(calib, dtype=np.float64)
    u = (X @ np.asarray(codes, dtype=np.float64)).ravel()
    v = (X @ np.asarray(weights, dtype=np.float64)).ravel()
    uu = float(u @ u)
    if uu == 0.0:
        raise NumericError("scale_argmin_1d requires X q != 0")
    vv = float(v @ v)
    if vv == 0.0:
        return 0.0
    # |argmin| = |<u,v>|/||u||^2 <= ||v||/||u||, so the bracket is safe.
    radius = 2.0 * np.sqrt(vv / uu)
    grid = np.linspace(-radius, radius, SCAN_POINTS)
    errs = np.sum((grid[:, None] * u[None, :] - v[None, :]) ** 2, axis=1)
    k = int(np.argmin(errs))
    k = min(max(k, 1), SCAN_POINTS - 2)
    h = grid[1] - grid[0]
    f_lo, f_mid, f_hi = errs[k - 1], errs[k], errs[k + 1]
    denom = f_hi - 2.0 * f_mid + f_lo
    if denom <= 0.0:
        return float(grid[k])
    return float(grid[k] - 0.5 * h * (f_hi - f_lo) / denom)


def _decode_codes(indices: np.ndarray, base: int, length: int, lo: int) -> np.ndarray:
    """Map linear enumeration indices to code vectors, first entry slowest."""
    out = np.empty((indices.shape[0], length), dtype=np.int64)
    rest = indices.copy()
    for pos in range(length - 1, -1, -1):
        out[:, pos] = rest % base + lo
        rest //= base
    return out


def _best_over_codes(X: np.ndarray, v: np.ndarray, code_set: CodeSet, m: int,
                     positive_scale: bool) -> tuple[float, np.ndarray, float]:
    """Scan every code vector in code_set**m with its optimal scale."""
    base = code_set.size
    total = base**m
    vv = float(v @ v)
    best_err = np.inf
    best_codes = None
    best_scale = 1.0
    chunk = 1 << 13
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        Q = _decode_codes(idx, base, m, code_set.lo)
        U = X @ Q.T.astype(np.float64)
        a = np.einsum("ij,ij->j", U, U)
        b = v @ U
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(a > 0.0, b / a, 0.0)
            if positive_scale:
                usable = (a > 0.0) & (scale > 0.0)
            else:
                usable = a > 0.0
            err = np.where(usable, vv - np.where(a > 0.0, b * b / a, 0.0), np.inf)
        # The all-zero vector has a == 0; any scale leaves the error at ||v||^2.
        zero_rows = a == 0.0
        if not positive_scale and zero_rows.any():
            err = np.where(zero_rows, vv, err)
        k = int(np.argmin(err))
        if err[k] < best_err:
            # The true error is nonnegative; cancellation in vv - b*b/a can
            # leave a tiny negative residue on exact fits.
            best_err = float(max(err[k], 0.0))
            best_codes = Q[k].copy()
            best_scale = float(scale[k]) if a[k] > 0.0 else 1.0
    if best_codes is None:
        return np.inf, np.zeros(m, dtype=np.int64), 1.0
    return best_err, best_codes, best_scale


def brute_force_joint(weights, calib, bits: int, grid: str = "symmetric",
                      extra_zero_points=(), lambda_sweep=DEFAULT_LAMBDA_SWEEP) -> OracleResult:
    """Global minimum of the single-column problem by exhaustion.

    Enumerates every code vector for one weight column (size capped at
    2**20 configurations per zero point) and pairs each with its optimal
    scale. Symmetric grids admit negative scales. Affine grids search
    positive scales over zero-point candidates derived from min-max
    scales at several shrink factors, widened by two codes either way;
    callers can pass ``extra_zero_points`` to force specific windows into
    the search (for example a solver's final window).
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    X = np.asarray(calib, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != w.shape[0]:
        raise InvalidConfigError(
            f"calib shape {X.shape} does not match column length {w.shape[0]}"
        )
    m = w.shape[0]
    if bits < 1 or (1 << bits) ** m > SEARCH_SIZE_CAP:
        raise InvalidConfigError(
            f"search space (2**{bits})**{m} exceeds the cap of {SEARCH_SIZE_CAP}"
        )
    v = X @ w

    if grid == "symmetric":
        cs = symmetric_codes(bits)
        err, codes, scale = _best_over_codes(X, v, cs, m, positive_scale=False)
        if not np.isfinite(err):
            raise NumericError("no admissible symmetric configuration was found")
        return OracleResult(codes.astype(np.int32), scale, None, err)

    if grid != "affine":
        raise InvalidConfigError(f"grid must be 'symmetric' or 'affine', got {grid!r}")
    w_min, w_max = float(w.min()), float(w.max())
    if w_max == w_min:
        raise NumericError("constant column has no min-max scale; quantize it directly")
    levels = (1 << bits) - 1
    candidates: set[int] = set(int(z) for z in extra_zero_points)
    for lam in lambda_sweep:
        z0 = int(np.rint(w_min / (lam * (w_max - w_min) / levels)))
        candidates.update(range(z0 - 2, z0 + 3))
    best: OracleResult | None = None
    for z in sorted(candidates):
        err, codes, scale = _best_over_codes(X, v, affine_codes(z, bits), m,
                                             positive_scale=True)
        if not np.isfinite(err):
            continue
        if best is None or err < best.error:
            best = OracleResult(codes.astype(np.int32), scale, z, err)
    if best is None:
        raise NumericError("no affine configuration with positive scale was found")
    return best
