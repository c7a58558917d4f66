"""Manifest-driven quantization jobs and their reports.

Thin orchestration over the solvers: resolve the effective config from
flag overrides and manifest defaults, run every layer, save artifacts,
and rebuild all reported error numbers from what actually landed on
disk. Report files never embed timestamps, so a rerun with the same
inputs writes the same bytes everywhere except wall-clock fields.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from comq import __version__
from comq.grid import InvalidConfigError, QuantConfig
from comq.perchannel import comq_per_channel, rtn_per_channel
from comq.perlayer import comq_per_layer, rtn_per_layer
from comq.tensor_io import Manifest, load_manifest, load_quantized, load_tensor, save_quantized

RELATIVE_ERROR_FLOOR = 1e-12
THREADS_ENV_VAR = "COMQ_THREADS"

_CONFIG_KEYS = ("bits", "iters", "lambda", "granularity", "order", "scale_update")


@dataclass
class LayerReport:
    """Reported numbers for one layer; errors are Frobenius norms."""

    name: str
    rows: int
    cols: int
    calib_rows: int
    error_before: float
    error_after: float
    relative_error: float
    wall_time_s: float
    degenerate: bool = False
    exact_columns: tuple[int, ...] = ()


@dataclass
class JobReport:
    """All layer reports plus the effective configuration."""

    config: dict
    threads: int
    seed: int | None
    layers: list[LayerReport]

    @property
    def degenerate_layers(self) -> list[str]:
        return [rep.name for rep in self.layers if rep.degenerate]

    @property
    def total_error_after(self) -> float:
        return float(np.sqrt(sum(rep.error_after**2 for rep in self.layers)))

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "threads": self.threads,
            "seed": self.seed,
            "total_error_after": self.total_error_after,
            "degenerate_layers": self.degenerate_layers,
            "layers": [dataclasses.asdict(rep) for rep in self.layers],
        }


def default_threads() -> int:
    """Thread count from the environment, 1 when unset or unusable."""
    raw = os.environ.get(THREADS_ENV_VAR, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def resolve_config(defaults: dict, overrides: dict) -> QuantConfig:
    """Flags beat manifest defaults beat built-ins."""
    merged = {}
    for key in _CONFIG_KEYS:
        value = overrides.get(key)
        if value is None:
            value = defaults.get(key)
        if value is not None:
            merged[key] = value
    if "lambda" in merged:
        merged["lam"] = merged.pop("lambda")
    if "bits" not in merged:
        raise InvalidConfigError("no bit width given by flags or manifest defaults")
    for key in ("bits", "iters"):
        if key in merged:
            value = merged[key]
            if isinstance(value, float) and not value.is_integer():
                raise InvalidConfigError(f"{key} must be an integer, got {value!r}")
            merged[key] = int(value)
    return QuantConfig(**merged)


def _solve(weights: np.ndarray, calib: np.ndarray, cfg: QuantConfig, threads: int):
    if cfg.granularity == "per-layer":
        res = comq_per_layer(weights, calib, cfg)
        return res.layer, res.degenerate, ()
    res = comq_per_channel(weights, calib, cfg, threads=threads)
    return res.layer, False, res.exact_columns


def _rtn_error_norm(weights: np.ndarray, calib: np.ndarray, cfg: QuantConfig) -> float:
    """Frobenius error of plain rounding at the initial scales."""
    W = np.asarray(weights, dtype=np.float64)
    X = np.asarray(calib, dtype=np.float64)
    if not np.any(W):
        return 0.0
    if cfg.granularity == "per-layer":
        codes, scale = rtn_per_layer(W, cfg.bits)
        return float(np.linalg.norm(scale * (X @ codes) - X @ W))
    total = 0.0
    for i in range(W.shape[1]):
        codes, scale, _ = rtn_per_channel(W[:, i], cfg.bits, cfg.lam)
        total += float(np.sum((scale * (X @ codes) - X @ W[:, i]) ** 2))
    return float(np.sqrt(total))


def _artifact_error_norm(layer_dir, weights: np.ndarray, calib: np.ndarray) -> float:
    """Frobenius error of the artifact on disk, the number reports trust."""
    layer, _ = load_quantized(layer_dir)
    W = np.asarray(weights, dtype=np.float64)
    X = np.asarray(calib, dtype=np.float64)
    wq = layer.dequantize().astype(np.float64)
    return float(np.linalg.norm(X @ wq - X @ W))


def run_quantize(manifest_path, out_dir, overrides: dict | None = None,
                 threads: int | None = None, seed: int | None = None) -> JobReport:
    """Quantize every manifest layer into an artifact directory.

    Per-channel layers spread their columns over the thread pool;
    per-layer granularity solves whole layers in parallel instead.
    Artifacts and reports are written in manifest order either way, so
    the output bytes do not depend on the thread count. The seed is
    recorded for bookkeeping; the solvers draw no random numbers.
    """
    manifest = load_manifest(manifest_path)
    cfg = resolve_config(manifest.defaults, overrides or {})
    threads = default_threads() if threads is None else max(1, int(threads))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    loaded = [
        (spec, load_tensor(spec.weight_path), load_tensor(spec.calib_path))
        for spec in manifest.layers
    ]

    def solve_one(item):
        spec, weights, calib = item
        start = time.perf_counter()
        layer, degenerate, exact_cols = _solve(weights, calib, cfg, threads)
        return layer, degenerate, exact_cols, time.perf_counter() - start

    if cfg.granularity == "per-layer" and threads > 1 and len(loaded) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            solved = list(pool.map(solve_one, loaded))
    else:
        solved = [solve_one(item) for item in loaded]

    reports = []
    for (spec, weights, calib), (layer, degenerate, exact_cols, elapsed) in zip(loaded, solved):
        error_before = _rtn_error_norm(weights, calib, cfg)
        layer_dir = out / spec.name
        W = np.asarray(weights, dtype=np.float64)
        X = np.asarray(calib, dtype=np.float64)
        wq = layer.dequantize().astype(np.float64)
        error_after = float(np.linalg.norm(X @ wq - X @ W))
        meta = {
            "bits": cfg.bits,
            "iters": cfg.iters,
            "lambda": cfg.lam,
            "granularity": cfg.granularity,
            "order": cfg.order,
            "scale_update": cfg.scale_update,
            "solver_version": __version__,
            "error_before": error_before,
            "error_after": error_after,
            "degenerate": degenerate,
            "exact_columns": list(exact_cols),
        }
        save_quantized(layer_dir, layer, meta)
        # Trust only what landed on disk for the reported number.
        error_after = _artifact_error_norm(layer_dir, weights, calib)
        xw_norm = float(np.linalg.norm(X @ W))
        reports.append(LayerReport(
            name=spec.name,
            rows=int(weights.shape[0]),
            cols=int(weights.shape[1]),
            calib_rows=int(calib.shape[0]),
            error_before=error_before,
            error_after=error_after,
            relative_error=error_after / (xw_norm + RELATIVE_ERROR_FLOOR),
            wall_time_s=elapsed,
            degenerate=degenerate,
            exact_columns=tuple(exact_cols),
        ))

    report = JobReport(config=_config_dict(cfg), threads=threads, seed=seed, layers=reports)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


def run_eval(manifest_path, artifact_dir, seed: int | None = None) -> JobReport:
    """Recompute every layer's reconstruction error from saved artifacts."""
    manifest = load_manifest(manifest_path)
    root = Path(artifact_dir)
    reports = []
    cfg_dict: dict = {}
    for spec in manifest.layers:
        weights = load_tensor(spec.weight_path)
        calib = load_tensor(spec.calib_path)
        start = time.perf_counter()
        layer, meta = load_quantized(root / spec.name)
        W = np.asarray(weights, dtype=np.float64)
        X = np.asarray(calib, dtype=np.float64)
        error_after = float(np.linalg.norm(X @ layer.dequantize().astype(np.float64) - X @ W))
        xw_norm = float(np.linalg.norm(X @ W))
        cfg_dict = {key: meta[key] for key in
                    ("bits", "iters", "lambda", "granularity", "order") if key in meta}
        reports.append(LayerReport(
            name=spec.name,
            rows=int(weights.shape[0]),
            cols=int(weights.shape[1]),
            calib_rows=int(calib.shape[0]),
            error_before=float(meta["error_before"]),
            error_after=error_after,
            relative_error=error_after / (xw_norm + RELATIVE_ERROR_FLOOR),
            wall_time_s=time.perf_counter() - start,
            degenerate=bool(meta.get("degenerate", False)),
            exact_columns=tuple(meta.get("exact_columns", ())),
        ))
    return JobReport(config=cfg_dict, threads=1, seed=seed, layers=reports)


def run_compare_orders(manifest_path, overrides: dict | None = None,
                       seeds: tuple[int, ...] = ()) -> dict:
    """Per-channel greedy versus cyclic on every manifest layer.

    Emits one error pair and their ratio per layer plus the median
    ratio. The seeds are recorded verbatim so harnesses can key result
    tables; the comparison itself is deterministic.
    """
    manifest = load_manifest(manifest_path)
    base = dict(overrides or {})
    base["granularity"] = "per-channel"
    rows = []
    for spec in manifest.layers:
        weights = load_tensor(spec.weight_path)
        calib = load_tensor(spec.calib_path)
        errors = {}
        for order in ("greedy", "cyclic"):
            cfg = resolve_config(manifest.defaults, dict(base, order=order))
            res = comq_per_channel(weights, calib, cfg)
            errors[order] = float(np.sqrt(res.final_error))
        ratio = errors["greedy"] / errors["cyclic"] if errors["cyclic"] > 0 else 1.0
        rows.append({
            "name": spec.name,
            "error_greedy": errors["greedy"],
            "error_cyclic": errors["cyclic"],
            "ratio": ratio,
        })
    ratios = sorted(row["ratio"] for row in rows)
    return {
        "seeds": list(seeds),
        "layers": rows,
        "median_ratio": float(np.median(ratios)) if ratios else None,
    }


def _config_dict(cfg: QuantConfig) -> dict:
    return {
        "bits": cfg.bits,
        "iters": cfg.iters,
        "lambda": cfg.lam,
        "granularity": cfg.granularity,
        "order": cfg.order,
        "scale_update": cfg.scale_update,
    }
