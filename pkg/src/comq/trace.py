"""Step-level instrumentation shared by both solvers.

Observers receive one event per coordinate update and one per scale
refit. Events exist for diagnostics and for tests that replay a solver
trajectory against the search oracles; solvers skip all bookkeeping when
no observer is attached.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class StepEvent:
    """One solver step.

    ``error_before``/``error_after`` are squared reconstruction errors.
    Coordinate events report the affected column's objective; scale
    events report the objective the refit minimizes (the whole layer for
    per-layer sweeps, the column for per-channel sweeps). ``old_code`` is
    a float because codes are real-valued until the first sweep has
    visited them. ``old_feasible`` says whether the previous code already
    sat inside the current code window, which is exactly the condition
    under which a coordinate update cannot increase the objective.
    ``target`` carries the vector the scaled feature column is fitted to,
    only when target capture was requested.
    """

    kind: str
    sweep: int
    error_before: float
    error_after: float
    row: int | None = None
    col: int | None = None
    old_code: float | None = None
    new_code: int | None = None
    old_feasible: bool | None = None
    scale: float | None = None
    scale_before: float | None = None
    zero_point: int | None = None
    code_lo: int | None = None
    code_hi: int | None = None
    ortho: float | None = None
    image_norm: float | None = None
    residual_norm: float | None = None
    target: np.ndarray | None = None


Observer = Callable[[StepEvent], None]
