"""End-to-end calibration: maximize the averaged MI starting from an initial guess."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import ExtrinsicParams
from .mi import DEGENERATE_SENTINEL, MIObjectiveContext, objective
from .optimizer import (
    Bounds,
    OptimizationResult,
    OptimizerConfig,
    Termination,
    maximize,
    scale_params,
    unscale_params,
)

# one scaled unit = 1 degree of rotation = 5 cm of translation
DEFAULT_SCALING = np.array([1.0, 1.0, 1.0, 20.0, 20.0, 20.0])
DEFAULT_BOUND = 30.0


@dataclass
class CalibrationResult:
    initial: ExtrinsicParams
    params: ExtrinsicParams
    mi: float
    evaluations: int
    termination: Termination
    optimization: OptimizationResult

    @property
    def degenerate(self) -> bool:
        return self.mi <= DEGENERATE_SENTINEL


def free_slice(dof: int) -> slice:
    if dof == 3:
        return slice(0, 3)
    if dof == 6:
        return slice(0, 6)
    raise ValueError(f"dof must be 3 or 6, got {dof}")


def calibrate(ctx: MIObjectiveContext, initial: ExtrinsicParams, dof: int = 6,
              config: Optional[OptimizerConfig] = None, bound: float = DEFAULT_BOUND,
              scaling=DEFAULT_SCALING) -> CalibrationResult:
    """Maximize the objective over the free parameters.

    With ``dof=3`` only the angles move; the translation stays at ``initial``'s.
    ``bound`` is the half-width of the search box in scaled units.
    """
    free = free_slice(dof)
    base = scale_params(initial.as_array(), scaling)
    x0 = base[free].copy()

    def f(x):
        full = base.copy()
        full[free] = x
        return objective(ExtrinsicParams.from_array(unscale_params(full, scaling)), ctx)

    res = maximize(f, x0, Bounds.around(x0, bound), config)
    full = base.copy()
    full[free] = res.best_params
    best = ExtrinsicParams.from_array(unscale_params(full, scaling))
    return CalibrationResult(initial, best, res.best_value, res.evaluations_used,
                             res.termination, res)
