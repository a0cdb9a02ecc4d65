from ..errors import SweepAborted
from .core import (
    DensityObjective,
    IterationRecord,
    OptimizationResult,
    PureStateObjective,
    Sweeper,
    monotonicity_bound_check,
    run_sweeps,
    total_variation,
)
from .cubic import CubicUpdateProblem, real_roots_cubic, solve_cubic_update
from .krotov import KrotovRule, krotov_iterate
from .lapert import LapertRule, lapert_iterate, root_sensitivity_scan
