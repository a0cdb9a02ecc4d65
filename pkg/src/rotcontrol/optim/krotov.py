"""Krotov update with a quadratic field penalty."""
from __future__ import annotations

import numpy as np

from ..dynamics import FieldTrace
from ..model import HamiltonianModel
from ..observables import CostSpec
from .core import OptimizationResult, monotonicity_bound_check, run_sweeps


class KrotovRule:
    """E_new = E_old + S(t)/lam * Im<chi|dH/dE|psi>, channels updated together."""

    power = 2

    def __init__(self, sweeper, cost: CostSpec):
        self.mono = sweeper.mono
        self.lam = cost.lam
        self.shape = sweeper.shape
        self.channels = sweeper.model.channels
        self.dt = sweeper.grid.dt

    def __call__(self, i, fields, brackets, step_value):
        imb = brackets.imag
        s = self.shape[i]
        new = []
        for c in range(self.channels):
            g = float(np.dot(self.mono.derivative(fields, c), imb))
            new.append(fields[c] + s / self.lam * g)
        pen = self.dt * self.lam * sum((a - b) ** 2 for a, b in zip(new, fields)) / s
        return new, step_value(new) - pen, 0, 0


def krotov_iterate(model: HamiltonianModel, objective, guess: FieldTrace, cost: CostSpec,
                   iterations: int, stagnation_eps: float = 1e-7, callback=None,
                   field_cap: float = 1.0) -> OptimizationResult:
    """Run up to ``iterations`` Krotov sweeps from ``guess``.

    The running cost is lam * (E_{k+1} - E_k)**2 / S(t). The lam/S bound on the second
    field derivative of H is evaluated on the guess and reported, never enforced.
    """
    if cost.power != 2:
        raise ValueError("the Krotov rule uses the quadratic penalty")
    report = monotonicity_bound_check(model, cost, guess)
    return run_sweeps(model, objective, guess, cost, KrotovRule, iterations, stagnation_eps, callback, report,
                      field_cap)
