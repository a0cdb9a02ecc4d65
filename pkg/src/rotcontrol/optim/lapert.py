"""Update with a quartic field penalty: the new field solves a cubic at every step."""
from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from ..dynamics import FieldTrace
from ..errors import OptimizationError
from ..model import HamiltonianModel
from ..observables import CostSpec
from .core import OptimizationResult, run_sweeps
from .cubic import CubicUpdateProblem

log = logging.getLogger(__name__)

# per-step slack for round-off in the exact step value (summed over a sweep it stays << 1e-10)
STEP_TOL = 1e-15


def _bracket_poly(mono, exponents, fields, channel, imb) -> tuple[float, float, float]:
    """2*Im<chi|dH/dE_c(x)|psi> as (im2, im1, im0) in x, other channels held fixed."""
    im = [0.0, 0.0, 0.0]
    for ex, b in zip(exponents, imb):
        e = ex[channel]
        if e == 0:
            continue
        if e > 3:
            raise OptimizationError("field power above 3 does not give a cubic update")
        coeff = 2.0 * b * e
        for c, (ec, f) in enumerate(zip(ex, fields)):
            if c != channel and ec:
                coeff *= f**ec
        im[e - 1] += coeff
    return im[2], im[1], im[0]


class LapertRule:
    """Root closest to the previous value, unless its exact step contribution is negative.

    Candidates are then tried in order of closeness; if none gives a non-negative
    contribution the previous value is kept (counted as unresolved). Several
    channels are updated one after another (Gauss-Seidel), each solve seeing the
    already updated values of the earlier channels.
    """

    power = 4

    def __init__(self, sweeper, cost: CostSpec):
        self.mono = sweeper.mono
        self.lam = cost.lam
        self.shape = sweeper.shape
        self.channels = sweeper.model.channels
        self.exponents = sweeper.mono.exponents
        self.dt = sweeper.grid.dt

    def __call__(self, i, fields, brackets, step_value):
        imb = brackets.imag
        s = self.shape[i]
        cur = list(fields)
        total = 0.0
        penalty = 0.0
        fallbacks = unresolved = 0
        for c in range(self.channels):
            im2, im1, im0 = _bracket_poly(self.mono, self.exponents, cur, c, imb)
            prob = CubicUpdateProblem(4.0 * self.lam / s, fields[c], im2, im1, im0)
            chosen = None
            for rank, r in enumerate(prob.roots()):
                trial = list(cur)
                trial[c] = r
                pen = penalty + self.dt * self.lam * (r - fields[c]) ** 4 / s
                cand = step_value(trial) - pen
                if cand - total >= -STEP_TOL:
                    chosen, total, penalty = r, cand, pen
                    fallbacks += rank > 0
                    break
            if chosen is None:
                unresolved += 1
                chosen = fields[c]
            cur[c] = chosen
        return cur, total, fallbacks, unresolved


def lapert_iterate(model: HamiltonianModel, objective, guess: FieldTrace, cost: CostSpec,
                   iterations: int, stagnation_eps: float = 1e-7, callback=None,
                   field_cap: float = 1.0) -> OptimizationResult:
    """Run up to ``iterations`` sweeps with the quartic running cost lam * (E_{k+1} - E_k)**4 / S(t)."""
    if cost.power != 4:
        raise ValueError("the cubic update uses the quartic penalty")
    return run_sweeps(model, objective, guess, cost, LapertRule, iterations, stagnation_eps, callback,
                      field_cap=field_cap)


def root_sensitivity_scan(lams, xs, im2: float, im1: float, im0: float, e_old: float = 0.0, shape: float = 1.0,
                          path: str | Path | None = None) -> list[tuple[float, float, float]]:
    """Selected cubic root over a (lambda, x) grid, x scaling the bracket coefficients.

    Rows are (lambda, x, root). Written as CSV when ``path`` is given.
    """
    rows = []
    for lam in lams:
        for x in xs:
            prob = CubicUpdateProblem(4.0 * lam / shape, e_old, x * im2, x * im1, x * im0)
            rows.append((float(lam), float(x), prob.roots()[0]))
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "x", "root"])
            for r in rows:
                w.writerow([f"{v:.15g}" for v in r])
    return rows
