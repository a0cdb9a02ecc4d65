"""Backward/forward sweep shared by the Krotov and Lapert optimizers.

Each iteration propagates the adjoint backward under the current field, storing
it at the pre-kick point of every step, then propagates the state forward while
updating the field step by step (sequential update). The update rule itself is
pluggable.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol

import numpy as np

from ..dynamics import Ensemble, FieldTrace, Propagator, TimeGrid, get_propagator
from ..errors import ConfigurationError, OptimizationError, PropagationError, SweepAborted
from ..model import HamiltonianModel
from ..observables import CostSpec

log = logging.getLogger(__name__)

MONOTONIC_TOL = 1e-10


class PureStateObjective:
    """Maximize |<psi_f|psi(t_f)>|^2."""

    pure = True

    def __init__(self, psi0: np.ndarray, target: np.ndarray):
        self.psi0 = np.asarray(psi0, dtype=complex)
        self.target = np.asarray(target, dtype=complex)
        self.kets = self.psi0[:, None]
        self.weights = np.ones(1)

    def value(self, final: np.ndarray) -> float:
        return float(abs(np.vdot(self.target, final[:, 0])) ** 2)

    def adjoint_terminal(self, final: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        overlap = np.vdot(self.target, final[:, 0])
        return (self.target * overlap)[:, None], np.ones(1)


class DensityObjective:
    """Maximize Tr(rho_f rho(t_f)) / Tr(rho_f^2)."""

    pure = False

    def __init__(self, rho0: np.ndarray, rho_f: np.ndarray, cutoff: float = 1e-15):
        init = Ensemble.from_density(rho0, cutoff)
        self.kets, self.weights = init.kets, init.weights
        tgt = Ensemble.from_density(rho_f, 0.0)
        self.norm = float(np.sum(tgt.weights**2))
        self.target_kets = tgt.kets
        self.target_weights = tgt.weights / self.norm
        self.rho_f = np.asarray(rho_f)

    def value(self, final: np.ndarray) -> float:
        ov = np.abs(self.target_kets.conj().T @ final) ** 2
        return float(self.target_weights @ ov @ self.weights)

    def adjoint_terminal(self, final: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.target_kets, self.target_weights


@dataclass
class IterationRecord:
    iteration: int
    fidelity: float
    running_cost: float
    total_cost: float
    delta_c: float
    predicted_gain: float
    max_field: float
    total_variation: float
    fallbacks: int = 0
    unresolved: int = 0
    wall_time: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


class UpdateRule(Protocol):
    power: int

    def __call__(self, i: int, fields: list[float], brackets: np.ndarray, step_value) -> tuple[list[float], float, int, int]:
        """Return (new fields, exact step contribution to dC, fallbacks, unresolved).

        ``step_value(fields)`` is the exact change of the objective lower bound produced
        by using ``fields`` instead of the previous iterate during this step.
        """


@dataclass
class _Monomials:
    """Scalar helpers for the coupling monomials of a model."""

    exponents: list[tuple[int, ...]]

    def value(self, fields) -> list[float]:
        out = []
        for ex in self.exponents:
            v = 1.0
            for e, f in zip(ex, fields):
                if e:
                    v *= f**e
            out.append(v)
        return out

    def derivative(self, fields, channel: int) -> list[float]:
        out = []
        for ex in self.exponents:
            e = ex[channel]
            if e == 0:
                out.append(0.0)
                continue
            v = e * fields[channel] ** (e - 1)
            for c, (ec, f) in enumerate(zip(ex, fields)):
                if c != channel and ec:
                    v *= f**ec
            out.append(v)
        return out


@dataclass
class OptimizationResult:
    field: FieldTrace
    guess: FieldTrace
    records: list[IterationRecord] = field(default_factory=list)
    final_kets: np.ndarray | None = None
    weights: np.ndarray | None = None
    bound_report: dict | None = None
    converged: bool = False

    @property
    def fidelity(self) -> float:
        return self.records[-1].fidelity

    def monotonic(self, tol: float = MONOTONIC_TOL) -> bool:
        return all(r.delta_c >= -tol for r in self.records[1:])


class _StepContext:
    """Grid-space quantities of one time step, shared by the bracket and the step value.

    For each active block: ``z`` = S x (state on the grid) and ``wt`` = W S_bwd y_{i+1}
    (adjoint on the grid, quadrature weights folded in). The propagated overlap under
    a trial field is then sum_g conj(wt) D(E) z, exactly as the discrete propagator acts.
    """

    __slots__ = ("prop", "pure", "pairs", "chi_w", "psi_w", "n_chi", "k_psi", "ref")

    def __init__(self, prop, pure, pairs, chi_w, psi_w, n_chi, k_psi):
        self.prop, self.pure, self.pairs = prop, pure, pairs
        self.chi_w, self.psi_w, self.n_chi, self.k_psi = chi_w, psi_w, n_chi, k_psi

    def overlaps(self, mono: np.ndarray):
        if self.pure:
            val = 0j
            for b, cols, ccols, z, wt in self.pairs:
                val += np.dot(wt[:, 0].conj(), self.prop.kick_phase(b, mono) * z[:, 0])
            return val
        ov = np.zeros((self.n_chi, self.k_psi), dtype=complex)
        for b, cols, ccols, z, wt in self.pairs:
            ov[np.ix_(ccols, cols)] += wt.conj().T @ (self.prop.kick_phase(b, mono)[:, None] * z)
        return ov

    def brackets(self, mono: np.ndarray, n_couplings: int) -> np.ndarray:
        if self.pure:
            br = np.zeros(n_couplings, dtype=complex)
            for b, cols, ccols, z, wt in self.pairs:
                br += b.vals @ (wt[:, 0].conj() * self.prop.kick_phase(b, mono) * z[:, 0])
            self.ref = None
            return br
        ov = np.zeros((self.n_chi, self.k_psi), dtype=complex)
        mp = np.zeros((n_couplings, self.n_chi, self.k_psi), dtype=complex)
        for b, cols, ccols, z, wt in self.pairs:
            dz = self.prop.kick_phase(b, mono)[:, None] * z
            wc = wt.conj().T
            ov[np.ix_(ccols, cols)] += wc @ dz
            idx = np.ix_(ccols, cols)
            for p in range(n_couplings):
                mp[p][idx] += wc @ (b.vals[p][:, None] * dz)
        self.ref = ov
        return np.einsum("a,pab,ab,b->p", self.chi_w, mp, ov.conj(), self.psi_w)

    def value(self, mono: np.ndarray, mono_ref: np.ndarray) -> float:
        """Exact objective-bound change from replacing the reference field by a trial one in this step."""
        if self.pure:
            return float(2.0 * np.real(self.overlaps(mono) - self.overlaps(mono_ref)))
        ref = self.ref if self.ref is not None else self.overlaps(mono_ref)
        new = self.overlaps(mono)
        diff = np.abs(new) ** 2 - np.abs(ref) ** 2
        return float(self.chi_w @ diff @ self.psi_w)


class Sweeper:
    """Owns the propagator, block layout and adjoint storage for one optimization problem."""

    def __init__(self, model: HamiltonianModel, objective, time_grid: TimeGrid, field_cap: float = np.inf):
        self.model = model
        self.objective = objective
        self.grid = time_grid
        self.prop: Propagator = get_propagator(model, time_grid.dt)
        self.mono = _Monomials([c.exponents for c in model.couplings])
        self.n_couplings = len(model.couplings)
        self.shape = time_grid.shape()
        self.field_cap = field_cap

    # ---------------------------------------------------------------
    def forward(self, field: FieldTrace) -> np.ndarray:
        x0 = self.objective.kets
        prop = self.prop
        mono_all = prop.monomials(field.values)
        parts = prop.to_pre(prop.split(x0))
        for i in range(self.grid.n_steps):
            m = mono_all[:, i]
            parts = [(b, c, prop.forward(b, xb, m)) for b, c, xb in parts]
        final = prop.merge(prop.from_pre(parts), *x0.shape)
        self._check(final)
        return final

    def backward(self, field: FieldTrace, chi_T: np.ndarray) -> list[tuple]:
        """Discrete adjoint at every pre-kick point, per active block: (block, cols, array[n + 1, nb, kb]).

        Entry i holds the adjoint paired with the state entering step i; entry n is the
        terminal condition in the same frame.
        """
        prop = self.prop
        mono_all = prop.monomials(field.values)
        parts = prop.to_pre(prop.split(chi_T))
        n = self.grid.n_steps
        store = [(b, c, np.empty((n + 1,) + xb.shape, dtype=complex)) for b, c, xb in parts]
        for (_, _, arr), (_, _, xb) in zip(store, parts):
            arr[n] = xb
        for i in range(n - 1, -1, -1):
            m = mono_all[:, i]
            parts = [(b, c, prop.backward(b, xb, m)) for b, c, xb in parts]
            for (_, _, arr), (_, _, xb) in zip(store, parts):
                arr[i] = xb
        return store

    def _check(self, x):
        if not np.all(np.isfinite(x)):
            raise OptimizationError("non-finite state during sweep")

    # ---------------------------------------------------------------
    def sweep(self, field: FieldTrace, store, chi_weights: np.ndarray, update: UpdateRule):
        """Forward propagation with sequential field update; returns (new field, final kets, stats)."""
        prop = self.prop
        obj = self.objective
        x0 = obj.kets
        psi_parts = prop.to_pre(prop.split(x0))
        chi_by_block = {id(b): (cols, arr) for b, cols, arr in store}
        old = field.values
        new = old.copy()
        mono_old = prop.monomials(old)
        P = self.n_couplings
        gain = 0.0
        fallbacks = unresolved = 0
        for i in range(self.grid.n_steps):
            zs = [b.S @ xb for b, _, xb in psi_parts]
            pairs = []
            for (b, cols, _), z in zip(psi_parts, zs):
                hit = chi_by_block.get(id(b))
                if hit is not None:
                    ccols, arr = hit
                    wt = b.W[:, None] * (b.S_bwd @ arr[i + 1])
                    pairs.append((b, cols, ccols, z, wt))
            ctx = _StepContext(prop, obj.pure, pairs, chi_weights, obj.weights, chi_weights.size, x0.shape[1])
            m_ref = mono_old[:, i]
            br = ctx.brackets(m_ref, P)

            def step_value(fields, ctx=ctx, m_ref=m_ref):
                return ctx.value(np.array(self.mono.value(fields)), m_ref)

            e_new, g, fb, un = update(i, list(old[:, i]), br, step_value)
            if not all(np.isfinite(e_new)) or max(abs(e) for e in e_new) > self.field_cap:
                raise OptimizationError(
                    f"field update at step {i} gives {e_new}, beyond the cap {self.field_cap:g} a.u."
                )
            new[:, i] = e_new
            gain += g
            fallbacks += fb
            unresolved += un
            m = np.array(self.mono.value(e_new))
            psi_parts = [(b, c, b.A_fwd @ (prop.kick_phase(b, m)[:, None] * z))
                         for (b, c, _), z in zip(psi_parts, zs)]
        final = prop.merge(prop.from_pre(psi_parts), *x0.shape)
        self._check(final)
        return FieldTrace(self.grid, new), final, {"gain": gain, "fallbacks": fallbacks, "unresolved": unresolved}

    def gradient(self, field: FieldTrace) -> tuple[float, np.ndarray]:
        """Objective value and its exact derivative with respect to every field sample."""
        final = self.forward(field)
        chi_T, chi_w = self.objective.adjoint_terminal(final)
        store = self.backward(field, chi_T)
        grad = np.zeros_like(field.values)
        dt = self.grid.dt

        def record(i, fields, brackets, step_value):
            for c in range(len(fields)):
                grad[c, i] = 2.0 * dt * float(np.dot(self.mono.derivative(fields, c), brackets.imag))
            return fields, 0.0, 0, 0

        self.sweep(field, store, chi_w, record)
        return self.objective.value(final), grad


def penalty(new: FieldTrace, old: FieldTrace, cost: CostSpec) -> float:
    diff = new.values - old.values
    return float(cost.lam * new.grid.dt * np.sum(np.abs(diff) ** cost.power / new.grid.shape()[None, :]))


def total_variation(field: FieldTrace) -> float:
    return float(np.sum(np.abs(np.diff(field.values, axis=1))))


def run_sweeps(model: HamiltonianModel, objective, guess: FieldTrace, cost: CostSpec, make_rule,
               iterations: int, stagnation_eps: float = 1e-7, callback: Callable | None = None,
               bound_report: dict | None = None, field_cap: float = 1.0) -> OptimizationResult:
    """Iterate backward/forward sweeps until the budget or stagnation (|dC| < eps three times)."""
    if cost.reference != "previous":
        raise ConfigurationError("only the previous-iterate reference policy drives the optimizers")
    if guess.channels != model.channels:
        raise ConfigurationError(f"guess has {guess.channels} channels, model needs {model.channels}")
    sweeper = Sweeper(model, objective, guess.grid, field_cap)
    rule = make_rule(sweeper, cost)
    t0 = time.perf_counter()
    current = guess.copy()
    final = sweeper.forward(current)
    fid = objective.value(final)
    records = [IterationRecord(0, fid, 0.0, fid, 0.0, 0.0, current.max_abs(), total_variation(current),
                               wall_time=time.perf_counter() - t0)]
    if callback:
        callback(records[-1])
    quiet = 0
    converged = False
    for k in range(1, iterations + 1):
        chi_T, chi_w = objective.adjoint_terminal(final)
        try:
            store = sweeper.backward(current, chi_T)
            new, final_new, stats = sweeper.sweep(current, store, chi_w, rule)
        except (OptimizationError, PropagationError) as exc:
            partial = OptimizationResult(current, guess, records, final, objective.weights, bound_report, False)
            raise SweepAborted(f"iteration {k}: {exc}", partial) from exc
        final = final_new
        run_cost = penalty(new, current, cost)
        fid_new = objective.value(final)
        total = fid_new - run_cost
        rec = IterationRecord(
            k, fid_new, run_cost, total, total - fid, stats["gain"], new.max_abs(), total_variation(new),
            stats["fallbacks"], stats["unresolved"], time.perf_counter() - t0,
        )
        if rec.delta_c < -MONOTONIC_TOL:
            log.warning("iteration %d: cost decreased by %.3e (monotonicity violation)", k, -rec.delta_c)
        records.append(rec)
        if callback:
            callback(rec)
        current, fid = new, fid_new
        quiet = quiet + 1 if abs(rec.delta_c) < stagnation_eps else 0
        if quiet >= 3:
            converged = True
            break
    return OptimizationResult(current, guess, records, final, objective.weights, bound_report, converged)


def spectral_radius(mat: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvalsh(mat)))) if mat.size else 0.0


def monotonicity_bound_check(model: HamiltonianModel, cost: CostSpec, field: FieldTrace,
                             samples: int = 257) -> dict:
    """Compare lam/S(t) with the spectral radius of d^2H/dE^2 along the field (report only)."""
    grid = field.grid
    idx = np.unique(np.linspace(0, grid.n_steps - 1, min(samples, grid.n_steps)).astype(int))
    shape = grid.shape()
    radius = np.zeros((model.channels, idx.size))
    for c in range(model.channels):
        for n, i in enumerate(idx):
            radius[c, n] = spectral_radius(model.derivative(c, field.values[:, i], order=2))
    ratio = cost.lam / shape[idx]
    ok = ratio[None, :] > radius
    report = {
        "max_spectral_radius": float(radius.max()),
        "min_lambda_over_shape": float(ratio.min()),
        "satisfied_fraction": float(ok.mean()),
        "satisfied": bool(ok.all()),
    }
    if not report["satisfied"]:
        log.warning("lambda/S(t) <= spectral radius of d2H/dE2 (%.4g) on %.1f%% of samples; continuing",
                    report["max_spectral_radius"], 100 * (1 - report["satisfied_fraction"]))
    return report
