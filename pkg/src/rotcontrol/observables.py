"""Expectation values, fidelities and the field running cost."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .angular import Basis, analytic_operator, j_squared, jz
from .dynamics import Ensemble, FieldTrace
from .errors import ConfigurationError

REFERENCE_POLICIES = ("previous", "fixed", "zero")


@dataclass(frozen=True)
class CostSpec:
    """Penalty lam * (E - E_ref)**power / S(t) with S(t) = sin^2(pi t / t_f)."""

    lam: float
    power: int = 2
    reference: str = "previous"

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigurationError(f"lambda must be positive, got {self.lam}")
        if self.power not in (2, 4):
            raise ConfigurationError(f"penalty power must be 2 or 4, got {self.power}")
        if self.reference not in REFERENCE_POLICIES:
            raise ConfigurationError(f"reference policy must be one of {REFERENCE_POLICIES}")


@dataclass(frozen=True)
class AlignmentSplit:
    permanent: float
    coherent: float

    @property
    def total(self) -> float:
        return self.permanent + self.coherent


def expectation(state, op: np.ndarray) -> float:
    """<psi|A|psi>, Tr(rho A) or the ensemble average; the imaginary residue is checked and dropped."""
    if isinstance(state, Ensemble):
        return state.expectation(op)
    state = np.asarray(state)
    if state.shape[0] != op.shape[0]:
        raise ConfigurationError(f"state dimension {state.shape[0]} != operator dimension {op.shape[0]}")
    if state.ndim == 1:
        val = np.vdot(state, op @ state)
    else:
        val = np.trace(state @ op)
    if abs(val.imag) > 1e-10 * max(1.0, abs(val.real)):
        raise ValueError(f"non-Hermitian expectation value {val}")
    return float(val.real)


def jz_orientation_measure(state, basis: Basis) -> float:
    """<J_z> / sqrt(<J^2>)."""
    j2 = expectation(state, j_squared(basis))
    if j2 <= 1e-14:
        raise ZeroDivisionError("<J^2> vanishes; orientation of J undefined")
    return expectation(state, jz(basis)) / np.sqrt(j2)


def cos2_split_operators(basis: Basis) -> tuple[np.ndarray, np.ndarray]:
    c2 = analytic_operator(basis, ("z", "z"))
    same_j = basis.j[:, None] == basis.j[None, :]
    return np.where(same_j, c2, 0.0), np.where(same_j, 0.0, c2)


def alignment_split(state, basis: Basis) -> AlignmentSplit:
    """Permanent (j-diagonal) and coherent (j-off-diagonal) parts of <cos^2 theta>."""
    perm, coh = cos2_split_operators(basis)
    return AlignmentSplit(expectation(state, perm), expectation(state, coh))


def fidelity(state, target) -> float:
    """|<psi_f|psi>|^2 for kets; Tr(rho_f rho)/Tr(rho_f^2) for density matrices."""
    if isinstance(state, Ensemble):
        state = state.matrix()
    state, target = np.asarray(state), np.asarray(target)
    if state.ndim != target.ndim:
        raise ConfigurationError("fidelity needs both states as kets or both as density matrices")
    if state.ndim == 1:
        return float(abs(np.vdot(target, state)) ** 2)
    norm = np.real(np.trace(target @ target))
    return float(np.real(np.trace(target @ state)) / norm)


def running_cost(field: FieldTrace, reference: FieldTrace, cost: CostSpec) -> float:
    """Midpoint-rule integral of lam * (E - E_ref)**power / S(t), summed over channels."""
    if field.values.shape != reference.values.shape:
        raise ConfigurationError("field and reference are sampled differently")
    diff = field.values - reference.values
    if not np.all(np.isfinite(diff)):
        raise ValueError("non-finite field in running cost")
    shape = field.grid.shape()
    return float(cost.lam * field.grid.dt * np.sum(diff**cost.power / shape[None, :]))
