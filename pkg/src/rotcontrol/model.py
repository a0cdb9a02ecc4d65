"""Molecular parameters and polynomial-in-field Hamiltonians H(E) = H0 + sum_p H_p * monomial_p(E)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import units
from .angular import (
    COS, COS2, COS2X, COS2Y, COS3, COSXCOSY, ONE,
    AngularFunction, AngularGrid, Basis, j_squared, multiplication_operator,
)
from .errors import ConfigurationError


@dataclass(frozen=True)
class MoleculeParams:
    """Rotational constant ``B`` in Hartree; dipole and (hyper)polarizabilities in a.u."""

    B: float
    mu0: float
    alpha_par: float
    alpha_perp: float
    beta_par: float
    beta_perp: float

    def __post_init__(self):
        vals = (self.B, self.mu0, self.alpha_par, self.alpha_perp, self.beta_par, self.beta_perp)
        if not all(math.isfinite(v) for v in vals):
            raise ConfigurationError("molecular parameters must be finite")
        if self.B <= 0:
            raise ConfigurationError(f"B must be positive, got {self.B}")

    @classmethod
    def from_lab(cls, B_cm, mu0, alpha_par, alpha_perp, beta_par, beta_perp):
        return cls(units.cm_to_hartree(B_cm), mu0, alpha_par, alpha_perp, beta_par, beta_perp)

    @property
    def B_cm(self) -> float:
        return units.hartree_to_cm(self.B)

    @property
    def delta_alpha(self) -> float:
        return self.alpha_par - self.alpha_perp

    @property
    def rotational_period(self) -> float:
        """Full revival time pi/B in a.u."""
        return math.pi / self.B


CO = MoleculeParams.from_lab(1.9312, 0.112, 15.65, 11.73, 28.35, 6.64)


@dataclass
class Coupling:
    """One interaction term: operator times prod_c field_c**exponents[c]."""

    exponents: tuple[int, ...]
    terms: tuple[tuple[float, AngularFunction], ...]
    operator: np.ndarray

    @property
    def degree(self) -> int:
        return sum(self.exponents)

    def monomial(self, fields: Sequence[float]) -> float:
        out = 1.0
        for e, f in zip(self.exponents, fields):
            out *= f**e
        return out

    def monomial_derivative(self, fields: Sequence[float], channel: int, order: int = 1) -> float:
        e = self.exponents[channel]
        if e < order:
            return 0.0
        out = math.perm(e, order) * fields[channel] ** (e - order)
        for c, (ec, f) in enumerate(zip(self.exponents, fields)):
            if c != channel:
                out *= f**ec
        return out

    def grid_values(self, grid: AngularGrid, theta_only: bool = False) -> np.ndarray:
        if theta_only:
            return sum(w * grid.theta_values(f) for w, f in self.terms)
        return sum(w * grid.values(f) for w, f in self.terms)


class HamiltonianModel:
    """Field-free rotor plus couplings that are all multiplication operators in (theta, phi)."""

    def __init__(self, name: str, basis: Basis, grid: AngularGrid, B: float,
                 couplings: list[Coupling], channels: int, channel_names: Sequence[str]):
        self.name = name
        self.basis = basis
        self.grid = grid
        self.B = B
        self.energies = B * np.diag(j_squared(basis))
        self.h0 = np.diag(self.energies)
        self.couplings = couplings
        self.channels = channels
        self.channel_names = tuple(channel_names)
        for c in couplings:
            if len(c.exponents) != channels or c.degree > 3:
                raise ConfigurationError(f"bad coupling exponents {c.exponents}")

    @property
    def axial(self) -> bool:
        """True if every coupling is phi-independent (m is conserved)."""
        return all(f.axial for c in self.couplings for _, f in c.terms)

    def _check_fields(self, fields) -> np.ndarray:
        fields = np.atleast_1d(np.asarray(fields, dtype=float))
        if fields.shape != (self.channels,):
            raise ConfigurationError(f"expected {self.channels} field values, got shape {fields.shape}")
        return fields

    def _check_channel(self, channel: int):
        if not 0 <= channel < self.channels:
            raise IndexError(f"channel {channel} out of range for {self.channels}-channel model")

    def evaluate(self, fields) -> np.ndarray:
        fields = self._check_fields(fields)
        h = self.h0.astype(complex)
        for c in self.couplings:
            h = h + c.monomial(fields) * c.operator
        return h

    def derivative(self, channel: int, fields, order: int = 1) -> np.ndarray:
        self._check_channel(channel)
        fields = self._check_fields(fields)
        out = np.zeros_like(self.h0, dtype=complex)
        for c in self.couplings:
            out = out + c.monomial_derivative(fields, channel, order) * c.operator
        return out

    def interaction(self, fields) -> np.ndarray:
        return self.evaluate(fields) - self.h0

    def blocks(self) -> list[np.ndarray]:
        """Index sets of subspaces left invariant by H0 and every coupling."""
        mask = np.zeros(self.h0.shape, dtype=bool)
        for c in self.couplings:
            mask |= np.abs(c.operator) > 1e-14
        n, lab = connected_components(mask, directed=False)
        blocks = [np.flatnonzero(lab == k) for k in range(n)]
        return sorted(blocks, key=lambda b: b[0])


def evaluate(model: HamiltonianModel, fields) -> np.ndarray:
    return model.evaluate(fields)


def derivative(model: HamiltonianModel, channel: int, fields) -> np.ndarray:
    return model.derivative(channel, fields)


def _coupling(basis, grid, exponents, terms):
    op = sum(w * multiplication_operator(basis, grid, f) for w, f in terms)
    return Coupling(tuple(exponents), tuple(terms), np.asarray(op))


def hamiltonian_z_full(params: MoleculeParams, basis: Basis, grid: AngularGrid | None = None) -> HamiltonianModel:
    """Carrier-resolved z-polarized coupling, control E_z(t); dipole, polarizability, hyperpolarizability."""
    grid = grid or AngularGrid(basis.j_max)
    p = params
    couplings = [
        _coupling(basis, grid, (1,), ((-p.mu0, COS),)),
        _coupling(basis, grid, (2,), ((-0.5 * p.delta_alpha, COS2), (-0.5 * p.alpha_perp, ONE))),
        _coupling(basis, grid, (3,), ((-(p.beta_par - 3 * p.beta_perp) / 6, COS3), (-0.5 * p.beta_perp, COS))),
    ]
    return HamiltonianModel("z_full", basis, grid, p.B, couplings, 1, ("z",))


def hamiltonian_z_averaged(params: MoleculeParams, basis: Basis, grid: AngularGrid | None = None) -> HamiltonianModel:
    """Cycle-averaged z-polarized coupling in the envelope eps_z(t); no dipole term."""
    grid = grid or AngularGrid(basis.j_max)
    p = params
    couplings = [
        _coupling(basis, grid, (2,), ((-0.25 * p.delta_alpha, COS2), (-0.25 * p.alpha_perp, ONE))),
        _coupling(basis, grid, (3,), ((-(p.beta_par - 3 * p.beta_perp) / 8, COS3), (-3 * p.beta_perp / 8, COS))),
    ]
    return HamiltonianModel("z_averaged", basis, grid, p.B, couplings, 1, ("z",))


def hamiltonian_xy(params: MoleculeParams, basis: Basis, phase_diff: float,
                   grid: AngularGrid | None = None) -> HamiltonianModel:
    """Cycle-averaged elliptic (x, y) polarization; hyperpolarizability neglected."""
    if basis.m is not None:
        raise ConfigurationError("the (x,y) model mixes m; use the full basis")
    grid = grid or AngularGrid(basis.j_max)
    p = params
    couplings = [
        _coupling(basis, grid, (2, 0), ((-0.25 * p.delta_alpha, COS2X), (-0.25 * p.alpha_perp, ONE))),
        _coupling(basis, grid, (0, 2), ((-0.25 * p.delta_alpha, COS2Y), (-0.25 * p.alpha_perp, ONE))),
    ]
    cross = -0.5 * p.delta_alpha * math.cos(phase_diff)
    if abs(cross) > 1e-15:
        couplings.append(_coupling(basis, grid, (1, 1), ((cross, COSXCOSY),)))
    return HamiltonianModel("xy", basis, grid, p.B, couplings, 2, ("x", "y"))


MODELS = {"z_full": hamiltonian_z_full, "z_averaged": hamiltonian_z_averaged, "xy": hamiltonian_xy}
