"""Initial and target states for the orientation, delocalization and thermal-alignment tasks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .angular import Basis, analytic_operator, cos_theta_matrix
from .errors import ConfigurationError
from .units import K_B


def _fix_sign(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    if nz.size and np.real(v[nz[0]]) < 0:
        v = -v
    return v


def orientation_target(j_f: int, basis: Basis) -> np.ndarray:
    """State of largest <cos theta> within span{|j,0>, j <= j_f}, embedded in ``basis``."""
    if not 0 <= j_f <= basis.j_max:
        raise ConfigurationError(f"j_f={j_f} outside 0..{basis.j_max}")
    w, v = np.linalg.eigh(cos_theta_matrix(Basis(j_f, m=0)))
    top = _fix_sign(v[:, -1])
    out = np.zeros(basis.size, dtype=complex)
    for j in range(j_f + 1):
        out[basis.index(j, 0)] = top[j]
    return out


def ket_target(basis: Basis, j: int, m: int) -> np.ndarray:
    return basis.ket(j, m)


def boltzmann_state(temperature: float, basis: Basis, B: float) -> np.ndarray:
    """Thermal density matrix over the truncated basis; T = 0 gives |0,0><0,0|."""
    if temperature < 0:
        raise ConfigurationError(f"temperature must be >= 0, got {temperature}")
    j = basis.j.astype(float)
    if temperature == 0:
        w = (j == 0).astype(float)
    else:
        e = B * j * (j + 1)
        # K_B * T can underflow for tiny T; dividing in two steps keeps the ground level at 0
        with np.errstate(over="ignore"):
            w = np.exp(-((e - e.min()) / K_B) / temperature)
    return np.diag(w / w.sum()).astype(complex)


def partition_function(temperature: float, j_max: int, B: float) -> float:
    j = np.arange(j_max + 1)
    return float(np.sum((2 * j + 1) * np.exp(-B * j * (j + 1) / (K_B * temperature))))


def diagonal_projection_cos2(basis: Basis, j_f: int) -> np.ndarray:
    """cos^2(theta) with only j-diagonal blocks kept, restricted to j <= j_f."""
    if not 0 <= j_f <= basis.j_max:
        raise ConfigurationError(f"j_f={j_f} outside 0..{basis.j_max}")
    c2 = analytic_operator(basis, ("z", "z"))
    same_j = basis.j[:, None] == basis.j[None, :]
    inside = (basis.j[:, None] <= j_f) & (basis.j[None, :] <= j_f)
    return np.where(same_j & inside, c2, 0.0)


@dataclass
class ThermalTargetReport:
    temperature: float
    j_f: int
    chi: np.ndarray  # eigenvalues of cos^2_p, ascending within each parity block, even block first
    omega: np.ndarray  # paired populations
    max_alignment: float  # sum chi*omega with the j-parity constraint
    unconstrained_max: float  # same sum pairing the whole subspace at once
    blocks: dict = field(default_factory=dict)
    restricted_trace: float = 1.0
    m_parity_max: float = float("nan")

    def as_dict(self) -> dict:
        return {
            "temperature_K": self.temperature,
            "j_f": self.j_f,
            "max_alignment": self.max_alignment,
            "unconstrained_max": self.unconstrained_max,
            "m_parity_resolved_max": self.m_parity_max,
            "restricted_trace": self.restricted_trace,
            "blocks": {k: {kk: (vv.tolist() if isinstance(vv, np.ndarray) else vv) for kk, vv in v.items()}
                       for k, v in self.blocks.items()},
        }


def _pair(idx: list[int], diag_c: np.ndarray, pops: np.ndarray, basis: Basis):
    # ascending eigenvalue, ties by ascending m then j
    by_chi = sorted(idx, key=lambda i: (round(diag_c[i], 12), basis.mq[i], basis.j[i]))
    omega = np.sort(pops[idx])
    return by_chi, diag_c[by_chi], omega


def thermal_alignment_target(temperature: float, j_f: int, basis: Basis, B: float):
    """Density matrix of maximal permanent alignment reachable from the thermal state.

    Within span{j <= j_f}, the even-j and odd-j subspaces are treated separately: in
    each, the sorted thermal populations are placed on the eigenvectors of the
    projected cos^2 operator in the same (ascending) order. Returns ``(rho_f, report)``.
    """
    if basis.m is not None:
        raise ConfigurationError("thermal target needs the full basis")
    rho0 = boltzmann_state(temperature, basis, B)
    pops = np.real(np.diag(rho0))
    diag_c = np.real(np.diag(diagonal_projection_cos2(basis, j_f)))
    rho_f = np.zeros_like(rho0)
    chis, omegas, blocks = [], [], {}
    for parity, name in ((0, "even"), (1, "odd")):
        idx = [i for i in range(basis.size) if basis.j[i] <= j_f and basis.j[i] % 2 == parity]
        order, chi, omega = _pair(idx, diag_c, pops, basis)
        rho_f[order, order] = omega
        chis.append(chi)
        omegas.append(omega)
        blocks[name] = {"chi": chi, "omega": omega, "alignment": float(chi @ omega), "trace": float(omega.sum())}
    chi, omega = np.concatenate(chis), np.concatenate(omegas)
    inside = [i for i in range(basis.size) if basis.j[i] <= j_f]
    unconstrained = float(np.sort(diag_c[inside]) @ np.sort(pops[inside]))
    finer = 0.0
    for jp in (0, 1):
        for mp in (0, 1):
            idx = [i for i in inside if basis.j[i] % 2 == jp and basis.mq[i] % 2 == mp]
            finer += float(np.sort(diag_c[idx]) @ np.sort(pops[idx]))
    report = ThermalTargetReport(
        temperature=temperature, j_f=j_f, chi=chi, omega=omega,
        max_alignment=float(chi @ omega), unconstrained_max=unconstrained, blocks=blocks,
        restricted_trace=float(omega.sum()), m_parity_max=finer,
    )
    return rho_f, report


TARGET_KINDS = ("orientation", "ket", "thermal_alignment")
