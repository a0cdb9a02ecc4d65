import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rotcontrol.angular import Basis, cos_theta_matrix
from rotcontrol.errors import ConfigurationError
from rotcontrol.model import CO
from rotcontrol.targets import (
    boltzmann_state, diagonal_projection_cos2, ket_target, orientation_target, partition_function,
    thermal_alignment_target,
)
from rotcontrol.units import K_B


def test_orientation_target_j4():
    b = Basis(15, m=0)
    psi = orientation_target(4, b)
    assert np.allclose(np.real(psi[:5]), [0.34, 0.54, 0.56, 0.46, 0.25], atol=5e-3)
    assert np.allclose(psi[5:], 0)
    assert abs(np.linalg.norm(psi) - 1) < 1e-14


@pytest.mark.parametrize("j_f", range(6))
def test_orientation_target_maximizes_cos(j_f):
    small = Basis(j_f, m=0)
    psi = orientation_target(j_f, small)
    c = cos_theta_matrix(small)
    assert abs(np.real(np.vdot(psi, c @ psi)) - np.linalg.eigvalsh(c)[-1]) < 1e-13


def test_orientation_target_embeds_in_full_basis():
    full = Basis(5)
    psi = orientation_target(2, full)
    assert abs(psi[full.index(1, 0)]) > 0.5
    with pytest.raises(ConfigurationError):
        orientation_target(6, full)


def test_ket_target():
    b = Basis(4)
    assert ket_target(b, 4, 4)[b.index(4, 4)] == 1


@given(st.floats(0.0, 300.0))
def test_boltzmann_state(temp):
    b = Basis(8)
    rho = boltzmann_state(temp, b, CO.B)
    assert abs(np.trace(rho) - 1) < 1e-12
    assert np.allclose(rho, np.diag(np.diag(rho)))
    pops = np.real(np.diag(rho))
    # populations depend on j only
    for j in range(9):
        sel = pops[b.j == j]
        assert np.allclose(sel, sel[0])


def test_boltzmann_zero_temperature():
    b = Basis(3)
    rho = boltzmann_state(0.0, b, CO.B)
    assert rho[b.index(0, 0), b.index(0, 0)] == 1 and abs(np.trace(rho) - 1) < 1e-15
    with pytest.raises(ConfigurationError):
        boltzmann_state(-1.0, b, CO.B)


def test_partition_function():
    b = Basis(10)
    temp = 5.0
    brute = np.sum(np.exp(-CO.B * b.j * (b.j + 1) / (K_B * temp)))
    assert abs(partition_function(temp, 10, CO.B) - brute) < 1e-12 * brute


def test_diagonal_projection_is_j_diagonal():
    b = Basis(6)
    p = diagonal_projection_cos2(b, 4)
    assert np.allclose(p, p.T)
    for i, k in zip(*np.nonzero(np.abs(p) > 1e-15)):
        assert b.j[i] == b.j[k] and b.j[i] <= 4


@pytest.mark.parametrize("temp", [0.0, 1.0, 5.0, 20.0])
def test_thermal_target_isospectral_per_parity(temp):
    b = Basis(12)
    rho0 = boltzmann_state(temp, b, CO.B)
    rho_f, rep = thermal_alignment_target(temp, 4, b, CO.B)
    for parity in (0, 1):
        idx = [i for i in range(b.size) if b.j[i] <= 4 and b.j[i] % 2 == parity]
        ev_f = np.sort(np.linalg.eigvalsh(rho_f[np.ix_(idx, idx)]))
        ev_0 = np.sort(np.real(np.diag(rho0))[idx])
        assert np.max(np.abs(ev_f - ev_0)) < 1e-12


def test_thermal_target_5k_value():
    _, rep = thermal_alignment_target(5.0, 4, Basis(15), CO.B)
    assert abs(rep.max_alignment - 0.518) < 5e-3
    assert rep.unconstrained_max >= rep.max_alignment >= rep.m_parity_max


@pytest.mark.parametrize("j_f", [0, 1, 2])
@pytest.mark.parametrize("temp", [2.0, 5.0, 30.0])
def test_rearrangement_bound_brute_force(j_f, temp):
    b = Basis(4)
    pops = np.real(np.diag(boltzmann_state(temp, b, CO.B)))
    chi = np.real(np.diag(diagonal_projection_cos2(b, j_f)))
    best = 0.0
    for parity in (0, 1):
        idx = [i for i in range(b.size) if b.j[i] <= j_f and b.j[i] % 2 == parity]
        if idx:
            best += max(float(np.dot(chi[idx], pops[list(p)])) for p in itertools.permutations(idx))
    _, rep = thermal_alignment_target(temp, j_f, b, CO.B)
    assert abs(rep.max_alignment - best) < 1e-15


def test_thermal_target_needs_full_basis():
    with pytest.raises(ConfigurationError):
        thermal_alignment_target(5.0, 2, Basis(4, m=0), CO.B)
