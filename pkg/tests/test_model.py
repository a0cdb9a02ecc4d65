import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rotcontrol.angular import Basis, analytic_operator
from rotcontrol.errors import ConfigurationError
from rotcontrol.model import CO, MoleculeParams, hamiltonian_xy, hamiltonian_z_averaged, hamiltonian_z_full
from rotcontrol.optim.core import spectral_radius
from rotcontrol.units import cm_to_hartree


def test_co_parameters():
    assert math.isclose(CO.B, cm_to_hartree(1.9312))
    assert math.isclose(CO.delta_alpha, 15.65 - 11.73)
    # pi/B in a.u., about 8.64 ps
    assert abs(CO.rotational_period - 3.5703e5) / 3.5703e5 < 1e-3


def test_invalid_params():
    with pytest.raises(ConfigurationError):
        MoleculeParams(-1.0, 0, 0, 0, 0, 0)
    with pytest.raises(ConfigurationError):
        MoleculeParams(1.0, float("nan"), 0, 0, 0, 0)


def test_z_full_explicit_matrix():
    b = Basis(6, m=0)
    m = hamiltonian_z_full(CO, b)
    e = 3e-3
    c1, c2, c3 = (analytic_operator(b, ("z",) * k) for k in (1, 2, 3))
    expected = (np.diag(CO.B * b.j * (b.j + 1)) - CO.mu0 * c1 * e
                - 0.5 * (CO.delta_alpha * c2 + CO.alpha_perp * np.eye(b.size)) * e**2
                - ((CO.beta_par - 3 * CO.beta_perp) / 6 * c3 + 0.5 * CO.beta_perp * c1) * e**3)
    assert np.allclose(m.evaluate([e]), expected, atol=1e-15)


def test_z_averaged_has_no_linear_term():
    m = hamiltonian_z_averaged(CO, Basis(5, m=0))
    assert all(c.degree >= 2 for c in m.couplings)
    assert np.allclose(m.derivative(0, [0.0]), 0)


def test_xy_cross_term_vanishes_at_half_pi():
    b = Basis(3)
    assert len(hamiltonian_xy(CO, b, math.pi / 2).couplings) == 2
    assert len(hamiltonian_xy(CO, b, math.pi / 4).couplings) == 3
    with pytest.raises(ConfigurationError):
        hamiltonian_xy(CO, Basis(3, m=0), 0.0)


@given(st.floats(-0.02, 0.02), st.floats(-0.02, 0.02))
def test_xy_hermitian_and_derivative(ex, ey):
    m = hamiltonian_xy(CO, Basis(3), math.pi / 4)
    h = m.evaluate([ex, ey])
    assert np.allclose(h, h.conj().T, atol=1e-14)
    d = 1e-6
    for c in range(2):
        up = [ex, ey]
        dn = [ex, ey]
        up[c] += d
        dn[c] -= d
        fd = (m.evaluate(up) - m.evaluate(dn)) / (2 * d)
        assert np.allclose(fd, m.derivative(c, [ex, ey]), atol=1e-8)


@given(st.floats(-0.05, 0.05))
def test_z_full_second_derivative(e):
    m = hamiltonian_z_full(CO, Basis(4, m=0))
    d = 1e-5
    fd = (m.derivative(0, [e + d]) - m.derivative(0, [e - d])) / (2 * d)
    assert np.allclose(fd, m.derivative(0, [e], order=2), atol=1e-7)


def test_wrong_field_shape():
    m = hamiltonian_xy(CO, Basis(2), 0.3)
    with pytest.raises(ConfigurationError):
        m.evaluate([0.1])


def test_blocks_follow_symmetry():
    assert len(hamiltonian_z_full(CO, Basis(5)).blocks()) == 11  # one per m
    # xy couplings change m by 0, +-2 and keep the parity of j
    blocks = hamiltonian_xy(CO, Basis(4), 0.3).blocks()
    assert len(blocks) == 4
    b = Basis(4)
    for idx in blocks:
        assert len({(b.j[i] % 2, b.mq[i] % 2) for i in idx}) == 1


def test_second_derivative_radius_at_zero_field():
    # cycle-averaged model: (1/2)(delta_alpha cos^2 + alpha_perp), close to alpha_par / 2
    m = hamiltonian_z_averaged(CO, Basis(15, m=0))
    r = spectral_radius(m.derivative(0, [0.0], order=2))
    assert abs(r - CO.alpha_par / 2) / (CO.alpha_par / 2) < 1e-2
