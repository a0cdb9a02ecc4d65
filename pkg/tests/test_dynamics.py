import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rotcontrol.angular import Basis, analytic_operator
from rotcontrol.dynamics import (
    Ensemble, FieldTrace, Propagator, TimeGrid, dense_step, get_propagator, propagate, propagate_adjoint_backward,
    propagate_density, revival_time, step,
)
from rotcontrol.errors import ConfigurationError, PropagationError
from rotcontrol.model import CO, hamiltonian_xy, hamiltonian_z_full


@pytest.fixture(scope="module")
def zmodel():
    return hamiltonian_z_full(CO, Basis(15, m=0))


@pytest.fixture(scope="module")
def xymodel():
    return hamiltonian_xy(CO, Basis(8), math.pi / 4)


def random_state(n, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    return v / np.linalg.norm(v)


def test_time_grid():
    g = TimeGrid(10.0, 5)
    assert g.dt == 2.0
    assert np.allclose(g.midpoints, [1, 3, 5, 7, 9])
    assert np.allclose(g.shape(), np.sin(np.pi * g.midpoints / 10) ** 2)
    with pytest.raises(ConfigurationError):
        TimeGrid(-1.0, 10)
    with pytest.raises(ConfigurationError):
        TimeGrid(1.0, 1)


def test_field_trace_validation():
    g = TimeGrid(1.0, 4)
    with pytest.raises(ConfigurationError):
        FieldTrace(g, np.zeros(3))
    with pytest.raises(ConfigurationError):
        FieldTrace(g, [0, np.nan, 0, 0])
    f = FieldTrace.from_functions(g, [lambda t: 2.0])
    assert f.values.shape == (1, 4) and f.max_abs() == 2.0


@given(st.integers(0, 2**32 - 1))
def test_field_free_revival(seed):
    model = hamiltonian_xy(CO, Basis(6), 0.4)
    psi = random_state(model.basis.size, seed)
    grid = TimeGrid(revival_time(model), 64)
    out = propagate(psi, model, FieldTrace.zeros(grid, 2)).final
    assert np.max(np.abs(out - psi)) < 1e-8


def test_norm_conserved_away_from_cutoff(xymodel):
    grid = TimeGrid(2e4, 200)
    rng = np.random.default_rng(1)
    fld = FieldTrace(grid, 0.003 * rng.normal(size=(2, 200)))
    b = xymodel.basis
    psi = (b.ket(0, 0) + b.ket(1, 1) + 1j * b.ket(2, -2)) / math.sqrt(3)
    assert abs(np.linalg.norm(propagate(psi, xymodel, fld).final) - 1) < 1e-10


def test_truncation_shows_as_norm_loss(xymodel):
    # the grid kick is projected back onto the basis, so strong driving of the top
    # j levels loses norm instead of wrapping around
    grid = TimeGrid(2e4, 200)
    fld = FieldTrace(grid, 0.05 * np.ones((2, 200)))
    out = propagate(xymodel.basis.ket(0, 0), xymodel, fld).final
    assert np.linalg.norm(out) < 1 - 1e-6


def compact_state(basis, j_top, seed):
    rng = np.random.default_rng(seed)
    v = np.zeros(basis.size, dtype=complex)
    for j in range(j_top + 1):
        v[basis.index(j, 0)] = rng.normal() + 1j * rng.normal()
    return v / np.linalg.norm(v)


@pytest.mark.parametrize("e", [1e-3, 5e-3, 1e-2, -1e-2])
def test_step_matches_dense_orientation(zmodel, e):
    # support j <= 4: paths that reach the cutoff, where the two schemes differ, are negligible
    for seed in range(3):
        psi = compact_state(zmodel.basis, 4, seed)
        for dt in (20.0, 87.0):
            assert np.max(np.abs(step(psi, zmodel, [e], dt) - dense_step(psi, zmodel, [e], dt))) < 1e-10


def test_step_matches_dense_xy():
    model = hamiltonian_xy(CO, Basis(12), math.pi / 4)
    b = model.basis
    for ket in (b.ket(0, 0), b.ket(1, 1), (b.ket(2, 2) + b.ket(2, -2)) / math.sqrt(2)):
        for fields in ([0.01, 0.0], [0.005, -0.008]):
            diff = step(ket, model, fields, 80.0) - dense_step(ket, model, fields, 80.0)
            assert np.max(np.abs(diff)) < 1e-10


def test_second_order_in_dt(zmodel):
    psi0 = zmodel.basis.ket(0, 0)
    f = lambda t: 0.005 * np.exp(-((t - 1.5e4) ** 2) / (2 * 4e3**2))
    ref = propagate(psi0, zmodel, FieldTrace.from_functions(TimeGrid(3e4, 4096), [f])).final
    errs = [np.linalg.norm(propagate(psi0, zmodel, FieldTrace.from_functions(TimeGrid(3e4, n), [f])).final - ref)
            for n in (128, 256)]
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_reduced_grid_transforms_exact(xymodel):
    prop = Propagator(xymodel, 50.0)
    assert any(b.reduced for b in prop.blocks)
    for b in prop.blocks:
        assert np.allclose(b.A @ b.S, np.eye(b.size), atol=1e-12)


def test_density_matches_kets(xymodel):
    b = xymodel.basis
    grid = TimeGrid(2e4, 100)
    fld = FieldTrace(grid, 0.003 * np.ones((2, 100)))
    kets = [b.ket(0, 0), b.ket(1, -1), (b.ket(1, 0) + 1j * b.ket(3, 0)) / math.sqrt(2)]
    w = [0.5, 0.3, 0.2]
    rho = sum(p * np.outer(k, k.conj()) for p, k in zip(w, kets))
    out = propagate_density(rho, xymodel, fld).final
    finals = [propagate(k, xymodel, fld).final for k in kets]
    expected = sum(p * np.outer(k, k.conj()) for p, k in zip(w, finals))
    assert np.allclose(out, expected, atol=1e-12)
    assert abs(np.trace(out) - 1) < 1e-12


def test_ensemble_roundtrip():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    rho = a @ a.conj().T
    rho /= np.trace(rho)
    ens = Ensemble.from_density(rho)
    assert np.allclose(ens.matrix(), rho, atol=1e-13)
    op = np.diag(np.arange(5.0))
    assert abs(ens.expectation(op) - np.real(np.trace(rho @ op))) < 1e-13


@given(st.integers(0, 2**32 - 1))
def test_backward_is_exact_adjoint(seed):
    # holds for any field strength, truncation losses included
    model = hamiltonian_xy(CO, Basis(5), math.pi / 4)
    rng = np.random.default_rng(seed)
    grid = TimeGrid(2e4, 50)
    fld = FieldTrace(grid, 0.05 * rng.normal(size=(2, 50)))
    psi0 = random_state(model.basis.size, seed)
    chi_t = random_state(model.basis.size, seed + 1)
    lhs = np.vdot(chi_t, propagate(psi0, model, fld).final)
    rhs = np.vdot(propagate_adjoint_backward(chi_t, model, fld)[0], psi0)
    assert abs(lhs - rhs) < 1e-12


def test_backward_inverts_forward_for_weak_fields(zmodel):
    grid = TimeGrid(3e4, 200)
    fld = FieldTrace.from_functions(grid, [lambda t: 0.002 * np.sin(t / 3e3)])
    psi0 = zmodel.basis.ket(0, 0)
    res = propagate(psi0, zmodel, fld, keep_states=True, stride=1)
    chis = propagate_adjoint_backward(res.final, zmodel, fld)
    assert chis.shape == (201, zmodel.basis.size)
    assert np.allclose(chis[0], psi0, atol=1e-10)
    assert np.allclose(chis[100], res.states[100], atol=1e-10)


def test_observers_sampled_with_stride(zmodel):
    grid = TimeGrid(1e4, 100)
    cos = analytic_operator(zmodel.basis, ("z",))
    res = propagate(zmodel.basis.ket(0, 0), zmodel, FieldTrace.zeros(grid),
                    observers={"cos": lambda s: np.real(np.vdot(s, cos @ s))}, stride=10)
    assert res.times.size == 11 and np.allclose(res.series["cos"], 0)


def test_non_finite_state_rejected(zmodel):
    psi = zmodel.basis.ket(0, 0)
    psi[1] = np.nan
    with pytest.raises(PropagationError):
        step(psi, zmodel, [0.0], 1.0)


def test_wrong_channel_count(zmodel):
    with pytest.raises(ConfigurationError):
        propagate(zmodel.basis.ket(0, 0), zmodel, FieldTrace.zeros(TimeGrid(1.0, 4), 2))


def test_propagator_cache_reuses(zmodel):
    assert get_propagator(zmodel, 10.0) is get_propagator(zmodel, 10.0)
