"""Split-operator propagation of kets, ket ensembles and density matrices.

One Strang step is exp(-i H0 dt/2) exp(-i V dt) exp(-i H0 dt/2). Every interaction
term is a multiplication operator in (theta, phi), so exp(-i V dt) is applied as a
diagonal on the angular grid between a synthesis and an analysis transform.

Internally states are kept in the "pre-kick" frame, i.e. after the first half
kinetic factor of the current step; two consecutive half factors are fused into
the transforms. The optimizers work directly in that frame.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigurationError, PropagationError
from .model import HamiltonianModel


@dataclass(frozen=True)
class TimeGrid:
    t_f: float
    n_steps: int

    def __post_init__(self):
        if not self.t_f > 0:
            raise ConfigurationError(f"t_f must be positive, got {self.t_f}")
        if self.n_steps < 2:
            raise ConfigurationError(f"n_steps must be >= 2, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.t_f / self.n_steps

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, self.t_f, self.n_steps + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n_steps) + 0.5) * self.dt

    def shape(self) -> np.ndarray:
        """Update shape sin^2(pi t / t_f) at the step midpoints."""
        return np.sin(np.pi * self.midpoints / self.t_f) ** 2


@dataclass
class FieldTrace:
    """Piecewise-constant control: ``values[c, i]`` acts during step i (sampled at its midpoint)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != self.grid.n_steps:
            raise ConfigurationError(
                f"field has {self.values.shape[1]} samples, time grid has {self.grid.n_steps} steps"
            )
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("field contains non-finite samples")

    @classmethod
    def from_functions(cls, grid: TimeGrid, funcs) -> "FieldTrace":
        t = grid.midpoints
        return cls(grid, np.array([np.asarray(f(t), dtype=float) * np.ones_like(t) for f in funcs]))

    @classmethod
    def zeros(cls, grid: TimeGrid, channels: int = 1) -> "FieldTrace":
        return cls(grid, np.zeros((channels, grid.n_steps)))

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    def copy(self) -> "FieldTrace":
        return FieldTrace(self.grid, self.values.copy())

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass
class Ensemble:
    """Mixed state as sum_k weights[k] |kets[:, k]><kets[:, k]|."""

    kets: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_density(cls, rho: np.ndarray, cutoff: float = 1e-15) -> "Ensemble":
        rho = np.asarray(rho)
        off = rho - np.diag(np.diag(rho))
        if not np.any(off):
            w = np.real(np.diag(rho))
            keep = np.flatnonzero(w > cutoff)
            kets = np.zeros((rho.shape[0], keep.size), dtype=complex)
            kets[keep, np.arange(keep.size)] = 1.0
            return cls(kets, w[keep])
        w, v = np.linalg.eigh(rho)
        keep = w > cutoff
        return cls(v[:, keep].astype(complex), w[keep])

    def matrix(self) -> np.ndarray:
        return (self.kets * self.weights) @ self.kets.conj().T

    def expectation(self, op: np.ndarray) -> float:
        return float(np.real(np.einsum("ik,ij,jk,k->", self.kets.conj(), op, self.kets, self.weights)))


def _mirror_maps(grid) -> dict[str, np.ndarray]:
    """Index permutations of the flattened grid for theta -> pi - theta and phi -> phi + pi."""
    k, l = np.divmod(np.arange(grid.size), grid.n_phi)
    maps = {"theta": (grid.n_theta - 1 - k) * grid.n_phi + l}
    if grid.n_phi % 2 == 0:
        maps["phi"] = k * grid.n_phi + (l + grid.n_phi // 2) % grid.n_phi
    return maps


class _Block:
    """Precomputed transforms for one invariant subspace of the model.

    When every state of the block has the same parity under theta -> pi - theta
    (fixed (-1)^(j+m)) or phi -> phi + pi (fixed (-1)^m) and the couplings share
    that symmetry, only the fundamental part of the grid is kept and its
    quadrature weights are doubled; the transforms stay exact.
    """

    def __init__(self, model: HamiltonianModel, idx: np.ndarray, dt: float):
        self.idx = idx
        basis, grid = model.basis, model.grid
        labels = [basis.labels[i] for i in idx]
        ms = {m for _, m in labels}
        self.theta_only = model.axial and len(ms) == 1
        self.reduced: tuple[str, ...] = ()
        if self.theta_only:
            s = np.stack([grid.theta_part(j, m) for j, m in labels], axis=1)
            w = 2 * np.pi * grid.theta_weights
            vals = np.array([c.grid_values(grid, theta_only=True) for c in model.couplings]).reshape(
                len(model.couplings), -1)
        else:
            s = grid.synthesis(basis, idx)
            w = grid.weights
            vals = np.array([c.grid_values(grid) for c in model.couplings]).reshape(len(model.couplings), -1)
            keep = np.ones(grid.size, dtype=bool)
            k, l = np.divmod(np.arange(grid.size), grid.n_phi)
            parity = {"theta": {(j + m) % 2 for j, m in labels}, "phi": {m % 2 for _, m in labels}}
            half = {"theta": (k < grid.n_theta // 2) & (grid.n_theta % 2 == 0), "phi": l < grid.n_phi // 2}
            for name, perm in _mirror_maps(grid).items():
                if len(parity[name]) == 1 and half[name].any() and np.allclose(vals, vals[:, perm], atol=1e-13):
                    keep &= half[name]
                    w = w * 2.0
                    self.reduced += (name,)
            s, w, vals = s[keep], w[keep], vals[:, keep]
        a = s.conj().T * w[None, :]
        self.S, self.A, self.W = s, a, np.asarray(w, dtype=float)
        self.vals = vals
        self.half = np.exp(-0.5j * dt * model.energies[idx])
        self.A_fwd = (self.half**2)[:, None] * a
        self.S_bwd = s * (self.half.conj() ** 2)[None, :]
        self.ops = [np.ascontiguousarray(c.operator[np.ix_(idx, idx)]) for c in model.couplings]

    @property
    def size(self) -> int:
        return self.idx.size


class Propagator:
    """Block-wise Strang stepping for a fixed model and time step."""

    def __init__(self, model: HamiltonianModel, dt: float):
        self.model = model
        self.dt = dt
        self.blocks = [_Block(model, idx, dt) for idx in model.blocks()]
        self.exponents = np.array([c.exponents for c in model.couplings], dtype=float)

    def monomials(self, fields: np.ndarray) -> np.ndarray:
        """Coupling monomials for field values of shape (channels,) or (channels, n)."""
        f = np.asarray(fields, dtype=float)
        if f.ndim == 1:
            return np.prod(f[None, :] ** self.exponents, axis=1)
        return np.prod(f[None, :, :] ** self.exponents[:, :, None], axis=1)

    # --- frame helpers --------------------------------------------------
    def split(self, x: np.ndarray) -> list[tuple[_Block, np.ndarray, np.ndarray]]:
        """Active (block, columns, sub-array) parts of an (N, K) array."""
        parts = []
        for b in self.blocks:
            sub = x[b.idx]
            cols = np.flatnonzero(np.any(sub != 0, axis=0))
            if cols.size:
                parts.append((b, cols, np.ascontiguousarray(sub[:, cols])))
        return parts

    @staticmethod
    def merge(parts, n: int, k: int) -> np.ndarray:
        out = np.zeros((n, k), dtype=complex)
        for b, cols, xb in parts:
            out[np.ix_(b.idx, cols)] = xb
        return out

    def to_pre(self, parts):
        return [(b, c, b.half[:, None] * x) for b, c, x in parts]

    def from_pre(self, parts):
        return [(b, c, b.half.conj()[:, None] * x) for b, c, x in parts]

    # --- stepping in the pre-kick frame ------------------------------------
    def kick_phase(self, b: _Block, mono: np.ndarray, sign: int = -1) -> np.ndarray:
        return np.exp(sign * 1j * self.dt * (mono @ b.vals))

    def forward(self, b: _Block, x: np.ndarray, mono: np.ndarray) -> np.ndarray:
        return b.A_fwd @ (self.kick_phase(b, mono)[:, None] * (b.S @ x))

    def backward(self, b: _Block, x: np.ndarray, mono: np.ndarray) -> np.ndarray:
        return b.A @ (self.kick_phase(b, mono, +1)[:, None] * (b.S_bwd @ x))


_PROPAGATORS: "OrderedDict[tuple[int, float], Propagator]" = OrderedDict()
_CACHE_SIZE = 6


def get_propagator(model: HamiltonianModel, dt: float) -> Propagator:
    """Propagator for (model, dt), memoized for the few most recent pairs."""
    key = (id(model), float(dt))
    prop = _PROPAGATORS.get(key)
    if prop is None or prop.model is not model:
        prop = Propagator(model, dt)
        _PROPAGATORS[key] = prop
        while len(_PROPAGATORS) > _CACHE_SIZE:
            _PROPAGATORS.popitem(last=False)
    else:
        _PROPAGATORS.move_to_end(key)
    return prop


def _as_matrix(state: np.ndarray) -> tuple[np.ndarray, bool]:
    state = np.asarray(state, dtype=complex)
    if state.ndim == 1:
        return state[:, None], True
    return state, False


def _check_finite(x: np.ndarray, where: str):
    if not np.all(np.isfinite(x)):
        raise PropagationError(f"non-finite state {where}")


def step(state: np.ndarray, model: HamiltonianModel, fields_mid, dt: float) -> np.ndarray:
    """One Strang step of a ket (or of the columns of an (N, K) array)."""
    x, vec = _as_matrix(state)
    _check_finite(x, "before step")
    prop = get_propagator(model, dt)
    mono = prop.monomials(np.atleast_1d(fields_mid))
    parts = prop.to_pre(prop.split(x))
    parts = [(b, c, prop.forward(b, xb, mono)) for b, c, xb in parts]
    out = prop.merge(prop.from_pre(parts), *x.shape)
    return out[:, 0] if vec else out


def dense_step(state: np.ndarray, model: HamiltonianModel, fields_mid, dt: float) -> np.ndarray:
    """Reference step exponentiating the truncated interaction matrix by eigendecomposition."""
    v = model.interaction(fields_mid)
    w, u = np.linalg.eigh(v)
    kick = (u * np.exp(-1j * w * dt)) @ u.conj().T
    half = np.exp(-0.5j * dt * model.energies)
    return half * (kick @ (half * state))


@dataclass
class PropagationResult:
    final: np.ndarray
    times: np.ndarray
    series: dict[str, np.ndarray] = field(default_factory=dict)
    states: list[np.ndarray] | None = None


Observer = Callable[[object], float]


def _run(prop: Propagator, x0: np.ndarray, field: FieldTrace, observe, stride: int, keep_states: bool):
    n, k = x0.shape
    grid = field.grid
    mono_all = prop.monomials(field.values)
    parts = prop.to_pre(prop.split(x0))
    times, samples, states = [], [], []

    def sample(i, parts):
        cur = prop.merge(prop.from_pre(parts), n, k)
        times.append(i * grid.dt)
        samples.append(observe(cur))
        if keep_states:
            states.append(cur)

    sample(0, parts)
    for i in range(grid.n_steps):
        mono = mono_all[:, i]
        parts = [(b, c, prop.forward(b, xb, mono)) for b, c, xb in parts]
        if (i + 1) % stride == 0 or i + 1 == grid.n_steps:
            sample(i + 1, parts)
    final = prop.merge(prop.from_pre(parts), n, k)
    _check_finite(final, "after propagation")
    return final, np.array(times), samples, states


def propagate(state0: np.ndarray, model: HamiltonianModel, field: FieldTrace, time_grid: TimeGrid | None = None,
              observers: Mapping[str, Observer] | None = None, stride: int | None = None,
              keep_states: bool = False) -> PropagationResult:
    """Propagate a ket through the whole time grid, sampling observers every ``stride`` steps."""
    time_grid = time_grid or field.grid
    if field.channels != model.channels:
        raise ConfigurationError(f"field has {field.channels} channels, model needs {model.channels}")
    x0, vec = _as_matrix(state0)
    if x0.shape[0] != model.basis.size:
        raise ConfigurationError(f"state dimension {x0.shape[0]} != basis size {model.basis.size}")
    _check_finite(x0, "at t=0")
    prop = get_propagator(model, time_grid.dt)
    observers = dict(observers or {})
    stride = stride or max(1, time_grid.n_steps // 256)

    def observe(cur):
        s = cur[:, 0] if vec else cur
        return {name: f(s) for name, f in observers.items()}

    final, times, samples, states = _run(prop, x0, field, observe, stride, keep_states)
    series = {name: np.array([s[name] for s in samples]) for name in observers}
    if vec:
        final = final[:, 0]
        states = [s[:, 0] for s in states] if keep_states else None
    return PropagationResult(final, times, series, states if keep_states else None)


def propagate_density(rho0: np.ndarray, model: HamiltonianModel, field: FieldTrace,
                      time_grid: TimeGrid | None = None, observers: Mapping[str, Observer] | None = None,
                      stride: int | None = None, cutoff: float = 1e-15) -> PropagationResult:
    """rho(t) = U rho0 U^dagger, applied to the eigen-decomposition of rho0.

    Eigenvectors with weight below ``cutoff`` are dropped. Observers receive an
    :class:`Ensemble`; the final state is returned as a dense matrix.
    """
    time_grid = time_grid or field.grid
    ens = Ensemble.from_density(rho0, cutoff)
    prop = get_propagator(model, time_grid.dt)
    observers = dict(observers or {})
    stride = stride or max(1, time_grid.n_steps // 256)

    def observe(cur):
        e = Ensemble(cur, ens.weights)
        return {name: f(e) for name, f in observers.items()}

    final, times, samples, _ = _run(prop, ens.kets, field, observe, stride, False)
    series = {name: np.array([s[name] for s in samples]) for name in observers}
    return PropagationResult(Ensemble(final, ens.weights).matrix(), times, series)


def propagate_adjoint_backward(chi_T: np.ndarray, model: HamiltonianModel, field: FieldTrace,
                               time_grid: TimeGrid | None = None) -> np.ndarray:
    """Backward solution of the same equation of motion; returns chi at every step edge, shape (n+1, N)."""
    time_grid = time_grid or field.grid
    x, vec = _as_matrix(chi_T)
    prop = get_propagator(model, time_grid.dt)
    n = time_grid.n_steps
    mono_all = prop.monomials(field.values)
    out = np.zeros((n + 1,) + x.shape, dtype=complex)
    out[n] = x
    parts = prop.to_pre(prop.split(x))
    for i in range(n - 1, -1, -1):
        parts = [(b, c, prop.backward(b, xb, mono_all[:, i])) for b, c, xb in parts]
        # parts now hold chi at the pre-kick point of step i; move to edge t_i
        out[i] = prop.merge(prop.from_pre(parts), *x.shape)
    _check_finite(out[0], "after backward propagation")
    return out[:, :, 0] if vec else out


def revival_time(model: HamiltonianModel) -> float:
    return math.pi / model.B
