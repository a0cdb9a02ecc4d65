"""Truncated |j,m> basis, angular multiplication operators and the quadrature grid.

Operators are built two ways: analytically (recursion formulas for cos(theta) and
sin(theta) exp(+-i phi), multiplied in a padded basis and truncated) and by exact
Gauss-Legendre x trapezoid quadrature on an (theta, phi) grid. The two agree to
machine precision as long as the grid is fine enough for the function degree.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.special import sph_harm_y

from .errors import ConfigurationError


@dataclass(frozen=True)
class Basis:
    """Rigid-rotor basis truncated at ``j_max``.

    With ``m=None`` the full space of (j_max+1)**2 states is used, grouped by m
    (m = -j_max..j_max) with ascending j inside each group. With an integer
    ``m`` only the fixed-m subspace (j = |m|..j_max) is kept.
    """

    j_max: int
    m: int | None = None

    def __post_init__(self):
        if self.j_max < 0:
            raise ConfigurationError(f"j_max must be >= 0, got {self.j_max}")
        if self.m is not None and abs(self.m) > self.j_max:
            raise ConfigurationError(f"|m|={abs(self.m)} exceeds j_max={self.j_max}")

    @cached_property
    def labels(self) -> tuple[tuple[int, int], ...]:
        ms = range(-self.j_max, self.j_max + 1) if self.m is None else (self.m,)
        return tuple((j, m) for m in ms for j in range(abs(m), self.j_max + 1))

    @cached_property
    def _lookup(self) -> dict[tuple[int, int], int]:
        return {lab: i for i, lab in enumerate(self.labels)}

    @property
    def size(self) -> int:
        return len(self.labels)

    @cached_property
    def j(self) -> np.ndarray:
        return np.array([lab[0] for lab in self.labels])

    @cached_property
    def mq(self) -> np.ndarray:
        return np.array([lab[1] for lab in self.labels])

    def index(self, j: int, m: int) -> int:
        try:
            return self._lookup[(j, m)]
        except KeyError:
            raise KeyError(f"|{j},{m}> not in basis (j_max={self.j_max}, m={self.m})") from None

    def ket(self, j: int, m: int) -> np.ndarray:
        v = np.zeros(self.size, dtype=complex)
        v[self.index(j, m)] = 1.0
        return v

    def padded(self, extra: int) -> "Basis":
        return Basis(self.j_max + extra, self.m)

    def embedding(self, larger: "Basis") -> np.ndarray:
        """Indices of this basis' kets inside ``larger``."""
        return np.array([larger.index(j, m) for j, m in self.labels])


def j_squared(basis: Basis) -> np.ndarray:
    j = basis.j.astype(float)
    return np.diag(j * (j + 1))


def jz(basis: Basis) -> np.ndarray:
    return np.diag(basis.mq.astype(float))


def _cos_coef(j, m):
    # <j+1,m|cos|j,m>
    return np.sqrt(((j + 1) ** 2 - m**2) / ((2 * j + 1) * (2 * j + 3)))


def cos_theta_matrix(basis: Basis) -> np.ndarray:
    """Real symmetric matrix of cos(theta); couples j <-> j+-1 at equal m."""
    n = basis.size
    out = np.zeros((n, n))
    for a, (j, m) in enumerate(basis.labels):
        if j + 1 <= basis.j_max:
            b = basis.index(j + 1, m)
            out[a, b] = out[b, a] = _cos_coef(j, m)
    return out


def sin_theta_exp_matrix(basis: Basis, sign: int) -> np.ndarray:
    """Matrix of sin(theta) exp(sign*i*phi), Condon-Shortley phase convention."""
    if basis.m is not None:
        raise ConfigurationError("sin(theta) exp(+-i phi) changes m; needs the full basis")
    n = basis.size
    out = np.zeros((n, n))
    for a, (j, m) in enumerate(basis.labels):
        mp = m + sign
        if sign > 0:
            up = -np.sqrt((j + m + 1) * (j + m + 2) / ((2 * j + 1) * (2 * j + 3)))
            down = np.sqrt((j - m) * (j - m - 1) / ((2 * j - 1) * (2 * j + 1))) if j > 0 else 0.0
        else:
            up = np.sqrt((j - m + 1) * (j - m + 2) / ((2 * j + 1) * (2 * j + 3)))
            down = -np.sqrt((j + m) * (j + m - 1) / ((2 * j - 1) * (2 * j + 1))) if j > 0 else 0.0
        if j + 1 <= basis.j_max:
            out[basis.index(j + 1, mp), a] = up
        if j - 1 >= abs(mp) and down != 0.0:
            out[basis.index(j - 1, mp), a] = down
    return out


def cos_theta_x_matrix(basis: Basis) -> np.ndarray:
    """sin(theta) cos(phi); real symmetric, Delta m = +-1."""
    return 0.5 * (sin_theta_exp_matrix(basis, +1) + sin_theta_exp_matrix(basis, -1))


def cos_theta_y_matrix(basis: Basis) -> np.ndarray:
    """sin(theta) sin(phi); imaginary Hermitian, Delta m = +-1."""
    return (sin_theta_exp_matrix(basis, +1) - sin_theta_exp_matrix(basis, -1)) / 2j


_FACTOR_BUILDERS = {"z": cos_theta_matrix, "x": cos_theta_x_matrix, "y": cos_theta_y_matrix}


def analytic_operator(basis: Basis, factors: Sequence[str]) -> np.ndarray:
    """Product of direction cosines ('x', 'y', 'z') built at j_max+len(factors), then truncated."""
    if not factors:
        return np.eye(basis.size)
    big = basis.padded(len(factors))
    prod = None
    for f in factors:
        mat = _FACTOR_BUILDERS[f](big)
        prod = mat if prod is None else prod @ mat
    keep = basis.embedding(big)
    return prod[np.ix_(keep, keep)]


@dataclass(frozen=True)
class AngularFunction:
    """A polynomial in the direction cosines, usable on the grid or analytically."""

    label: str
    factors: tuple[str, ...]
    func: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray] = field(compare=False, repr=False)

    @property
    def degree(self) -> int:
        return len(self.factors)

    @property
    def axial(self) -> bool:
        return all(f == "z" for f in self.factors)

    def __call__(self, cos_t, sin_t, phi):
        return self.func(cos_t, sin_t, phi)


ONE = AngularFunction("1", (), lambda c, s, p: np.ones_like(c))
COS = AngularFunction("cos", ("z",), lambda c, s, p: c)
COS2 = AngularFunction("cos2", ("z", "z"), lambda c, s, p: c**2)
COS3 = AngularFunction("cos3", ("z", "z", "z"), lambda c, s, p: c**3)
COSX = AngularFunction("cosx", ("x",), lambda c, s, p: s * np.cos(p))
COSY = AngularFunction("cosy", ("y",), lambda c, s, p: s * np.sin(p))
COS2X = AngularFunction("cos2x", ("x", "x"), lambda c, s, p: (s * np.cos(p)) ** 2)
COS2Y = AngularFunction("cos2y", ("y", "y"), lambda c, s, p: (s * np.sin(p)) ** 2)
COSXCOSY = AngularFunction("cosxcosy", ("x", "y"), lambda c, s, p: s**2 * np.cos(p) * np.sin(p))

FUNCTIONS = {f.label: f for f in (ONE, COS, COS2, COS3, COSX, COSY, COS2X, COS2Y, COSXCOSY)}


class AngularGrid:
    """Gauss-Legendre nodes in cos(theta) times a uniform phi grid.

    ``synthesis(basis)`` maps coefficients to grid values of sum c_jm Y_jm and
    ``analysis(basis)`` is its quadrature adjoint, so ``analysis @ synthesis``
    is the identity whenever n_theta >= j_max + 1 and n_phi >= 2*j_max + 1.
    """

    def __init__(self, j_max: int, n_theta: int | None = None, n_phi: int | None = None):
        self.j_max = j_max
        self.n_theta = 2 * (j_max + 4) if n_theta is None else int(n_theta)
        self.n_phi = 4 * (j_max + 1) if n_phi is None else int(n_phi)
        if self.n_theta < j_max + 1 or self.n_phi < 2 * j_max + 1:
            raise ConfigurationError(
                f"grid {self.n_theta}x{self.n_phi} too coarse for j_max={j_max} "
                f"(need n_theta >= {j_max + 1}, n_phi >= {2 * j_max + 1})"
            )
        x, w = np.polynomial.legendre.leggauss(self.n_theta)
        self.cos_theta = x
        self.theta_weights = w
        self.theta = np.arccos(x)
        self.phi = 2 * np.pi * np.arange(self.n_phi) / self.n_phi
        # flattened 2D grid, theta-major
        self.grid_cos = np.repeat(x, self.n_phi)
        self.grid_sin = np.sqrt(1.0 - self.grid_cos**2)
        self.grid_phi = np.tile(self.phi, self.n_theta)
        self.weights = np.repeat(w, self.n_phi) * (2 * np.pi / self.n_phi)
        self._theta_cache: dict[tuple[int, int], np.ndarray] = {}

    @property
    def size(self) -> int:
        return self.n_theta * self.n_phi

    def check_exact(self, j_max: int, degree: int):
        """Raise unless products Y*_j'm' f Y_jm integrate exactly for f of ``degree``."""
        need_theta = j_max + (degree + 2) // 2
        need_phi = 2 * j_max + degree + 1
        if self.n_theta < need_theta or self.n_phi < need_phi:
            raise ConfigurationError(
                f"grid {self.n_theta}x{self.n_phi} cannot integrate degree-{degree} couplings "
                f"exactly at j_max={j_max} (need {need_theta}x{need_phi})"
            )

    def theta_part(self, j: int, m: int) -> np.ndarray:
        """Y_jm(theta_k, 0), real."""
        key = (j, m)
        if key not in self._theta_cache:
            self._theta_cache[key] = np.real(sph_harm_y(j, m, self.theta, 0.0))
        return self._theta_cache[key]

    def theta_synthesis(self, basis: Basis) -> np.ndarray:
        """Real (n_theta, N) matrix for a fixed-m basis, phi factor dropped."""
        if basis.m is None:
            raise ConfigurationError("theta-only transform needs a fixed-m basis")
        return np.stack([self.theta_part(j, m) for j, m in basis.labels], axis=1)

    def theta_analysis(self, basis: Basis) -> np.ndarray:
        return (self.theta_synthesis(basis) * (2 * np.pi * self.theta_weights)[:, None]).T

    def synthesis(self, basis: Basis, columns: Sequence[int] | None = None) -> np.ndarray:
        labels = basis.labels if columns is None else [basis.labels[c] for c in columns]
        out = np.empty((self.size, len(labels)), dtype=complex)
        phase = {}
        for c, (j, m) in enumerate(labels):
            if m not in phase:
                phase[m] = np.exp(1j * m * self.phi)
            out[:, c] = np.outer(self.theta_part(j, m), phase[m]).ravel()
        return out

    def analysis(self, basis: Basis, columns: Sequence[int] | None = None) -> np.ndarray:
        return self.synthesis(basis, columns).conj().T * self.weights[None, :]

    def values(self, f: AngularFunction) -> np.ndarray:
        return f(self.grid_cos, self.grid_sin, self.grid_phi)

    def theta_values(self, f: AngularFunction) -> np.ndarray:
        if not f.axial:
            raise ConfigurationError(f"{f.label} depends on phi")
        return f(self.cos_theta, np.sqrt(1 - self.cos_theta**2), np.zeros_like(self.cos_theta))


def multiplication_operator(basis: Basis, grid: AngularGrid, f: AngularFunction) -> np.ndarray:
    """Matrix <j'm'|f|jm> by quadrature. Real for phi-independent f."""
    grid.check_exact(basis.j_max, f.degree)
    if basis.m is not None:
        if not f.axial:
            raise ConfigurationError(f"{f.label} couples different m; fixed-m basis given")
        s = grid.theta_synthesis(basis)
        mat = grid.theta_analysis(basis) @ (grid.theta_values(f)[:, None] * s)
        return 0.5 * (mat + mat.T)
    s = grid.synthesis(basis)
    mat = grid.analysis(basis) @ (grid.values(f)[:, None] * s)
    mat = 0.5 * (mat + mat.conj().T)
    if f.axial:
        return mat.real.copy()
    return mat


def grid_transform(state: np.ndarray, basis: Basis, grid: AngularGrid, direction: str = "forward") -> np.ndarray:
    """forward: basis coefficients -> grid values; inverse: grid values -> coefficients."""
    state = np.asarray(state)
    if direction == "forward":
        if state.shape[0] != basis.size:
            raise ConfigurationError(f"state has {state.shape[0]} entries, basis has {basis.size}")
        return grid.synthesis(basis) @ state
    if direction == "inverse":
        if state.shape[0] != grid.size:
            raise ConfigurationError(f"grid vector has {state.shape[0]} entries, grid has {grid.size}")
        return grid.analysis(basis) @ state
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
