"""Real roots of cubic polynomials: closed form plus Newton polishing."""
from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import OptimizationError

_TWO_PI_3 = 2.0 * math.pi / 3.0


def _polish(r: float, a3: float, a2: float, a1: float, a0: float, iters: int = 4) -> float:
    for _ in range(iters):
        f = ((a3 * r + a2) * r + a1) * r + a0
        df = (3.0 * a3 * r + 2.0 * a2) * r + a1
        if df == 0.0 or f == 0.0 or not math.isfinite(f / df):
            break
        nr = r - f / df
        nf = ((a3 * nr + a2) * nr + a1) * nr + a0
        if abs(nf) >= abs(f):
            break
        r = nr
    return r


def _quadratic_roots(q2: float, q1: float, q0: float) -> list[float]:
    if q2 == 0.0:
        return [-q0 / q1] if q1 != 0.0 else []
    disc = q1 * q1 - 4.0 * q2 * q0
    if disc < 0.0:
        return []
    t = -0.5 * (q1 + math.copysign(math.sqrt(disc), q1))
    if t == 0.0:
        return [0.0]
    return [t / q2, q0 / t]


def _closed_form(b: float, c: float, d: float) -> list[float]:
    """Roots of the monic cubic x^3 + b x^2 + c x + d from the depressed form."""
    shift = b / 3.0
    p = c - b * shift
    q = (2.0 * shift * shift - c) * shift + d
    half_q = 0.5 * q
    disc = half_q * half_q + p * p * p / 27.0
    if p < 0.0 and disc < 0.0:
        rad = 2.0 * math.sqrt(-p / 3.0)
        arg = max(-1.0, min(1.0, 3.0 * q / (p * rad)))
        phi = math.acos(arg) / 3.0
        return [rad * math.cos(phi - k * _TWO_PI_3) - shift for k in range(3)]
    sq = math.sqrt(max(disc, 0.0))
    u = -half_q + sq if half_q <= 0 else -half_q - sq
    u = math.copysign(abs(u) ** (1.0 / 3.0), u)
    v = -p / (3.0 * u) if u != 0.0 else 0.0
    return [u + v - shift]


def _scale_exponent(a3: float, a2: float, a1: float, a0: float) -> int:
    """Power of two near the root magnitude bound max |a_k/a3|^(1/(3-k))."""
    la3 = math.log2(abs(a3))
    logs = [(math.log2(abs(a)) - la3) / (3 - k) for k, a in ((2, a2), (1, a1), (0, a0)) if a != 0.0]
    return round(max(logs))


def real_roots_cubic(a3: float, a2: float, a1: float, a0: float) -> list[float]:
    """Sorted real roots of a3 x^3 + a2 x^2 + a1 x + a0 (a3 != 0), repeated roots merged.

    The variable is rescaled by a power of two so the monic coefficients are O(1); this
    keeps the closed form free of overflow and underflow for any finite input. One root
    from the closed form is polished and deflated, the remaining quadratic is solved in
    the cancellation-free form, and every root is polished again.
    """
    coeffs = (a3, a2, a1, a0)
    if not all(math.isfinite(c) for c in coeffs):
        raise OptimizationError(f"non-finite cubic coefficients {coeffs}")
    if a3 == 0.0:
        raise OptimizationError("leading coefficient of the cubic vanishes")
    if a2 == a1 == a0 == 0.0:
        return [0.0]
    e = _scale_exponent(*coeffs)
    b, c, d = (math.ldexp(a, -e * (3 - k)) / a3 for k, a in ((2, a2), (1, a1), (0, a0)))
    if d == 0.0:
        ys = [0.0] + _quadratic_roots(1.0, b, c)
    else:
        first = max(_closed_form(b, c, d), key=abs)
        r = _polish(first, 1.0, b, c, d, iters=12)
        if r == 0.0:
            r = first
        # deflate from the end that keeps the division well conditioned
        if abs(r) >= math.sqrt(abs(d / r)):
            q0 = -d / r
            q1 = (q0 - c) / r
            q2 = (q1 - b) / r
        else:
            q2 = 1.0
            q1 = b + r
            q0 = c + r * q1
        ys = [r] + _quadratic_roots(q2, q1, q0)
    ys = sorted(_polish(y, 1.0, b, c, d, iters=12) for y in ys)
    merged = [ys[0]]
    for y in ys[1:]:
        if abs(y - merged[-1]) > 1e-13 * max(1.0, abs(y)):
            merged.append(y)
    # a last step in x recovers digits lost when a scaled root is subnormal
    return [_polish(math.ldexp(y, e), a3, a2, a1, a0, iters=2) for y in merged]


def cubic_residual(x: float, a3: float, a2: float, a1: float, a0: float) -> float:
    return abs(((a3 * x + a2) * x + a1) * x + a0)


@dataclass(frozen=True)
class CubicUpdateProblem:
    """Stationarity condition of the quartic penalty in the shifted variable u = E_new - E_old.

    ``lead`` is 4*lam/S(t). The coupling bracket is 2*Im<chi|dH/dE(E_new)|psi>, written
    as im2*E_new^2 + im1*E_new + im0 (each im_k already includes the factor 2 and the
    polynomial derivative weights).
    """

    lead: float
    e_old: float
    im2: float
    im1: float
    im0: float

    def coefficients(self) -> tuple[float, float, float, float]:
        e = self.e_old
        return (
            self.lead,
            -self.im2,
            -(2.0 * e * self.im2 + self.im1),
            -((self.im2 * e + self.im1) * e + self.im0),
        )

    def roots(self) -> list[float]:
        """Real roots as absolute field values, ordered by closeness to ``e_old``."""
        if not self.lead > 0.0:
            raise OptimizationError(f"leading coefficient must be positive, got {self.lead}")
        us = real_roots_cubic(*self.coefficients())
        return [self.e_old + u for u in sorted(us, key=lambda u: (abs(u), abs(self.e_old + u)))]

    def residual(self, e_new: float) -> float:
        return cubic_residual(e_new - self.e_old, *self.coefficients())


def solve_cubic_update(problem: CubicUpdateProblem) -> float:
    """Real root closest to the previous field value; ties go to the smaller |E_new|."""
    return problem.roots()[0]
