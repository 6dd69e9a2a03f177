"""Exact limit quantities under the canonical measure of super-Brownian motion.

Branching and diffusion parameters are both one.  The total-mass law at time
b > 0 has density (2/b)^2 e^{-2x/b} on (0, infinity), which yields closed
forms for the survival mass, tail weights, polynomial moments and truncated
exponential moments.  Joint Fourier moments (the limits of the r-point
functions) are computed by the binary branching recursion

    M^(l)(t, k) = integral_0^{min t} e^{-|K|^2 s / 2}
                  sum over unordered splits {I, I^c}
                  M^(|I|)(t_I - s, k_I) * M^(l-|I|)(t_Ic - s, k_Ic) ds,

with K the sum of all frequencies and M^(1)_t(k) = e^{-|k|^2 t / 2}.  The
recursion's normalization is pinned by the total-mass moments: at zero
frequency and equal times b it reproduces p! (b/2)^(p-1) for every order p,
which the test suite checks, alongside agreement with the lattice Monte
Carlo at large n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class DivergenceError(ValueError):
    """Raised when a requested exponential moment is infinite."""


class QuadratureError(RuntimeError):
    """Raised when adaptive quadrature cannot reach tolerance at max depth."""


@dataclass(frozen=True)
class MomentSpec:
    """Times and Fourier frequencies selecting a mixed moment.

    ``times`` has length l = r - 1 >= 1 with all entries positive;
    ``freqs`` holds one real d-vector per time.
    """

    times: tuple
    freqs: tuple

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        freqs = tuple(tuple(float(v) for v in np.atleast_1d(k)) for k in self.freqs)
        if len(times) != len(freqs):
            raise ValueError("times and freqs must have equal length")
        if len(times) == 0:
            raise ValueError("a moment spec selects at least one time")
        if any(t <= 0 for t in times):
            raise ValueError("all times must be positive")
        dims = {len(k) for k in freqs}
        if len(dims) != 1:
            raise ValueError("all frequencies must share one dimension")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "freqs", freqs)

    @property
    def order(self) -> int:
        return len(self.times)

    @property
    def dimension(self) -> int:
        return len(self.freqs[0])

    @property
    def all_zero_freq(self) -> bool:
        return all(v == 0.0 for k in self.freqs for v in k)


@dataclass(frozen=True)
class QuadratureConfig:
    tolerance: float = 1e-8
    max_depth: int = 30
    rule: str = "simpson"

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("quadrature tolerance must be positive")
        if self.rule != "simpson":
            raise ValueError(f"unknown panel rule {self.rule!r}")


def mass_density(b: float, x: float) -> float:
    """Density of the total mass at time b on (0, infinity)."""
    if b <= 0:
        raise ValueError("time b must be positive")
    if x <= 0:
        raise ValueError("mass x must be positive")
    return (2.0 / b) ** 2 * math.exp(-2.0 * x / b)


def mass_tail(b: float, lam: float) -> float:
    """Canonical weight of {total mass at time b > lam}."""
    if b <= 0:
        raise ValueError("time b must be positive")
    if lam < 0:
        raise ValueError("threshold must be nonnegative")
    return (2.0 / b) * math.exp(-2.0 * lam / b)


def survival_mass(eps: float) -> float:
    """Canonical weight of survival past eps: 2/eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return 2.0 / eps


def mass_moment(b: float, p: int) -> float:
    """p-th moment of the mass law: p! (b/2)^(p-1)."""
    if b <= 0:
        raise ValueError("time b must be positive")
    if p < 1:
        raise ValueError("moment order must be >= 1")
    return math.factorial(p) * (b / 2.0) ** (p - 1)


def exp_moment_truncated(eps: float, theta: float) -> float:
    """E[e^{theta X_eps(1)} on survival] = 4 / (eps (2 - eps theta)).

    Diverges at theta >= 2/eps, the exact boundary of finiteness.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if theta >= 2.0 / eps:
        raise DivergenceError(f"exponential moment diverges for theta >= {2.0 / eps!r}")
    return 4.0 / (eps * (2.0 - eps * theta))


# ---------------------------------------------------------------------------
# Joint Fourier moment functions
# ---------------------------------------------------------------------------


def _adaptive_simpson(f, a: float, b: float, tol: float, max_depth: int) -> float:
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return _simpson_rec(f, a, b, fa, fm, fb, whole, tol, max_depth)


def _simpson_rec(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm = 0.5 * (a + m)
    rm = 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    delta = left + right - whole
    if abs(delta) <= 15.0 * tol:
        return left + right + delta / 15.0
    if depth <= 0:
        raise QuadratureError("tolerance unreachable at max recursion depth")
    half = 0.5 * tol
    return (_simpson_rec(f, a, m, fa, flm, fm, left, half, depth - 1)
            + _simpson_rec(f, m, b, fm, frm, fb, right, half, depth - 1))


def _splits(l: int):
    """Unordered proper splits {I, I^c} of range(l), as index tuples."""
    out = []
    rest = list(range(1, l))
    for mask in range(1 << (l - 1)):
        left = [0] + [rest[i] for i in range(l - 1) if mask >> i & 1]
        if len(left) == l:
            continue
        right = [i for i in range(l) if i not in left]
        out.append((tuple(left), tuple(right)))
    return out


_INNER_TOL_FACTOR = 0.1
_MIN_TOL = 1e-13


def _moment(times, freqs, tol, max_depth):
    l = len(times)
    if l == 1:
        k = freqs[0]
        k2 = sum(v * v for v in k)
        return math.exp(-0.5 * k2 * times[0])
    tmin = min(times)
    if tmin <= 0.0:
        # continuous extension at the branch-time boundary
        return 0.0
    total = [0.0] * len(freqs[0])
    for k in freqs:
        for j, v in enumerate(k):
            total[j] += v
    c = 0.5 * sum(v * v for v in total)
    inner = max(tol * _INNER_TOL_FACTOR, _MIN_TOL)
    splits = _splits(l)

    def integrand(s):
        acc = 0.0
        for left, right in splits:
            tl = tuple(times[i] - s for i in left)
            tr = tuple(times[i] - s for i in right)
            kl = tuple(freqs[i] for i in left)
            kr = tuple(freqs[i] for i in right)
            acc += (_moment(tl, kl, inner, max_depth)
                    * _moment(tr, kr, inner, max_depth))
        return math.exp(-c * s) * acc

    return _adaptive_simpson(integrand, 0.0, tmin, tol, max_depth)


def moment_function(spec: MomentSpec, quad: Optional[QuadratureConfig] = None) -> complex:
    """Joint Fourier moment of the canonical measure at the spec's times.

    Real-valued (the moment measures are symmetric); returned as complex for
    interface uniformity with the empirical estimators.
    """
    if quad is None:
        quad = QuadratureConfig()
    value = _moment(spec.times, spec.freqs, quad.tolerance, quad.max_depth)
    return complex(value)


def conditional_mass_cdf(b: float, eps: float):
    """CDF of the mass at time b restricted to survival past eps (b >= eps).

    For b = eps this is Exp(mean b/2); for b > eps the restriction adds an
    atom at zero of weight 1 - eps/b (paths dead in (eps, b]).
    """
    if eps <= 0 or b <= 0:
        raise ValueError("b and eps must be positive")
    if b < eps:
        raise ValueError("no closed-form conditional law for b < eps")
    dead = 1.0 - eps / b

    def cdf(x):
        x = np.asarray(x, dtype=np.float64)
        out = dead + (eps / b) * (1.0 - np.exp(-2.0 * x / b))
        return np.where(x < 0, 0.0, out)

    return cdf
