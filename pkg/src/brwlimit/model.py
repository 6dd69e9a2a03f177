"""Critical branching random walk on Z^d.

Offspring laws (mean one, finite variance gamma), symmetric lattice step
kernels, generation-by-generation simulation from a single ancestor at the
origin, and an exact recursion for small-case joint Fourier moments that
serves as the Monte Carlo oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

_TOL = 1e-12
MAX_PMF_SUPPORT = 64  # offspring counts 0..64


class BudgetError(ValueError):
    """Raised when an exact-oracle request exceeds the computational budget."""


@dataclass(frozen=True, eq=False)
class OffspringLaw:
    """Critical offspring distribution stored as an explicit pmf table.

    ``pmf[j]`` is the probability of ``j`` offspring.  The mean must be one
    (within 1e-12); ``variance_gamma`` is the pmf's variance and must be
    positive unless the law was built with ``allow_degenerate`` (test mode).
    Sampling is inverse-CDF on the table for platform-independent
    reproducibility.
    """

    kind: str
    pmf: np.ndarray
    mean: float = field(init=False)
    variance_gamma: float = field(init=False)
    cdf: np.ndarray = field(init=False)
    allow_degenerate: bool = False

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=np.float64)
        object.__setattr__(self, "pmf", pmf)
        if pmf.ndim != 1 or len(pmf) == 0:
            raise ValueError("pmf must be a nonempty 1-d table")
        if len(pmf) > MAX_PMF_SUPPORT + 1:
            raise ValueError(f"pmf support capped at {MAX_PMF_SUPPORT}")
        if np.any(pmf < 0):
            raise ValueError("pmf entries must be nonnegative")
        total = float(np.sum(pmf))
        if abs(total - 1.0) > _TOL:
            raise ValueError(f"pmf must sum to 1 within {_TOL}, got {total!r}")
        j = np.arange(len(pmf), dtype=np.float64)
        mean = float(np.sum(j * pmf))
        if abs(mean - 1.0) > _TOL:
            raise ValueError(f"offspring mean must be 1 within {_TOL}, got {mean!r} (criticality)")
        var = float(np.sum((j - 1.0) ** 2 * pmf))
        if var <= 0.0 and not self.allow_degenerate:
            raise ValueError("variance gamma must be positive outside test mode")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance_gamma", var)
        object.__setattr__(self, "cdf", np.cumsum(pmf))

    @classmethod
    def binary(cls) -> "OffspringLaw":
        """p(0) = p(2) = 1/2, gamma = 1."""
        return cls("binary", np.array([0.5, 0.0, 0.5]))

    @classmethod
    def poisson_one(cls) -> "OffspringLaw":
        """Poisson with mean 1 (gamma = 1), truncated far below 1e-12 mass."""
        j = np.arange(35)
        pmf = np.exp(-1.0) / np.array([math.factorial(int(v)) for v in j], dtype=np.float64)
        return cls("poisson_one", pmf)

    @classmethod
    def geometric(cls) -> "OffspringLaw":
        """p(j) = 2^-(j+1), gamma = 2, truncated at the support cap."""
        j = np.arange(MAX_PMF_SUPPORT + 1)
        return cls("geometric", 0.5 ** (j + 1.0))

    @classmethod
    def custom(cls, pmf, allow_degenerate: bool = False) -> "OffspringLaw":
        return cls("custom", np.asarray(pmf, dtype=np.float64), allow_degenerate=allow_degenerate)

    @classmethod
    def deterministic_one(cls) -> "OffspringLaw":
        """Exactly one offspring (gamma = 0); allowed in test mode only."""
        return cls("custom", np.array([0.0, 1.0]), allow_degenerate=True)

    def factorial_moment(self, q: int) -> float:
        """E[N (N-1) ... (N-q+1)]; q = 1 gives the mean."""
        j = np.arange(len(self.pmf), dtype=np.float64)
        fac = np.ones_like(j)
        for i in range(q):
            fac *= np.maximum(j - i, 0.0)
        return float(np.sum(fac * self.pmf))

    def sample_counts(self, uniforms: np.ndarray) -> np.ndarray:
        """Inverse-CDF offspring counts from uniform draws."""
        idx = np.searchsorted(self.cdf, uniforms, side="right")
        return np.minimum(idx, len(self.pmf) - 1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class StepKernel:
    """Symmetric lattice displacement law.

    ``nearest_neighbor``: uniform on the 2d unit vectors.
    ``spread_out_box``: uniform on ([-L, L]^d intersect Z^d) \\ {0}.

    ``support`` lists the sites in lexicographic order; sampling picks a
    uniform index via ``floor(u * len(support))``.
    """

    kind: str
    dimension: int
    radius: int = 0
    support: np.ndarray = field(init=False)
    per_coordinate_variance: float = field(init=False)

    def __post_init__(self):
        d = self.dimension
        if d < 1:
            raise ValueError("dimension must be a positive integer")
        if self.kind == "nearest_neighbor":
            sites = []
            for j in range(d):
                for s in (-1, 1):
                    e = [0] * d
                    e[j] = s
                    sites.append(e)
            support = np.array(sorted(sites), dtype=np.int64)
            var = 1.0 / d
        elif self.kind == "spread_out_box":
            L = self.radius
            if L < 1:
                raise ValueError("spread-out box radius must be >= 1")
            axes = np.arange(-L, L + 1, dtype=np.int64)
            grid = np.stack(np.meshgrid(*([axes] * d), indexing="ij"), axis=-1).reshape(-1, d)
            nonzero = np.any(grid != 0, axis=1)
            support = grid[nonzero]
            n_sites = len(support)
            # sum over the full box of y_1^2 equals (2L+1)^d * L(L+1)/3
            var = ((2 * L + 1) ** d) * L * (L + 1) / (3.0 * n_sites)
        else:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "per_coordinate_variance", var)

    @classmethod
    def nearest_neighbor(cls, dimension: int) -> "StepKernel":
        return cls("nearest_neighbor", dimension)

    @classmethod
    def spread_out_box(cls, dimension: int, radius: int) -> "StepKernel":
        return cls("spread_out_box", dimension, radius)

    @property
    def max_coordinate(self) -> int:
        return 1 if self.kind == "nearest_neighbor" else self.radius

    def char(self, u) -> float:
        """Characteristic function D(u) = E[cos(u . step)]; real, |D| <= 1."""
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.dimension,):
            raise ValueError(f"frequency has shape {u.shape}, kernel dimension is {self.dimension}")
        if self.kind == "nearest_neighbor":
            return float(np.sum(np.cos(u)) / self.dimension)
        L = self.radius
        # separable Dirichlet product over the full box, origin removed
        a = np.arange(1, L + 1, dtype=np.float64)
        per_axis = 1.0 + 2.0 * np.array([np.sum(np.cos(a * uj)) for uj in u])
        n_sites = len(self.support)
        return float((np.prod(per_axis) - 1.0) / n_sites)


def step_char(kernel: StepKernel, u) -> float:
    """Characteristic function of the step law at frequency ``u``."""
    return kernel.char(u)


@dataclass
class ParticleConfiguration:
    """One generation's occupancy: lattice site -> particle count (>= 1)."""

    generation: int
    occupancy: dict

    @property
    def total(self) -> int:
        return sum(self.occupancy.values())

    @property
    def is_extinct(self) -> bool:
        return not self.occupancy

    @classmethod
    def single_ancestor(cls, dimension: int) -> "ParticleConfiguration":
        return cls(0, {(0,) * dimension: 1})

    def sorted_sites(self) -> list:
        return sorted(self.occupancy)


@dataclass
class Trajectory:
    """A branching random walk path, truncated at the first extinct generation.

    ``configurations[m]`` is generation ``m``; if extinction occurred the last
    entry is the (empty) extinct generation and ``extinct_at`` records it.
    """

    configurations: list
    horizon: int
    law: OffspringLaw
    kernel: StepKernel
    extinct_at: Optional[int] = None
    master_seed: Optional[int] = None
    replicate: Optional[int] = None

    def counts(self) -> np.ndarray:
        return np.array([c.total for c in self.configurations], dtype=np.int64)


def step_generation(config: ParticleConfiguration, law: OffspringLaw,
                    kernel: StepKernel, stream) -> ParticleConfiguration:
    """Advance one generation: every particle is replaced by its offspring.

    Stream layout (shared with the batched engines): one uniform per particle
    for the offspring count, particles taken in lexicographic site order, then
    one uniform per offspring for its step, offspring in parent order.
    """
    if config.is_extinct:
        raise ValueError("cannot step an extinct configuration")
    sites = np.array(config.sorted_sites(), dtype=np.int64)
    mult = np.array([config.occupancy[tuple(s)] for s in sites], dtype=np.int64)
    parent_sites = np.repeat(sites, mult, axis=0)
    z = len(parent_sites)

    counts = law.sample_counts(stream.uniforms(z))
    z_new = int(counts.sum())
    if z_new == 0:
        return ParticleConfiguration(config.generation + 1, {})

    steps_u = stream.uniforms(z_new)
    n_sites = len(kernel.support)
    idx = np.minimum((steps_u * n_sites).astype(np.int64), n_sites - 1)
    children = np.repeat(parent_sites, counts, axis=0) + kernel.support[idx]

    uniq, cnt = np.unique(children, axis=0, return_counts=True)
    occupancy = {tuple(int(v) for v in row): int(c) for row, c in zip(uniq, cnt)}
    return ParticleConfiguration(config.generation + 1, occupancy)


def simulate(law: OffspringLaw, kernel: StepKernel, horizon: int, stream,
             master_seed: Optional[int] = None, replicate: Optional[int] = None) -> Trajectory:
    """Run from a single ancestor at the origin until extinction or horizon."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    config = ParticleConfiguration.single_ancestor(kernel.dimension)
    configs = [config]
    extinct_at = None
    for _ in range(horizon):
        config = step_generation(config, law, kernel, stream)
        configs.append(config)
        if config.is_extinct:
            extinct_at = config.generation
            break
    return Trajectory(configs, horizon, law, kernel, extinct_at, master_seed, replicate)


def extinction_probability(law: OffspringLaw, generations: int) -> float:
    """Exact P(no particles at generation m), by iterating the offspring pgf."""
    if generations < 0:
        raise ValueError("generations must be nonnegative")
    j = np.arange(len(law.pmf), dtype=np.float64)
    q = 0.0
    for _ in range(generations):
        q = float(np.sum(law.pmf * q ** j))
    return q


# ---------------------------------------------------------------------------
# Exact small-case oracle
# ---------------------------------------------------------------------------

_ORACLE_MAX_FACTORS = 4
_ORACLE_MAX_GEN = 4096


def _set_partitions(indices):
    """All partitions of ``indices`` into unordered nonempty blocks."""
    if not indices:
        yield []
        return
    first, rest = indices[0], indices[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def exact_small_oracle(law: OffspringLaw, kernel: StepKernel, gens, freqs) -> complex:
    """Exact joint Fourier moment E[prod_i sum_{x at gen m_i} e^{i k_i . x}].

    Computed by a first-step recursion over set partitions of the factors,
    with no Monte Carlo error.  The recursion costs O(2^l * max(m)) states,
    so the budget admits any desk-scale request (l <= 4, m <= 4096); repeated
    generations (e.g. squared counts) are expressed by repeating entries.
    """
    gens = [int(m) for m in gens]
    freqs = [tuple(float(v) for v in np.atleast_1d(k)) for k in freqs]
    if len(gens) != len(freqs):
        raise ValueError("gens and freqs must have equal length")
    if len(gens) == 0:
        return complex(1.0)
    if len(gens) > _ORACLE_MAX_FACTORS:
        raise BudgetError(f"oracle supports at most {_ORACLE_MAX_FACTORS} factors")
    if any(m < 0 for m in gens):
        raise ValueError("generations must be nonnegative")
    if max(gens) > _ORACLE_MAX_GEN:
        raise BudgetError(f"oracle generation budget is {_ORACLE_MAX_GEN}")
    for k in freqs:
        if len(k) != kernel.dimension:
            raise ValueError("frequency dimension does not match kernel")

    fact = [law.factorial_moment(q) for q in range(len(gens) + 1)]
    memo = {}

    def char_sum(block_freqs):
        total = np.sum(np.array(block_freqs, dtype=np.float64), axis=0)
        return kernel.char(total)

    def recurse(items) -> float:
        # items: tuple of (generation, frequency-tuple); factors at
        # generation 0 equal 1 (single particle at the origin) and drop out.
        items = tuple((m, k) for m, k in items if m > 0)
        if not items:
            return 1.0
        if len(items) == 1:
            m, k = items[0]
            return kernel.char(np.array(k)) ** m
        key = tuple(sorted(items))
        if key in memo:
            return memo[key]
        total = 0.0
        idx = list(range(len(items)))
        for part in _set_partitions(idx):
            coeff = fact[len(part)]
            if coeff == 0.0:
                continue
            term = coeff
            for block in part:
                ks = [items[i][1] for i in block]
                term *= char_sum(ks)
                term *= recurse(tuple((items[i][0] - 1, items[i][1]) for i in block))
                if term == 0.0:
                    break
            total += term
        memo[key] = total
        return total

    # joint step-symmetry of the walk makes the moment real
    return complex(recurse(tuple(zip(gens, freqs))))
