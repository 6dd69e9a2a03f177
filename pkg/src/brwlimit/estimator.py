"""Monte Carlo estimators for the rescaled-ensemble expectations.

All estimators carry the unnormalized weight ``c3 * n`` explicitly, so the
targets (moment convergence, survival weights, truncated functionals) are
compared without renormalization.  Estimates reduce over replicates in fixed
order, making results bit-identical across runs and worker-thread counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import engine
from .csbm import MomentSpec
from .measure import Censored, MeasurePath, ScalingConstants, extinction_time, rescale
from .model import OffspringLaw, StepKernel, exact_small_oracle, simulate
from .rng import PhiloxStream


@dataclass(frozen=True)
class EstimateWithCI:
    """Weighted replicate mean with its standard error."""

    value: complex
    std_err: float
    replicates: int
    weight: float

    @property
    def real(self) -> float:
        return self.value.real

    def deviation_se(self, target: complex) -> float:
        if self.std_err <= 0:
            return 0.0
        return abs(self.value - target) / self.std_err


@dataclass(frozen=True)
class Weighted:
    """Mass-weighted functional mode: multiply by X_s(1)."""

    s: float


@dataclass(frozen=True)
class Truncated:
    """Truncated functional mode: multiply by the indicator {X_s(1) > level}."""

    s: float
    level: float


class Ensemble:
    """Independent replicate paths at fixed n, with RNG provenance.

    Replicate ``i`` uses the stream keyed by ``(master_seed, n, i)``; adding
    replicates never perturbs existing ones.  Count-level tables are cached;
    position sweeps stream chunk by chunk.
    """

    def __init__(self, law: OffspringLaw, kernel: StepKernel, constants: ScalingConstants,
                 replicates: int, master_seed: int, horizon_time: float, threads: int = 1):
        if replicates < 0:
            raise ValueError("replicate count must be nonnegative")
        if horizon_time <= 0:
            raise ValueError("horizon time must be positive")
        self.law = law
        self.kernel = kernel
        self.constants = constants
        self.replicates = replicates
        self.master_seed = master_seed
        self.horizon_time = horizon_time
        self.threads = max(1, threads)
        self.n = constants.n
        self.horizon_gens = int(math.floor(constants.n * horizon_time))
        self._mass_cache = {}

    def with_constants(self, constants: ScalingConstants) -> "Ensemble":
        """Same realizations under different scaling constants (shared cache)."""
        if constants.n != self.n:
            raise ValueError("constants must share the ensemble's n")
        other = Ensemble(self.law, self.kernel, constants, self.replicates,
                         self.master_seed, self.horizon_time, self.threads)
        other._mass_cache = self._mass_cache
        return other

    # -- time/generation bookkeeping -------------------------------------

    def generation_of(self, t: float) -> int:
        g = int(math.floor(self.n * t))
        if t < 0 or g > self.horizon_gens:
            raise ValueError(f"time {t} outside the simulated horizon {self.horizon_time}")
        return g

    # -- simulation backends ----------------------------------------------

    def paths(self):
        """Reference object-level path generator (replicate order)."""
        for i in range(self.replicates):
            stream = PhiloxStream.for_replicate(self.master_seed, self.n, i)
            traj = simulate(self.law, self.kernel, self.horizon_gens, stream,
                            master_seed=self.master_seed, replicate=i)
            yield rescale(traj, self.constants)

    def mass_table(self, gens) -> tuple:
        """Cached count-level sweep: returns (columns, z, extinct)."""
        want = tuple(sorted(set(int(g) for g in gens)))
        cached = self._mass_cache.get("table")
        if cached is not None:
            have, z, extinct = cached
            if set(want) <= set(have):
                return have, z, extinct
            want = tuple(sorted(set(want) | set(have)))
        record, z, extinct = engine.mass_sweep(
            self.law, self.master_seed, self.n, self.replicates,
            self.horizon_gens, want, threads=self.threads)
        have = tuple(int(g) for g in record)
        self._mass_cache["table"] = (have, z, extinct)
        return have, z, extinct

    def mass_column(self, z, have, gen: int) -> np.ndarray:
        return z[:, have.index(int(gen))]

    def fourier_chunks(self, slots, record_gens):
        return engine.fourier_chunks(
            self.law, self.kernel, self.master_seed, self.n, self.replicates,
            self.horizon_gens, slots, record_gens, self.constants.space_scale,
            threads=self.threads)


# ---------------------------------------------------------------------------
# Functional requests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FunctionalRequest:
    """Product-of-Fourier-integrals functional, optionally weighted/truncated."""

    spec: Optional[MomentSpec] = None
    mode: object = None  # Weighted | Truncated | None

    def needs_positions(self) -> bool:
        return self.spec is not None and not self.spec.all_zero_freq


def _canonical_freq(k: Sequence[float]):
    """Sign-canonical frequency: first nonzero component positive.

    Evaluating only canonical frequencies and conjugating makes the
    conjugation symmetry of the estimators exact by construction.
    """
    k = tuple(float(v) for v in k)
    for v in k:
        if v > 0:
            return k, False
        if v < 0:
            return tuple(-u for u in k), True
    return k, False


def _mean_and_se(partial_sums, partial_sq, count: int, weight: float):
    total = complex(np.sum(np.asarray(partial_sums)))
    sq = float(np.sum(np.asarray(partial_sq)))
    mean = total / count
    if count > 1:
        var = (sq - abs(total) ** 2 / count) / (count - 1)
        se = weight * math.sqrt(max(var, 0.0) / count)
    else:
        se = 0.0
    return weight * mean, se


def evaluate_functionals(ens: Ensemble, requests: Sequence[FunctionalRequest]):
    """Evaluate several functionals on one shared sweep of the ensemble.

    Returns one ``EstimateWithCI`` per request, reduced in replicate order.
    """
    if ens.replicates == 0:
        raise ValueError("ensemble has no replicates")
    weight = ens.constants.c3 * ens.n
    atom = ens.constants.atom_mass
    need_positions = any(r.needs_positions() for r in requests)

    mass_gens = set()
    for r in requests:
        if r.spec is not None and not r.needs_positions():
            mass_gens.update(ens.generation_of(t) for t in r.spec.times)
        if isinstance(r.mode, (Weighted, Truncated)):
            mass_gens.add(ens.generation_of(r.mode.s))

    if not need_positions:
        have, z, extinct = ens.mass_table(mass_gens)
        results = []
        for r in requests:
            v = np.ones(ens.replicates, dtype=np.float64)
            if r.spec is not None:
                for t in r.spec.times:
                    v = v * (atom * ens.mass_column(z, have, ens.generation_of(t)))
            v = _apply_mode(v, r.mode, ens, z, have, atom)
            total = np.sum(v)
            mean = total / ens.replicates
            if ens.replicates > 1:
                var = float(np.sum((v - mean) ** 2)) / (ens.replicates - 1)
                se = weight * math.sqrt(var / ens.replicates)
            else:
                se = 0.0
            results.append(EstimateWithCI(complex(weight * mean), se,
                                          ens.replicates, weight))
        return results

    # position route: canonical slots shared across requests
    slot_index = {}
    slots = []
    factors = []  # per request: list of (slot, conj) or ('mass', gen)
    for r in requests:
        fl = []
        if r.spec is not None:
            for t, k in zip(r.spec.times, r.spec.freqs):
                g = ens.generation_of(t)
                ck, conj = _canonical_freq(k)
                key = (g, ck)
                if key not in slot_index:
                    slot_index[key] = len(slots)
                    slots.append((g, np.array(ck, dtype=np.float64), 0))
                fl.append((slot_index[key], conj))
        factors.append(fl)

    partials = [([], []) for _ in requests]
    for lo, hi, sre, sim, record, z, extinct in ens.fourier_chunks(slots, sorted(mass_gens)):
        have = tuple(int(g) for g in record)
        for ri, r in enumerate(requests):
            v = np.ones(hi - lo, dtype=np.complex128)
            for sl, conj in factors[ri]:
                f = sre[:, sl] + (-1j if conj else 1j) * sim[:, sl]
                v = v * (atom * f)
            v = _apply_mode(v, r.mode, ens, z, have, atom)
            partials[ri][0].append(np.sum(v))
            partials[ri][1].append(float(np.sum(np.abs(v) ** 2)))
    results = []
    for ri in range(len(requests)):
        value, se = _mean_and_se(partials[ri][0], partials[ri][1],
                                 ens.replicates, weight)
        results.append(EstimateWithCI(value, se, ens.replicates, weight))
    return results


def _apply_mode(v, mode, ens, z, have, atom):
    if mode is None:
        return v
    g = ens.generation_of(mode.s)
    mass = atom * ens.mass_column(z, have, g)
    if isinstance(mode, Weighted):
        return v * mass
    if isinstance(mode, Truncated):
        return v * (mass > mode.level)
    raise TypeError(f"unknown functional mode {mode!r}")


# ---------------------------------------------------------------------------
# Spec-level operations
# ---------------------------------------------------------------------------


def mu_expectation(ens: Ensemble, functional: Callable[[MeasurePath], complex]) -> EstimateWithCI:
    """Weighted mean of an arbitrary path functional (reference pipeline)."""
    values = np.array([complex(functional(p)) for p in ens.paths()], dtype=np.complex128)
    if len(values) == 0:
        raise ValueError("ensemble has no replicates")
    weight = ens.constants.c3 * ens.n
    mean = np.sum(values) / len(values)
    if len(values) > 1:
        var = float(np.sum(np.abs(values - mean) ** 2)) / (len(values) - 1)
        se = weight * math.sqrt(var / len(values))
    else:
        se = 0.0
    return EstimateWithCI(complex(weight * mean), se, len(values), weight)


def empirical_moment(ens: Ensemble, spec: MomentSpec) -> EstimateWithCI:
    """Estimate of the weighted joint Fourier moment at the spec."""
    return evaluate_functionals(ens, [FunctionalRequest(spec=spec)])[0]


def functional_moment(ens: Ensemble, mode, spec: Optional[MomentSpec] = None) -> EstimateWithCI:
    """Weighted (X_s(1) F) or truncated (F 1{X_s(1) > level}) moment."""
    if not isinstance(mode, (Weighted, Truncated)):
        raise TypeError("mode must be Weighted(s) or Truncated(s, level)")
    return evaluate_functionals(ens, [FunctionalRequest(spec=spec, mode=mode)])[0]


def survived_mask(ens: Ensemble, eps: float) -> np.ndarray:
    """Boolean mask of replicates with extinction time > eps."""
    if not 0 < eps < ens.horizon_time:
        raise ValueError("survival threshold must satisfy 0 < eps < horizon_time")
    _, _, extinct = ens.mass_table([])
    return (extinct < 0) | (extinct > ens.n * eps)


def survival_weight(ens: Ensemble, eps: float) -> EstimateWithCI:
    """Weighted survival estimate c3 * n * fraction{extinction > eps}."""
    mask = survived_mask(ens, eps)
    weight = ens.constants.c3 * ens.n
    r = ens.replicates
    p = float(np.count_nonzero(mask)) / r
    se = weight * math.sqrt(p * (1.0 - p) / r)
    return EstimateWithCI(complex(weight * p), se, r, weight)


def conditional_mass_sample(ens: Ensemble, b: float, eps: float) -> np.ndarray:
    """Total masses X_b(1) over the replicates surviving past eps."""
    if not 0 < b < ens.horizon_time:
        raise ValueError("sample time must satisfy 0 < b < horizon_time")
    mask = survived_mask(ens, eps)
    g = ens.generation_of(b)
    have, z, _ = ens.mass_table([g])
    return ens.constants.atom_mass * ens.mass_column(z, have, g)[mask].astype(np.float64)


def rpoint_identity(ens: Ensemble, spec: MomentSpec) -> tuple:
    """Both sides of the Fourier moment identity on the same realizations.

    The left side accumulates raw-lattice Fourier sums at the unscaled sites
    (frequencies divided by the space scale up front); the right side uses
    the rescaled paths.  The two are algebraically equal, so they must agree
    to floating-point accuracy.
    """
    scale = ens.constants.space_scale
    slots = []
    lhs_factors = []
    rhs_factors = []
    for t, k in zip(spec.times, spec.freqs):
        g = ens.generation_of(t)
        kv = np.array(k, dtype=np.float64)
        ck, conj = _canonical_freq(kv)
        slots.append((g, np.array(ck, dtype=np.float64), 0))
        rhs_factors.append((len(slots) - 1, conj))
        cku, conju = _canonical_freq(kv / scale)
        slots.append((g, np.array(cku, dtype=np.float64), 1))
        lhs_factors.append((len(slots) - 1, conju))

    atom = ens.constants.atom_mass
    l = spec.order
    lhs_parts, rhs_parts = [], []
    for lo, hi, sre, sim, record, z, extinct in ens.fourier_chunks(slots, []):
        lv = np.ones(hi - lo, dtype=np.complex128)
        rv = np.ones(hi - lo, dtype=np.complex128)
        for sl, conj in lhs_factors:
            lv = lv * (sre[:, sl] + (-1j if conj else 1j) * sim[:, sl])
        for sl, conj in rhs_factors:
            rv = rv * (atom * (sre[:, sl] + (-1j if conj else 1j) * sim[:, sl]))
        lhs_parts.append(np.sum(lv))
        rhs_parts.append(np.sum(rv))
    c = ens.constants
    lhs = (c.c1 ** l * c.c3 / ens.n ** (l - 1)) * (complex(np.sum(np.asarray(lhs_parts))) / ens.replicates)
    rhs = (c.c3 * ens.n) * (complex(np.sum(np.asarray(rhs_parts))) / ens.replicates)
    return lhs, rhs


# ---------------------------------------------------------------------------
# Lattice-exact targets
# ---------------------------------------------------------------------------


def lattice_moment_exact(ens_or_constants, kernel: StepKernel, law: OffspringLaw,
                         spec: MomentSpec) -> complex:
    """Exact weighted lattice moment, recomputed from the oracle recursion."""
    c = ens_or_constants.constants if isinstance(ens_or_constants, Ensemble) else ens_or_constants
    scale = c.space_scale
    gens = [int(math.floor(c.n * t)) for t in spec.times]
    freqs = [np.array(k, dtype=np.float64) / scale for k in spec.freqs]
    value = exact_small_oracle(law, kernel, gens, freqs)
    l = spec.order
    return (c.c3 * c.n) * (c.c1 / c.n) ** l * value


def mean_fourier_exact(constants: ScalingConstants, kernel: StepKernel,
                       t: float, k) -> complex:
    """Exact one-factor moment c3 c1 D(k/scale)^{floor(n t)}."""
    k = np.asarray(k, dtype=np.float64)
    m = int(math.floor(constants.n * t))
    return complex(constants.c3 * constants.c1 * kernel.char(k / constants.space_scale) ** m)
