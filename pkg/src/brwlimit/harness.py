"""Experiment orchestration: configs, convergence tables, reports.

A single JSON config document (versioned schema, unknown keys rejected)
selects a model, an increasing grid of scaling parameters n, replicate
counts and the experiment kind.  Every report row compares an estimate to a
target recomputed at run time from the exact-limit module or the
lattice-exact oracle, and carries a pass flag with the declared tolerance.
Statistical tolerances combine four standard errors with an explicit
O(1/n)-bias allowance declared in the config.

CSV schema (exact header, in order):
``n,quantity,estimate_re,estimate_im,std_err,target_re,target_im,dev_se,pass``

Exit codes: 0 all rows pass, 1 any row fails, 2 config error.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import csbm
from .csbm import MomentSpec, QuadratureConfig, conditional_mass_cdf, moment_function
from .estimator import (Ensemble, FunctionalRequest, Truncated, Weighted,
                        conditional_mass_sample, evaluate_functionals,
                        lattice_moment_exact, mean_fourier_exact,
                        rpoint_identity, survival_weight)
from .measure import ScalingConstants, integrate
from .model import OffspringLaw, StepKernel, extinction_probability

SCHEMA_VERSION = 1

CSV_HEADER = "n,quantity,estimate_re,estimate_im,std_err,target_re,target_im,dev_se,pass"

KINDS = ("moments", "survival", "fdd", "identity", "csbm-table", "simulate")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the violation."""


@dataclass
class ReportRow:
    n: int
    quantity: str
    estimate: complex
    std_err: float
    target: complex
    passed: bool

    @property
    def dev_se(self) -> float:
        if self.std_err > 0:
            return abs(self.estimate - self.target) / self.std_err
        return 0.0

    def csv_line(self) -> str:
        return ",".join([
            str(self.n), self.quantity,
            repr(float(self.estimate.real)), repr(float(self.estimate.imag)),
            repr(float(self.std_err)),
            repr(float(self.target.real)), repr(float(self.target.imag)),
            repr(float(self.dev_se)),
            "true" if self.passed else "false",
        ])


@dataclass
class Report:
    rows: list
    summary_lines: list
    dump_path: Optional[str] = None

    @property
    def all_pass(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def exit_code(self) -> int:
        return 0 if self.all_pass else 1

    def csv_text(self) -> str:
        return "\n".join([CSV_HEADER] + [r.csv_line() for r in self.rows]) + "\n"


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

_MODEL_KEYS = {"offspring", "kernel", "dimension"}
_COMMON_KEYS = {"schema_version", "kind", "model", "n_grid", "replicates",
                "horizon_time", "master_seed", "threads", "constants", "out_dir"}
_KIND_KEYS = {
    "moments": {"specs", "weighted_specs", "truncated_specs", "bias_coeff",
                "truncated_tolerance", "two_point_check"},
    "survival": {"epsilons", "tolerance"},
    "fdd": {"b", "epsilon", "ks_alpha", "ks_allowance", "mean_bias", "min_survivors"},
    "identity": {"specs", "rel_tol"},
    "csbm-table": {"survival_eps", "tails", "mass_moments", "moment_specs"},
    "simulate": {"dump_file"},
}
_SIM_KINDS = ("moments", "survival", "fdd", "identity", "simulate")


@dataclass
class ExperimentConfig:
    kind: str
    law: Optional[OffspringLaw]
    kernel: Optional[StepKernel]
    n_grid: list
    replicates: int
    horizon_time: float
    master_seed: int
    threads: int
    constants_mode: str
    out_dir: Optional[str]
    params: dict = field(default_factory=dict)

    def constants_for(self, n: int):
        """(label, ScalingConstants) pairs for the configured convention(s)."""
        if self.constants_mode == "both":
            return [("paper", ScalingConstants.paper(self.law, self.kernel, n)),
                    ("matched", ScalingConstants.moment_matched(self.law, self.kernel, n))]
        if self.constants_mode == "matched":
            return [("", ScalingConstants.moment_matched(self.law, self.kernel, n))]
        return [("", ScalingConstants.paper(self.law, self.kernel, n))]


def _require(doc: dict, key: str, context: str):
    if key not in doc:
        raise ConfigError(f"missing required key {key!r} in {context}")
    return doc[key]


def _check_keys(doc: dict, allowed: set, context: str):
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {context}")


def _parse_model(doc) -> tuple:
    if not isinstance(doc, dict):
        raise ConfigError("model must be an object")
    _check_keys(doc, _MODEL_KEYS, "model")
    d = int(_require(doc, "dimension", "model"))
    off = _require(doc, "offspring", "model")
    if off == "binary":
        law = OffspringLaw.binary()
    elif off == "poisson_one":
        law = OffspringLaw.poisson_one()
    elif off == "geometric":
        law = OffspringLaw.geometric()
    elif isinstance(off, dict) and set(off) == {"custom_pmf"}:
        law = OffspringLaw.custom(off["custom_pmf"])
    else:
        raise ConfigError(f"unknown offspring law {off!r}")
    ker = _require(doc, "kernel", "model")
    if ker == "nearest_neighbor":
        kernel = StepKernel.nearest_neighbor(d)
    elif isinstance(ker, dict) and set(ker) == {"spread_out_box"}:
        kernel = StepKernel.spread_out_box(d, int(ker["spread_out_box"]))
    else:
        raise ConfigError(f"unknown kernel {ker!r}")
    return law, kernel


def _parse_spec(doc, dimension: int, context: str) -> MomentSpec:
    if not isinstance(doc, dict) or set(doc) - {"t", "k"}:
        raise ConfigError(f"{context} must be an object with keys 't' and 'k'")
    times = doc.get("t", [])
    freqs = doc.get("k", [])
    try:
        spec = MomentSpec(tuple(times), tuple(tuple(np.atleast_1d(k)) for k in freqs))
    except ValueError as e:
        raise ConfigError(f"invalid {context}: {e}") from e
    if spec.dimension != dimension:
        raise ConfigError(f"{context} frequency dimension {spec.dimension} != model dimension {dimension}")
    return spec


def parse_config(doc: dict, kind_override: Optional[str] = None) -> ExperimentConfig:
    """Parse and validate a config document; raises ConfigError on any defect."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    kind = doc.get("kind", kind_override)
    if kind is None:
        raise ConfigError("missing required key 'kind'")
    if kind_override is not None and kind != kind_override:
        raise ConfigError(f"config kind {kind!r} does not match subcommand {kind_override!r}")
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    _check_keys(doc, _COMMON_KEYS | _KIND_KEYS[kind], "config")
    if int(doc.get("schema_version", SCHEMA_VERSION)) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version (expected {SCHEMA_VERSION})")

    law = kernel = None
    n_grid: list = []
    replicates = 0
    horizon_time = 0.0
    master_seed = 0
    if kind in _SIM_KINDS:
        law, kernel = _parse_model(_require(doc, "model", "config"))
        n_grid = list(_require(doc, "n_grid", "config"))
        if len(n_grid) == 0:
            raise ConfigError("n_grid must be nonempty")
        if any(int(n) < 1 for n in n_grid):
            raise ConfigError("n_grid entries must be >= 1")
        if any(n_grid[i] >= n_grid[i + 1] for i in range(len(n_grid) - 1)):
            raise ConfigError("n_grid must be strictly increasing")
        n_grid = [int(n) for n in n_grid]
        replicates = int(_require(doc, "replicates", "config"))
        if replicates < 0:
            raise ConfigError("replicates must be nonnegative")
        horizon_time = float(_require(doc, "horizon_time", "config"))
        if horizon_time <= 0:
            raise ConfigError("horizon_time must be positive")
        master_seed = int(_require(doc, "master_seed", "config"))

    threads = int(doc.get("threads", 1))
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    constants_mode = doc.get("constants")
    if constants_mode is None:
        gamma_is_one = law is not None and abs(law.variance_gamma - 1.0) <= 1e-9
        constants_mode = "paper" if (law is None or gamma_is_one) else "both"
    if constants_mode not in ("paper", "matched", "both"):
        raise ConfigError(f"unknown constants convention {constants_mode!r}")

    params = {}
    referenced_times = []
    d = kernel.dimension if kernel is not None else 1

    if kind == "moments":
        params["specs"] = [_parse_spec(s, d, "moment spec") for s in doc.get("specs", [])]
        weighted = []
        for w in doc.get("weighted_specs", []):
            if not isinstance(w, dict) or set(w) - {"s", "t", "k"}:
                raise ConfigError("weighted spec must have keys 's' and optionally 't', 'k'")
            s = float(_require(w, "s", "weighted spec"))
            spec = None
            if w.get("t"):
                spec = _parse_spec({"t": w["t"], "k": w["k"]}, d, "weighted spec")
                referenced_times.extend(spec.times)
            weighted.append((s, spec))
            referenced_times.append(s)
        params["weighted"] = weighted
        truncated = []
        for tr in doc.get("truncated_specs", []):
            if not isinstance(tr, dict) or set(tr) - {"s", "level"}:
                raise ConfigError("truncated spec must have keys 's' and 'level' "
                                  "(closed-form targets exist only for the bare indicator)")
            s = float(_require(tr, "s", "truncated spec"))
            level = float(_require(tr, "level", "truncated spec"))
            if level < 0:
                raise ConfigError("truncation level must be nonnegative")
            truncated.append((s, level))
            referenced_times.append(s)
        params["truncated"] = truncated
        params["bias_coeff"] = float(doc.get("bias_coeff", 4.0))
        params["truncated_tolerance"] = float(doc.get("truncated_tolerance", 0.05))
        tp = doc.get("two_point_check")
        if tp is not None:
            if not isinstance(tp, dict) or set(tp) - {"t", "k_grid", "tol"}:
                raise ConfigError("two_point_check must have keys 't', 'k_grid', 'tol'")
            params["two_point"] = (float(_require(tp, "t", "two_point_check")),
                                   [float(k) for k in _require(tp, "k_grid", "two_point_check")],
                                   float(tp.get("tol", 0.01)))
            if d != 1:
                raise ConfigError("two_point_check supports dimension 1 grids only")
            referenced_times.append(params["two_point"][0])
        for spec in params["specs"]:
            referenced_times.extend(spec.times)
        if replicates == 0 and (params["specs"] or weighted or truncated):
            raise ConfigError("Monte Carlo moment rows require replicates >= 1")

    elif kind == "survival":
        eps = [float(e) for e in _require(doc, "epsilons", "config")]
        if not eps or any(e <= 0 for e in eps):
            raise ConfigError("epsilons must be a nonempty list of positive reals")
        params["epsilons"] = eps
        params["tolerance"] = float(doc.get("tolerance", 0.2))
        referenced_times.extend(eps)
        if replicates == 0:
            raise ConfigError("survival experiments require replicates >= 1")

    elif kind == "fdd":
        b = float(_require(doc, "b", "config"))
        eps = float(_require(doc, "epsilon", "config"))
        if b <= 0 or eps <= 0:
            raise ConfigError("b and epsilon must be positive")
        if b < eps:
            raise ConfigError("fdd requires b >= epsilon (closed-form conditional law)")
        params.update(b=b, epsilon=eps,
                      ks_alpha=float(doc.get("ks_alpha", 0.001)),
                      ks_allowance=float(doc.get("ks_allowance", 0.016)),
                      mean_bias=float(doc.get("mean_bias", 0.02)),
                      min_survivors=int(doc.get("min_survivors", 10000)))
        referenced_times.extend([b, eps])
        if replicates == 0:
            raise ConfigError("fdd experiments require replicates >= 1")

    elif kind == "identity":
        specs = [_parse_spec(s, d, "identity spec") for s in _require(doc, "specs", "config")]
        if not specs:
            raise ConfigError("identity experiments need at least one spec")
        params["specs"] = specs
        params["rel_tol"] = float(doc.get("rel_tol", 1e-9))
        for spec in specs:
            referenced_times.extend(spec.times)
        if replicates == 0:
            raise ConfigError("identity experiments require replicates >= 1")

    elif kind == "csbm-table":
        params["survival_eps"] = [float(e) for e in doc.get("survival_eps", [])]
        params["tails"] = [(float(b), float(l)) for b, l in doc.get("tails", [])]
        params["mass_moments"] = [(float(b), int(p)) for b, p in doc.get("mass_moments", [])]
        specs = []
        for s in doc.get("moment_specs", []):
            if not isinstance(s, dict) or not s.get("k"):
                raise ConfigError("moment spec must be an object with keys 't' and 'k'")
            specs.append(_parse_spec(s, len(np.atleast_1d(s["k"][0])), "moment spec"))
        params["moment_specs"] = specs
        if any(e <= 0 for e in params["survival_eps"]):
            raise ConfigError("survival_eps entries must be positive")
        if any(b <= 0 or l < 0 for b, l in params["tails"]):
            raise ConfigError("tail entries need b > 0 and level >= 0")
        if any(b <= 0 or p < 1 for b, p in params["mass_moments"]):
            raise ConfigError("mass moment entries need b > 0 and p >= 1")

    elif kind == "simulate":
        params["dump_file"] = str(doc.get("dump_file", "paths.jsonl"))
        if replicates == 0:
            raise ConfigError("simulate requires replicates >= 1")

    if referenced_times and horizon_time <= max(referenced_times):
        raise ConfigError(
            f"horizon_time {horizon_time} must strictly exceed every referenced "
            f"time (max {max(referenced_times)})")

    return ExperimentConfig(
        kind=kind, law=law, kernel=kernel, n_grid=n_grid, replicates=replicates,
        horizon_time=horizon_time, master_seed=master_seed, threads=threads,
        constants_mode=constants_mode, out_dir=doc.get("out_dir"), params=params)


def load_config(path: str, kind_override: Optional[str] = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path!r}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path!r} is not valid JSON: {e}") from e
    return parse_config(doc, kind_override)


# ---------------------------------------------------------------------------
# Statistical tests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KsResult:
    statistic: float
    threshold: float
    passed: bool


def ks_test(samples, reference_cdf: Callable, alpha: float = 0.001,
            allowance: float = 0.0) -> KsResult:
    """Sup distance between empirical and reference CDF at the sample points.

    The threshold is the DKW bound sqrt(ln(2/alpha) / (2 N)) plus the declared
    discretization allowance.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = len(x)
    if n == 0:
        raise ValueError("ks_test requires a nonempty sample")
    ecdf = np.searchsorted(x, x, side="right") / n
    stat = float(np.max(np.abs(ecdf - np.asarray(reference_cdf(x), dtype=np.float64))))
    threshold = math.sqrt(math.log(2.0 / alpha) / (2.0 * n)) + allowance
    return KsResult(stat, threshold, stat <= threshold)


# ---------------------------------------------------------------------------
# Quantity naming
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:g}"


def _spec_slug(spec: MomentSpec) -> str:
    ts = ";".join(_fmt(t) for t in spec.times)
    ks = ";".join(":".join(_fmt(v) for v in k) for k in spec.freqs)
    return f"[t={ts}][k={ks}]"


def _q(name: str, slug: str, convention: str, target: str = "") -> str:
    out = name + slug
    if target:
        out += "~" + target
    if convention:
        out += "@" + convention
    return out


# ---------------------------------------------------------------------------
# Experiment runners
# ---------------------------------------------------------------------------


def _moments_rows(config: ExperimentConfig, n: int, base: Optional[Ensemble]) -> list:
    p = config.params
    quad = QuadratureConfig()
    rows = []
    for label, constants in config.constants_for(n):
        if p["specs"] or p["weighted"] or p["truncated"]:
            ens = base.with_constants(constants)
            requests = ([FunctionalRequest(spec=s) for s in p["specs"]]
                        + [FunctionalRequest(spec=s, mode=Weighted(w))
                           for w, s in p["weighted"]]
                        + [FunctionalRequest(mode=Truncated(s, level))
                           for s, level in p["truncated"]])
            estimates = evaluate_functionals(ens, requests)
            idx = 0
            for spec in p["specs"]:
                est = estimates[idx]
                idx += 1
                rows.extend(_moment_rows_for(config, ens, spec, est, "moment",
                                             _spec_slug(spec), label, quad))
            for w, spec in p["weighted"]:
                est = estimates[idx]
                idx += 1
                # weighting by total mass is one extra zero-frequency factor
                zero = (0.0,) * config.kernel.dimension
                if spec is None:
                    full = MomentSpec((w,), (zero,))
                    slug = f"[s={_fmt(w)}]"
                else:
                    full = MomentSpec(spec.times + (w,), spec.freqs + (zero,))
                    slug = f"[s={_fmt(w)}]" + _spec_slug(spec)
                rows.extend(_moment_rows_for(config, ens, full, est, "weighted",
                                             slug, label, quad))
            for s, level in p["truncated"]:
                est = estimates[idx]
                idx += 1
                target = complex(csbm.mass_tail(s, level))
                tol = p["truncated_tolerance"]
                ok = abs(est.value - target) <= tol
                rows.append(ReportRow(n, _q("truncated", f"[s={_fmt(s)}][level={_fmt(level)}]",
                                            label, "csbm"),
                                      est.value, est.std_err, target, ok))
        if "two_point" in p:
            t, k_grid, tol = p["two_point"]
            for k in k_grid:
                est = mean_fourier_exact(constants, config.kernel, t, [k])
                target = moment_function(MomentSpec((t,), ((k,),)), quad)
                ok = abs(est - target) <= tol
                rows.append(ReportRow(n, _q("two_point", f"[t={_fmt(t)}][k={_fmt(k)}]",
                                            label, "csbm"),
                                      est, 0.0, target, ok))
    return rows


def _moment_rows_for(config, ens, spec, est, name, slug, label, quad) -> list:
    n = ens.n
    lattice = lattice_moment_exact(ens, config.kernel, config.law, spec)
    ok_lat = abs(est.value - lattice) <= 4.0 * est.std_err
    rows = [ReportRow(n, _q(name, slug, label, "lattice"),
                      est.value, est.std_err, lattice, ok_lat)]
    limit = moment_function(spec, quad)
    allowance = config.params["bias_coeff"] / n
    ok_limit = abs(est.value - limit) <= allowance + 4.0 * est.std_err
    rows.append(ReportRow(n, _q(name, slug, label, "csbm"),
                          est.value, est.std_err, limit, ok_limit))
    return rows


def _survival_rows(config: ExperimentConfig, n: int, base: Ensemble) -> list:
    rows = []
    tol = config.params["tolerance"]
    for label, constants in config.constants_for(n):
        ens = base.with_constants(constants)
        for eps in config.params["epsilons"]:
            est = survival_weight(ens, eps)
            target = complex(csbm.survival_mass(eps))
            ok = abs(est.value - target) <= tol
            rows.append(ReportRow(n, _q("survival", f"[eps={_fmt(eps)}]", label, "csbm"),
                                  est.value, est.std_err, target, ok))
            m = int(math.floor(n * eps))
            lattice = complex(constants.c3 * n * (1.0 - extinction_probability(config.law, m)))
            ok_lat = abs(est.value - lattice) <= 4.0 * est.std_err
            rows.append(ReportRow(n, _q("survival", f"[eps={_fmt(eps)}]", label, "lattice"),
                                  est.value, est.std_err, lattice, ok_lat))
    return rows


def _fdd_rows(config: ExperimentConfig, n: int, base: Ensemble) -> list:
    p = config.params
    b, eps = p["b"], p["epsilon"]
    rows = []
    for label, constants in config.constants_for(n):
        ens = base.with_constants(constants)
        samples = conditional_mass_sample(ens, b, eps)
        count = len(samples)
        slug = f"[b={_fmt(b)}][eps={_fmt(eps)}]"
        rows.append(ReportRow(n, _q("fdd_survivors", slug, label),
                              complex(count), 0.0, complex(p["min_survivors"]),
                              count >= p["min_survivors"]))
        if count:
            ks = ks_test(samples, conditional_mass_cdf(b, eps),
                         alpha=p["ks_alpha"], allowance=p["ks_allowance"])
            rows.append(ReportRow(n, _q("fdd_ks", slug, label, "csbm"),
                                  complex(ks.statistic), 0.0, complex(0.0), ks.passed))
            mean = float(np.mean(samples))
            se = float(np.std(samples, ddof=1)) / math.sqrt(count) if count > 1 else 0.0
            target = complex(eps / 2.0)  # restricted first moment: 1 / (2/eps)
            ok = abs(mean - target.real) <= p["mean_bias"] + 4.0 * se
            rows.append(ReportRow(n, _q("fdd_mean", slug, label, "csbm"),
                                  complex(mean), se, target, ok))
    return rows


def _identity_rows(config: ExperimentConfig, n: int, base: Ensemble) -> list:
    rows = []
    rel_tol = config.params["rel_tol"]
    for label, constants in config.constants_for(n):
        ens = base.with_constants(constants)
        for spec in config.params["specs"]:
            lhs, rhs = rpoint_identity(ens, spec)
            denom = max(abs(lhs), abs(rhs), 1e-300)
            ok = abs(lhs - rhs) <= rel_tol * denom
            rows.append(ReportRow(n, _q("identity", _spec_slug(spec), label),
                                  lhs, 0.0, rhs, ok))
    return rows


def _csbm_rows(config: ExperimentConfig) -> list:
    p = config.params
    quad = QuadratureConfig()
    rows = []
    for eps in p["survival_eps"]:
        v = complex(csbm.survival_mass(eps))
        rows.append(ReportRow(0, f"survival_mass[eps={_fmt(eps)}]", v, 0.0, v, True))
    for b, lam in p["tails"]:
        v = complex(csbm.mass_tail(b, lam))
        rows.append(ReportRow(0, f"mass_tail[b={_fmt(b)}][level={_fmt(lam)}]", v, 0.0, v, True))
    for b, order in p["mass_moments"]:
        v = complex(csbm.mass_moment(b, order))
        rows.append(ReportRow(0, f"mass_moment[b={_fmt(b)}][p={order}]", v, 0.0, v, True))
    for spec in p["moment_specs"]:
        v = moment_function(spec, quad)
        rows.append(ReportRow(0, "moment" + _spec_slug(spec), v, 0.0, v, True))
    return rows


def _dump_paths(config: ExperimentConfig, out_dir: str) -> str:
    n = config.n_grid[0]
    _, constants = config.constants_for(n)[0]
    ens = Ensemble(config.law, config.kernel, constants, config.replicates,
                   config.master_seed, config.horizon_time, config.threads)
    path = os.path.join(out_dir, config.params["dump_file"])
    with open(path, "w") as fh:
        for i, mp in enumerate(ens.paths()):
            for g, measure in enumerate(mp.measures):
                rec = {
                    "replicate": i,
                    "generation": g,
                    "time": g / n,
                    "atoms": [[list(map(float, pos)), float(mass)]
                              for pos, mass in zip(measure.positions, measure.masses)],
                }
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def run_experiment(config: ExperimentConfig, out_dir: Optional[str] = None,
                   threads: Optional[int] = None) -> Report:
    """Run one experiment; writes results.csv and plot CSVs when out_dir given."""
    if threads is not None:
        config.threads = max(1, int(threads))
    out_dir = out_dir or config.out_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    rows: list = []
    dump_path = None
    if config.kind == "csbm-table":
        rows = _csbm_rows(config)
    elif config.kind == "simulate":
        if not out_dir:
            raise ConfigError("simulate requires an output directory")
        dump_path = _dump_paths(config, out_dir)
    else:
        for n in config.n_grid:
            base = None
            if config.replicates > 0:
                _, constants = config.constants_for(n)[0]
                base = Ensemble(config.law, config.kernel, constants,
                                config.replicates, config.master_seed,
                                config.horizon_time, config.threads)
            if config.kind == "moments":
                rows.extend(_moments_rows(config, n, base))
            elif config.kind == "survival":
                rows.extend(_survival_rows(config, n, base))
            elif config.kind == "fdd":
                rows.extend(_fdd_rows(config, n, base))
            elif config.kind == "identity":
                rows.extend(_identity_rows(config, n, base))

    summary = [f"kind={config.kind} rows={len(rows)} "
               f"pass={sum(r.passed for r in rows)} fail={sum(not r.passed for r in rows)}"]
    for r in rows:
        status = "PASS" if r.passed else "FAIL"
        summary.append(f"{status} n={r.n} {r.quantity} estimate={r.estimate.real:.6g}"
                       f"{'' if abs(r.estimate.imag) < 1e-300 else f'{r.estimate.imag:+.3g}i'}"
                       f" target={r.target.real:.6g} se={r.std_err:.3g} dev={r.dev_se:.2f}")
    if dump_path:
        summary.append(f"wrote {dump_path} ({config.replicates} replicates)")

    report = Report(rows, summary, dump_path)
    if out_dir and config.kind != "simulate":
        with open(os.path.join(out_dir, "results.csv"), "w") as fh:
            fh.write(report.csv_text())
        write_plot_files(report.rows, out_dir)
    return report


def write_plot_files(rows: Sequence[ReportRow], out_dir: str) -> list:
    """One plot-ready CSV per quantity: columns n, estimate, se, target."""
    by_quantity: dict = {}
    for r in rows:
        by_quantity.setdefault(r.quantity, []).append(r)
    written = []
    for quantity, group in by_quantity.items():
        slug = "".join(ch if ch.isalnum() or ch in "=.;:@-" else "_" for ch in quantity)
        path = os.path.join(out_dir, f"plot_{slug}.csv")
        with open(path, "w") as fh:
            fh.write("n,estimate,se,target\n")
            for r in sorted(group, key=lambda r: r.n):
                fh.write(f"{r.n},{r.estimate.real!r},{r.std_err!r},{r.target.real!r}\n")
        written.append(path)
    return written


def convergence_table(config: ExperimentConfig, out_dir: Optional[str] = None,
                      threads: Optional[int] = None):
    """Rows ordered by n plus a nonincreasing-deviation annotation per quantity.

    The annotation is informational (Monte Carlo noise may break strict
    monotonicity); it never affects pass flags.
    """
    report = run_experiment(config, out_dir=out_dir, threads=threads)
    by_quantity: dict = {}
    for r in report.rows:
        by_quantity.setdefault(r.quantity, []).append(r)
    annotations = {}
    for quantity, group in by_quantity.items():
        group = sorted(group, key=lambda r: r.n)
        if len(group) < 2:
            continue
        devs = [abs(r.estimate - r.target) for r in group]
        annotations[quantity] = all(devs[i + 1] <= devs[i] for i in range(len(devs) - 1))
    return report, annotations
