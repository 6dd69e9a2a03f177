"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Defaults throughout: binary offspring (gamma = 1), nearest-neighbor kernel,
d = 1, fixed master seed.  Statistical criteria combine four standard errors
with the explicitly declared bias allowances; deterministic criteria use the
stated absolute tolerances.  Run with ``pytest tests/test_acceptance.py -v -s``
to see the per-criterion lines.
"""

import math
from contextlib import contextmanager

import numpy as np
import pytest
from scipy.integrate import quad

from brwlimit.csbm import (MomentSpec, exp_moment_truncated, mass_moment,
                           mass_tail, moment_function, survival_mass)
from brwlimit.estimator import (Ensemble, FunctionalRequest, empirical_moment,
                                evaluate_functionals, lattice_moment_exact,
                                mean_fourier_exact)
from brwlimit.harness import parse_config, run_experiment
from brwlimit.measure import ScalingConstants
from brwlimit.model import OffspringLaw, StepKernel, exact_small_oracle

SEED = 1729
MODEL = {"offspring": "binary", "kernel": "nearest_neighbor", "dimension": 1}
LAW = OffspringLaw.binary()
KERNEL = StepKernel.nearest_neighbor(1)

ACCEPTANCE_CONFIGS = {
    # criterion 3, deterministic branch: lattice-exact vs limit at n = 1000
    "two_point_det": {
        "kind": "moments", "model": MODEL, "n_grid": [1000], "replicates": 0,
        "horizon_time": 1.5, "master_seed": SEED,
        "two_point_check": {"t": 1.0, "k_grid": [0.0, 0.5, 1.0, 1.5, 2.0], "tol": 0.01},
    },
    # criterion 3, Monte Carlo branch: n = 200, R = 1e5
    "two_point_mc": {
        "kind": "moments", "model": MODEL, "n_grid": [200], "replicates": 100_000,
        "horizon_time": 1.005, "master_seed": SEED,
        "specs": [{"t": [1.0], "k": [[0.5]]}, {"t": [1.0], "k": [[1.0]]},
                  {"t": [1.0], "k": [[2.0]]}],
    },
    # criteria 4 and 7: three-point moments, weighted form, truncated indicator
    "moments3": {
        "kind": "moments", "model": MODEL, "n_grid": [200], "replicates": 1_000_000,
        "horizon_time": 1.005, "master_seed": SEED,
        "specs": [{"t": [1.0, 1.0], "k": [[0.0], [0.0]]},
                  {"t": [0.5, 1.0], "k": [[0.0], [0.0]]}],
        "weighted_specs": [{"s": 0.5, "t": [1.0], "k": [[0.0]]}],
        "truncated_specs": [{"s": 1.0, "level": 0.5}],
        "bias_coeff": 4.0, "truncated_tolerance": 0.05,
    },
    # criterion 5: survival condition at n = 200, R = 2e6
    "survival": {
        "kind": "survival", "model": MODEL, "n_grid": [200], "replicates": 2_000_000,
        "horizon_time": 1.005, "master_seed": SEED,
        "epsilons": [1.0], "tolerance": 0.2,
    },
    # criterion 6: conditional mass law given survival
    "fdd": {
        "kind": "fdd", "model": MODEL, "n_grid": [200], "replicates": 2_000_000,
        "horizon_time": 1.005, "master_seed": SEED,
        "b": 1.0, "epsilon": 1.0, "min_survivors": 10_000,
        "ks_alpha": 0.001, "ks_allowance": 0.016, "mean_bias": 0.02,
    },
    # criterion 9: algebraic identity between raw and rescaled Fourier sums
    "identity": {
        "kind": "identity", "model": MODEL, "n_grid": [50], "replicates": 20_000,
        "horizon_time": 1.1, "master_seed": SEED,
        "specs": [{"t": [1.0], "k": [[0.7]]},
                  {"t": [0.5, 1.0], "k": [[0.4], [-0.3]]},
                  {"t": [1.0], "k": [[0.0]]}],
        "rel_tol": 1e-9,
    },
}


@contextmanager
def criterion(num, description):
    try:
        yield
    except Exception:
        print(f"criterion {num:2d} FAIL: {description}")
        raise
    print(f"criterion {num:2d} PASS: {description}")


@pytest.fixture(scope="module")
def acceptance_runs(tmp_path_factory):
    """Every acceptance experiment, run with 1 and with 4 worker threads."""
    runs = {}
    for name, doc in ACCEPTANCE_CONFIGS.items():
        entry = {}
        for threads in (1, 4):
            out = tmp_path_factory.mktemp(f"{name}_t{threads}")
            report = run_experiment(parse_config(dict(doc)), out_dir=str(out),
                                    threads=threads)
            entry[threads] = (report, out)
        runs[name] = entry
    return runs


def _row(runs, name, quantity, threads=1):
    report, _ = runs[name][threads]
    for r in report.rows:
        if r.quantity == quantity:
            return r
    raise KeyError(f"{quantity} not in {name}: {[r.quantity for r in report.rows]}")


def test_criterion_1_martingale():
    r = 100_000
    sc = ScalingConstants.paper(LAW, KERNEL, 1)
    ens = Ensemble(LAW, KERNEL, sc, r, SEED, horizon_time=20.5)
    have, z, _ = ens.mass_table([5, 10, 20])
    with criterion(1, "criticality: mean(Z_m) within 4 SE of 1 for m in {5,10,20}, "
                      "Var(Z_20) within 10% of 20"):
        for m in (5, 10, 20):
            zs = ens.mass_column(z, have, m).astype(np.float64)
            assert abs(zs.mean() - 1.0) <= 4 * math.sqrt(m / r), m
        z20 = ens.mass_column(z, have, 20).astype(np.float64)
        assert abs(z20.var(ddof=1) - 20) <= 0.1 * 20


def test_criterion_2_oracle_equivalence():
    with criterion(2, "Monte Carlo moments match the exact oracle (4 SE); "
                      "oracle gives E[Z_2^2]=3, E[Z_3^2]=4 exactly"):
        assert exact_small_oracle(LAW, KERNEL, (2, 2), ((0.0,), (0.0,))) == 3.0 + 0.0j
        assert exact_small_oracle(LAW, KERNEL, (3, 3), ((0.0,), (0.0,))) == 4.0 + 0.0j
        n = 4
        ens = Ensemble(LAW, KERNEL, ScalingConstants.paper(LAW, KERNEL, n),
                       1_000_000, SEED, horizon_time=2.25, threads=4)
        scale = ens.constants.space_scale
        grid = [((4,), (0.8,)), ((8,), (0.3,)),
                ((2, 2), (0.6, -0.6)), ((1, 3), (0.5, 0.25)), ((3, 3), (0.0, 0.0)),
                ((2, 4), (0.3, 0.9)), ((4, 4), (0.7, 0.0)),
                ((2, 2, 2), (0.4, 0.2, -0.6)), ((1, 2, 3), (0.7, 0.0, 0.35)),
                ((2, 3, 3), (0.2, 0.2, 0.2))]
        specs = [MomentSpec(tuple(m / n for m in ms), tuple((u * scale,) for u in us))
                 for ms, us in grid]
        ests = evaluate_functionals(ens, [FunctionalRequest(spec=s) for s in specs])
        for (ms, us), spec, est in zip(grid, specs, ests):
            assert sum(ms) <= 8
            target = lattice_moment_exact(ens, KERNEL, LAW, spec)
            assert abs(est.value - target) <= 4 * est.std_err, (ms, us)


def test_criterion_3_two_point_convergence(acceptance_runs):
    with criterion(3, "two-point convergence: deterministic 0.01 bound at n=1000 "
                      "and Monte Carlo within 4 SE of lattice at n=200"):
        report, _ = acceptance_runs["two_point_det"][1]
        assert report.rows and all(r.passed for r in report.rows)
        # dense deterministic scan over |k| <= 2
        sc = ScalingConstants.paper(LAW, KERNEL, 1000)
        for k in np.linspace(-2.0, 2.0, 81):
            lattice = mean_fourier_exact(sc, KERNEL, 1.0, [k]).real
            assert abs(lattice - math.exp(-0.5 * k * k)) <= 0.01
        for k in (0.5, 1.0, 2.0):
            row = _row(acceptance_runs, "two_point_mc", f"moment[t=1][k={k:g}]~lattice")
            assert row.passed
            assert abs(row.estimate - row.target) <= 4 * row.std_err


def test_criterion_4_three_point_convergence(acceptance_runs):
    with criterion(4, "three-point convergence at n=200: 4 SE against lattice 1.005, "
                      "0.02 bias allowance against the limit 1; mixed times target 0.5"):
        r = _row(acceptance_runs, "moments3", "moment[t=1;1][k=0;0]~lattice")
        assert r.target.real == pytest.approx(1.005, abs=1e-12)
        assert abs(r.estimate - r.target) <= 4 * r.std_err
        r = _row(acceptance_runs, "moments3", "moment[t=1;1][k=0;0]~csbm")
        assert r.target.real == pytest.approx(1.0, abs=1e-8)
        assert abs(r.estimate - r.target) <= 0.02 + 4 * r.std_err
        r = _row(acceptance_runs, "moments3", "moment[t=0.5;1][k=0;0]~lattice")
        assert r.target.real == pytest.approx(0.505, abs=1e-12)
        assert abs(r.estimate - r.target) <= 4 * r.std_err
        r = _row(acceptance_runs, "moments3", "moment[t=0.5;1][k=0;0]~csbm")
        assert r.target.real == pytest.approx(0.5, abs=1e-8)
        assert abs(r.estimate - r.target) <= 0.02 + 4 * r.std_err
        # weighted form of the same mixed-time moment
        r = _row(acceptance_runs, "moments3", "weighted[s=0.5][t=1][k=0]~csbm")
        assert r.target.real == pytest.approx(0.5, abs=1e-8)
        assert abs(r.estimate - r.target) <= 0.02 + 4 * r.std_err
        assert _row(acceptance_runs, "moments3",
                    "weighted[s=0.5][t=1][k=0]~lattice").passed


def test_criterion_5_survival_condition(acceptance_runs):
    with criterion(5, "survival weight at n=200, R=2e6 lands in [1.8, 2.2] around 2"):
        r = _row(acceptance_runs, "survival", "survival[eps=1]~csbm")
        assert 1.8 <= r.estimate.real <= 2.2
        assert r.passed
        assert _row(acceptance_runs, "survival", "survival[eps=1]~lattice").passed


def test_criterion_6_exponential_mass_law(acceptance_runs):
    with criterion(6, "conditional mass given survival: >= 1e4 survivors, "
                      "KS statistic <= 0.03 vs Exp(mean 1/2), mean within 0.02 + 4 SE"):
        surv = _row(acceptance_runs, "fdd", "fdd_survivors[b=1][eps=1]")
        assert surv.estimate.real >= 10_000
        ks = _row(acceptance_runs, "fdd", "fdd_ks[b=1][eps=1]~csbm")
        assert ks.estimate.real <= 0.03
        assert ks.passed
        mean = _row(acceptance_runs, "fdd", "fdd_mean[b=1][eps=1]~csbm")
        assert abs(mean.estimate.real - 0.5) <= 0.02 + 4 * mean.std_err
        assert mean.passed


def test_criterion_7_truncated_functional(acceptance_runs):
    with criterion(7, "truncated indicator at n=200 within 0.05 of 2/e"):
        r = _row(acceptance_runs, "moments3", "truncated[s=1][level=0.5]~csbm")
        assert r.target.real == pytest.approx(2 * math.exp(-1.0), rel=1e-12)
        assert abs(r.estimate.real - 2 * math.exp(-1.0)) <= 0.05
        assert r.passed


def test_criterion_8_moment_quadrature():
    with criterion(8, "moment recursion matches p!(t/2)^(p-1) within 1e-6; "
                      "truncated exponential moment matches quadrature within 1e-9"):
        for p in (2, 3, 4):
            for t in (0.5, 1.0, 2.0):
                spec = MomentSpec((t,) * p, ((0.0,),) * p)
                assert abs(moment_function(spec).real - mass_moment(t, p)) <= 1e-6
        for eps in (0.5, 1.0, 2.0):
            for frac in (-1.0, 0.0, 0.5, 1.0, 1.5):
                theta = frac / eps
                pref = (2.0 / eps) ** 2
                ref, _ = quad(lambda x: pref * math.exp((theta - 2.0 / eps) * x), 0, np.inf)
                assert abs(exp_moment_truncated(eps, theta) - ref) <= 1e-9


def test_criterion_9_rpoint_identity(acceptance_runs):
    with criterion(9, "raw-lattice and rescaled-path moment sums agree to 1e-9 relative"):
        report, _ = acceptance_runs["identity"][1]
        assert report.rows
        for r in report.rows:
            assert abs(r.estimate - r.target) <= 1e-9 * max(abs(r.estimate), abs(r.target))
            assert r.passed


def test_criterion_10_thread_determinism(acceptance_runs):
    with criterion(10, "full acceptance run is byte-identical for 1 and 4 threads"):
        compared = 0
        for name, entry in acceptance_runs.items():
            _, out1 = entry[1]
            _, out4 = entry[4]
            p1 = out1 / "results.csv"
            p4 = out4 / "results.csv"
            assert p1.read_bytes() == p4.read_bytes(), name
            compared += 1
        assert compared == len(ACCEPTANCE_CONFIGS)
