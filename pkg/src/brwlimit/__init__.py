"""Critical branching random walk, its measure-valued rescaling, and the
exact canonical-measure limit quantities, with Monte Carlo verification."""

from .csbm import (DivergenceError, MomentSpec, QuadratureConfig, QuadratureError,
                   exp_moment_truncated, mass_density, mass_moment, mass_tail,
                   moment_function, survival_mass)
from .estimator import (Ensemble, EstimateWithCI, Truncated, Weighted,
                        conditional_mass_sample, empirical_moment,
                        evaluate_functionals, functional_moment, mu_expectation,
                        rpoint_identity, survival_weight)
from .harness import (ConfigError, ExperimentConfig, KsResult, Report, ReportRow,
                      convergence_table, ks_test, load_config, parse_config,
                      run_experiment)
from .measure import (Censored, FiniteMeasure, MeasurePath, ScalingConstants,
                      extinction_time, integrate, project, rescale)
from .model import (BudgetError, OffspringLaw, ParticleConfiguration, StepKernel,
                    Trajectory, exact_small_oracle, extinction_probability,
                    simulate, step_char, step_generation)
from .rng import PhiloxStream, derive_key

__version__ = "0.1.0"

__all__ = [
    "BudgetError", "Censored", "ConfigError", "DivergenceError", "Ensemble",
    "EstimateWithCI", "ExperimentConfig", "FiniteMeasure", "KsResult",
    "MeasurePath", "MomentSpec", "OffspringLaw", "ParticleConfiguration",
    "PhiloxStream", "QuadratureConfig", "QuadratureError", "Report", "ReportRow",
    "ScalingConstants", "StepKernel", "Trajectory", "Truncated", "Weighted",
    "conditional_mass_sample", "convergence_table", "derive_key",
    "empirical_moment", "evaluate_functionals", "exact_small_oracle",
    "exp_moment_truncated", "extinction_probability", "extinction_time",
    "functional_moment", "integrate", "ks_test", "load_config", "mass_density",
    "mass_moment", "mass_tail", "moment_function", "mu_expectation",
    "parse_config", "project", "rescale", "rpoint_identity", "run_experiment",
    "simulate", "step_char", "step_generation", "survival_mass",
    "survival_weight",
]
