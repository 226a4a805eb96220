"""Finite-horizon multi-mode optimal switching under partial information.

The solver filters a hidden linear signal from noisy observations
(Kalman-Bucy), simulates the filtered state forward, and runs a regression
Monte Carlo backward dynamic program over the operating modes.  Exact
small-instance oracles and closed-form references support validation.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .model import (
    ModelSpec,
    ModeSet,
    PayoffSpec,
    Strategy,
    TimeGrid,
    ValidationReport,
    as_payoff,
    floor_time,
    load_problem,
    payoff_from_registry,
    switch_count_bound,
    validate,
)
from .filtering import (
    CovarianceSchedule,
    EvaluationError,
    GaussianBelief,
    IntegrationError,
    QuadratureRule,
    build_quadrature,
    effective_payoff,
    gauss_expectation,
    mean_step,
    psd_sqrt,
    solve_riccati,
)
from .simulate import (
    CalibrationError,
    Domain,
    NoiseSource,
    PathEnsemble,
    SimulationError,
    build_ensemble,
    calibrate_domain,
    derive_seed,
    payoff_sup_on_domain,
    simulate_path,
    simulate_paths,
)
from .regress import (
    CoefficientVector,
    HypercubeBasis,
    IndexingError,
    PminEstimate,
    empirical_coefficients,
    estimate_pmin,
    regress_eval,
)
from .dp import (
    Policy,
    PolicyEvaluation,
    ValueSurface,
    backward_induction,
    bermudan_projection,
    simulate_policy,
    value_at_origin,
)
from .oracle import (
    OracleRefusal,
    TreeSpec,
    no_switch_value,
    riccati_reference,
    tree_oracle_value,
)

__all__ = [
    "__version__",
    "ModelSpec", "ModeSet", "PayoffSpec", "Strategy", "TimeGrid",
    "ValidationReport", "as_payoff", "floor_time", "load_problem",
    "payoff_from_registry", "switch_count_bound", "validate",
    "CovarianceSchedule", "EvaluationError", "GaussianBelief",
    "IntegrationError", "QuadratureRule", "build_quadrature",
    "effective_payoff", "gauss_expectation", "mean_step", "psd_sqrt",
    "solve_riccati",
    "CalibrationError", "Domain", "NoiseSource", "PathEnsemble",
    "SimulationError", "build_ensemble", "calibrate_domain", "derive_seed",
    "payoff_sup_on_domain", "simulate_path", "simulate_paths",
    "CoefficientVector", "HypercubeBasis", "IndexingError", "PminEstimate",
    "empirical_coefficients", "estimate_pmin", "regress_eval",
    "Policy", "PolicyEvaluation", "ValueSurface", "backward_induction",
    "bermudan_projection", "simulate_policy", "value_at_origin",
    "OracleRefusal", "TreeSpec", "no_switch_value", "riccati_reference",
    "tree_oracle_value",
]
