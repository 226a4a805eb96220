"""Benchmark problem definitions and external reference values.

The default benchmark is a two-mode start/stop problem on a scalar model:
mode 0 idles with zero payoff, mode 1 earns the signal level.  The reference
column shipped with ``table2`` transcribes external PDE benchmark values for
this configuration (they are not computed by this package).
"""

from __future__ import annotations

import copy

__all__ = [
    "benchmark_problem",
    "default_solver_params",
    "PDE_REFERENCE",
    "G_SWEEP_VALUES",
    "ACTIVE_MODE",
]

# Starting mode whose value the benchmark reports (the earning mode).
ACTIVE_MODE = 1

# Transcribed external PDE benchmark values for the default problem,
# keyed by the initial conditional mean (not computed by this package).
PDE_REFERENCE = {
    -0.5: 0.0627,
    0.0: 0.7897,
    0.5: 5.0351,
}

# G ladder used by the observation-gain sweep: no observation at all,
# then powers of two from 1/16 to 16.
G_SWEEP_VALUES = (0.0,) + tuple(2.0 ** e for e in range(-4, 5))

_BENCHMARK_PROBLEM = {
    "n1": 1,
    "m1": 1,
    "n2": 1,
    "m2": 1,
    "T": 1.0,
    "n_steps": 730,
    "F": 0.0,
    "C": 1.0,
    "G": 1.0,
    "m0": 0.0,
    "theta0": 0.0,
    "y0": 0.0,
    "modes": ["zero", "linear"],
    "costs": [[0.0, 0.01], [0.001, 0.0]],
    "nu": 0.001,
}

_DEFAULT_SOLVER = {
    "M": 5000,
    "n_steps": 730,
    "epsilon": 0.01,
    "cells_per_dim": 10,
    "quad_order": 16,
    "seed": 20260819,
    "replications": 1,
}


def benchmark_problem(m0: float = 0.0) -> dict:
    """The default two-mode benchmark problem as a plain problem dict."""
    problem = copy.deepcopy(_BENCHMARK_PROBLEM)
    problem["m0"] = float(m0)
    return problem


def default_solver_params() -> dict:
    """Solver parameters matching the benchmark configuration."""
    return dict(_DEFAULT_SOLVER)
