"""Shared fixtures: small, fast instances of the standard scalar problem."""

from __future__ import annotations

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from oracles import make_benchmark  # noqa: E402

from switchmc import build_quadrature, solve_riccati  # noqa: E402


@pytest.fixture(scope="session")
def small_problem():
    """Benchmark coefficients on a coarse 20-step grid (cheap to solve)."""
    model, modes = make_benchmark(n_steps=20)
    return model, modes


@pytest.fixture(scope="session")
def small_schedule(small_problem):
    model, _ = small_problem
    return solve_riccati(model, model.grid)


@pytest.fixture(scope="session")
def rule16():
    return build_quadrature(1, 16)
