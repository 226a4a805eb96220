"""Exact small-instance oracles used to validate the Monte Carlo solver.

For scalar models driven by two-point noise the full noise tree (4 branches
per step) can be enumerated, so the dynamic program can be solved with exact
conditional expectations: paths are grouped by their observation-increment
history and continuation values are averaged within each group.  Closed-form
values for special configurations are also provided.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .filtering import CovarianceSchedule, QuadratureRule, effective_payoff_batch
from .model import ModelSpec, ModeSet, TimeGrid
from .simulate import NoiseSource, simulate_paths

__all__ = [
    "OracleRefusal",
    "TreeSpec",
    "tree_oracle_value",
    "riccati_reference",
    "no_switch_value",
]

_MAX_TREE_STEPS = 8


class OracleRefusal(ValueError):
    """The oracle does not cover the requested configuration."""


@dataclass(frozen=True, eq=False)
class TreeSpec:
    """A scalar problem small enough for exhaustive two-point enumeration.

    Requires n1 = m1 = n2 = m2 = 1 and at most 8 steps, so the full tree has
    4^n_steps <= 65536 leaves.
    """

    model: ModelSpec
    modes: ModeSet

    def __post_init__(self) -> None:
        m = self.model
        if (m.n1, m.m1, m.n2, m.m2) != (1, 1, 1, 1):
            raise OracleRefusal(
                f"tree oracle requires a scalar model, got dimensions "
                f"(n1, m1, n2, m2) = ({m.n1}, {m.m1}, {m.n2}, {m.m2})"
            )
        if m.n_steps > _MAX_TREE_STEPS:
            raise OracleRefusal(
                f"tree oracle limited to {_MAX_TREE_STEPS} steps "
                f"(4^{m.n_steps} leaves requested)"
            )

    @property
    def n_leaves(self) -> int:
        return 4 ** self.model.n_steps


def tree_oracle_value(
    spec: TreeSpec,
    schedule: CovarianceSchedule,
    rule: QuadratureRule,
) -> np.ndarray:
    """Value per starting mode from the exhaustive two-point noise tree.

    All 4^N sign patterns are simulated with the solver's own recursions;
    the backward induction then uses exact conditional expectations, grouping
    paths by their observation-increment history and averaging continuation
    values within each group (every pattern is equally likely).
    """
    model, modes = spec.model, spec.modes
    grid = model.grid
    n_steps, delta = grid.n_steps, grid.delta
    d = modes.d
    M = spec.n_leaves
    times = grid.times

    m_paths, y_paths, _ = simulate_paths(
        model, grid, schedule, NoiseSource("two_point"), seed=0, path_ids=range(M)
    )
    dy = np.diff(y_paths[:, :, 0], axis=1)  # (M, N)

    # labels[k][ell]: group of path ell under equality of its first k
    # observation increments.  k = 0 puts every path in one group.
    labels = [np.zeros(M, dtype=np.int64)]
    for k in range(n_steps):
        pairs = np.stack([labels[k].astype(float), dy[:, k]], axis=1)
        _, inverse = np.unique(pairs, axis=0, return_inverse=True)
        labels.append(inverse.astype(np.int64))

    values = np.zeros((d, M))
    for k in range(n_steps - 1, -1, -1):
        t = float(times[k])
        lab = labels[k]
        n_groups = int(lab.max()) + 1
        counts = np.bincount(lab, minlength=n_groups)
        m_k = m_paths[:, k, :]
        y_k = y_paths[:, k, :]
        sqrt_theta = schedule.sqrt_thetas[k]

        cand = np.empty((d, M))
        for j in range(d):
            sums = np.bincount(lab, weights=values[j], minlength=n_groups)
            cont = (sums / counts)[lab]
            fbar = effective_payoff_batch(modes, j, m_k, sqrt_theta, y_k, t, rule)
            cand[j] = delta * fbar + cont

        cost = modes.cost_matrix(t)
        new_values = np.empty((d, M))
        for i in range(d):
            new_values[i] = (cand - cost[i][:, None]).max(axis=0)
        values = new_values

    # At time zero every path shares the initial state and group.
    return values[:, 0].copy()


def riccati_reference(model: ModelSpec, t) -> np.ndarray:
    """Closed-form conditional variance tanh(t) for the scalar model with
    F = 0, C = G = 1 and zero initial variance.  Refuses anything else."""
    m = model
    if (m.n1, m.m1, m.n2, m.m2) != (1, 1, 1, 1):
        raise OracleRefusal("closed-form variance requires a scalar model")
    if np.any(m.F != 0.0) or np.any(m.C != 1.0) or np.any(m.G != 1.0):
        raise OracleRefusal(
            "closed-form variance requires F = 0 and C = G = 1 at all times"
        )
    if np.any(m.theta0 != 0.0):
        raise OracleRefusal("closed-form variance requires zero initial variance")
    return np.tanh(np.asarray(t, dtype=float))


def no_switch_value(model: ModelSpec, modes: ModeSet, start_mode: int) -> float:
    """Exact value of never switching, for payoffs with a closed-form mean.

    Covers the registry payoffs 'linear' (requires F = 0, giving m0 * T) and
    'zero' (giving 0).  Refuses other payoffs or nonzero drift.
    """
    payoff = modes.payoffs[start_mode]
    if payoff.name == "zero":
        return 0.0
    if payoff.name == "linear":
        if np.any(model.F != 0.0):
            raise OracleRefusal(
                "no-switch value for the linear payoff requires F = 0"
            )
        return float(model.m0[0]) * model.T
    raise OracleRefusal(
        f"no closed-form no-switch value for payoff '{payoff.name}'"
    )
