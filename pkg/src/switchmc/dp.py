"""Backward dynamic programming over simulated paths.

The value of running the system from grid time t_k in mode i is approximated
on the training ensemble by

    v_i(t_k, Z_ell) = max_j [ delta * fbar_j(Z_ell, t_k)
                              + E[v_j(t_{k+1}) | cell(Z_ell)] - cbar_ij(t_k) ]

with terminal value zero, where the conditional expectation is the empirical
cell average of next-step values and fbar_j is the belief-averaged payoff at
the exact path point.  Ties prefer staying in the current mode, then the
smallest mode index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filtering import CovarianceSchedule, QuadratureRule, effective_payoff_batch
from .model import ModelSpec, ModeSet, Strategy, TimeGrid
from .regress import (
    CoefficientVector,
    HypercubeBasis,
    empirical_coefficients,
    memberships,
    regress_eval,
)
from .simulate import Domain, NoiseSource, PathEnsemble, simulate_paths

__all__ = [
    "ValueSurface",
    "Policy",
    "PolicyEvaluation",
    "backward_induction",
    "value_at_origin",
    "simulate_policy",
    "bermudan_projection",
]


@dataclass(frozen=True, eq=False)
class ValueSurface:
    """Pathwise value estimates and per-time regression coefficients.

    ``values`` has shape (N+1, d, M): values[k, i, ell] estimates the value
    at grid time t_k in mode i at training path ell.  ``coeffs[k][j]`` is the
    CoefficientVector regressing mode-j values at t_{k+1} on cells at t_k,
    for k = 0..N-1.
    """

    grid: TimeGrid
    basis: HypercubeBasis
    values: np.ndarray
    coeffs: tuple

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        n_steps = self.grid.n_steps
        if values.ndim != 3 or values.shape[0] != n_steps + 1:
            raise ValueError(
                f"values must have shape (N+1, d, M) with N={n_steps}, got {values.shape}"
            )
        if len(self.coeffs) != n_steps:
            raise ValueError(f"need {n_steps} coefficient levels, got {len(self.coeffs)}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "coeffs", tuple(tuple(level) for level in self.coeffs))

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def M(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True, eq=False)
class Policy:
    """Per-cell switching decisions: choice[k, i, r] is the mode to hold over
    [t_k, t_{k+1}) when sitting in mode i within cell r.  Cells no training
    path visited default to staying."""

    grid: TimeGrid
    basis: HypercubeBasis
    choice: np.ndarray

    def __post_init__(self) -> None:
        choice = np.asarray(self.choice, dtype=np.int64)
        expected = (self.grid.n_steps, choice.shape[1], self.basis.R)
        if choice.ndim != 3 or choice.shape != expected:
            raise ValueError(f"choice must have shape {expected}, got {choice.shape}")
        d = choice.shape[1]
        if choice.size and (choice.min() < 0 or choice.max() >= d):
            raise ValueError(f"choice entries must be modes in [0, {d})")
        object.__setattr__(self, "choice", choice)


@dataclass(frozen=True)
class PolicyEvaluation:
    """Out-of-sample replay summary: mean reward, its standard error, and the
    mean number of switches per path."""

    mean: float
    stderr: float
    mean_switches: float
    n_paths: int


def _cost_block(modes: ModeSet, t: float, m, sqrt_theta, y, rule) -> np.ndarray:
    """Switching costs at time t: (d, d) for time-only costs, else (d, d, M)
    belief-averaged over the signal for state-dependent costs."""
    d = modes.d
    if not modes.allow_state_costs:
        return modes.cost_matrix(t)
    m = np.asarray(m, dtype=float)
    y = np.asarray(y, dtype=float)
    M = m.shape[0]
    if np.any(sqrt_theta):
        shifts = rule.nodes @ sqrt_theta.T
        xs = m[:, None, :] + shifts[None, :, :]
        ys = np.broadcast_to(y[:, None, :], xs.shape[:-1] + (y.shape[-1],))
        w = rule.weights
    else:
        xs, ys, w = m, y, None
    out = np.empty((d, d, M))
    for i in range(d):
        for j in range(d):
            vals = np.asarray(modes.costs(i, j, t, xs, ys), dtype=float)
            out[i, j] = vals if w is None else vals @ w
    return out


def _stay_biased_argmax(action_values: np.ndarray, current: np.ndarray | int):
    """Row-wise argmax of (d, M) action values where ties keep the current
    mode if it attains the max, otherwise take the smallest index."""
    best = action_values.max(axis=0)
    smallest = np.argmax(action_values == best[None, :], axis=0)
    if np.isscalar(current) or np.ndim(current) == 0:
        cur_vals = action_values[int(current)]
        cur = np.full(smallest.shape, int(current))
    else:
        cur = np.asarray(current)
        cur_vals = action_values[cur, np.arange(action_values.shape[1])]
    choice = np.where(cur_vals == best, cur, smallest)
    return best, choice


def backward_induction(
    ensemble: PathEnsemble,
    basis: HypercubeBasis,
    modes: ModeSet,
    schedule: CovarianceSchedule,
    rule: QuadratureRule,
):
    """Run the backward recursion on the training ensemble.

    Returns (ValueSurface, Policy).  Terminal values are zero; at each time
    the continuation is the per-cell empirical average of next-step values,
    the running payoff is integrated against the belief at the exact path
    point, and ties prefer staying then the smallest mode index.
    """
    grid = ensemble.grid
    n_steps, delta = grid.n_steps, grid.delta
    d, M, R = modes.d, ensemble.M, basis.R
    times = grid.times
    mem = memberships(ensemble, basis)

    values = np.zeros((n_steps + 1, d, M))
    coeffs: list = [None] * n_steps
    choice = np.empty((n_steps, d, R), dtype=np.int64)

    for k in range(n_steps - 1, -1, -1):
        t = float(times[k])
        ids = mem[k]
        m_k = ensemble.m_paths[:, k, :]
        y_k = ensemble.y_paths[:, k, :]
        sqrt_theta = schedule.sqrt_thetas[k]

        level = []
        cand = np.empty((d, M))
        for j in range(d):
            cv = empirical_coefficients(values[k + 1, j], ids, R)
            level.append(cv)
            fbar = effective_payoff_batch(modes, j, m_k, sqrt_theta, y_k, t, rule)
            cand[j] = delta * fbar + regress_eval(cv, ids)
        coeffs[k] = tuple(level)

        cost = _cost_block(modes, t, m_k, sqrt_theta, y_k, rule)
        cells, first = np.unique(ids, return_index=True)
        for i in range(d):
            if cost.ndim == 2:
                action = cand - cost[i][:, None]
            else:
                action = cand - cost[i]
            best, jstar = _stay_biased_argmax(action, i)
            values[k, i] = best
            choice[k, i, :] = i
            choice[k, i, cells] = jstar[first]

    surface = ValueSurface(grid=grid, basis=basis, values=values, coeffs=tuple(coeffs))
    policy = Policy(grid=grid, basis=basis, choice=choice)
    return surface, policy


def value_at_origin(
    surface: ValueSurface,
    model: ModelSpec,
    modes: ModeSet,
    schedule: CovarianceSchedule,
    rule: QuadratureRule,
) -> np.ndarray:
    """Value estimate per starting mode at the exact initial state (m0, y0).

    Applies the time-zero recursion formula at the origin point itself: the
    belief-averaged payoffs are evaluated at (m0, y0) and the continuation is
    read from the time-zero regression coefficients at the origin's cell.
    """
    basis = surface.basis
    grid = surface.grid
    d = surface.d
    delta = grid.delta
    origin = np.concatenate([model.m0, model.y0])
    origin = basis.domain.project(origin)
    cell = int(basis.cell_index(origin))
    m0 = origin[None, : model.n1]
    y0 = origin[None, model.n1:]
    sqrt_theta0 = schedule.sqrt_thetas[0]

    cand = np.empty(d)
    for j in range(d):
        fbar = effective_payoff_batch(modes, j, m0, sqrt_theta0, y0, 0.0, rule)[0]
        cand[j] = delta * fbar + float(surface.coeffs[0][j].lambdas[cell])

    cost = _cost_block(modes, 0.0, m0, sqrt_theta0, y0, rule)
    out = np.empty(d)
    for i in range(d):
        ci = cost[i] if cost.ndim == 2 else cost[i][:, 0]
        out[i] = float((cand - ci).max())
    return out


def simulate_policy(
    model: ModelSpec,
    modes: ModeSet,
    schedule: CovarianceSchedule,
    surface: ValueSurface,
    policy: Policy,
    rule: QuadratureRule,
    start_mode: int,
    M: int,
    seed: int,
    pointwise_policy: bool = True,
) -> PolicyEvaluation:
    """Replay the estimated policy on fresh paths and average the reward.

    Fresh paths come from the given seed, which callers must keep disjoint
    from the training seed.  With ``pointwise_policy`` (default) decisions
    re-run the time-k maximization at the fresh path's exact point, using the
    stored regression coefficients for continuations; otherwise decisions are
    looked up from the per-cell policy table.
    """
    grid = surface.grid
    basis = surface.basis
    n_steps, delta = grid.n_steps, grid.delta
    d = surface.d
    times = grid.times
    noise = NoiseSource("gaussian")
    m_paths, y_paths, _ = simulate_paths(model, grid, schedule, noise, seed, range(M))
    state = np.concatenate([m_paths, y_paths], axis=-1)
    state = basis.domain.project(state)
    n1 = model.n1

    mode = np.full(M, int(start_mode), dtype=np.int64)
    total = np.zeros(M)
    switches = np.zeros(M, dtype=np.int64)
    rows = np.arange(M)

    for k in range(n_steps):
        t = float(times[k])
        pts = state[:, k, :]
        ids = basis.cell_index(pts)
        m_k = pts[:, :n1]
        y_k = pts[:, n1:]
        sqrt_theta = schedule.sqrt_thetas[k]

        fbars = np.empty((d, M))
        for j in range(d):
            fbars[j] = effective_payoff_batch(modes, j, m_k, sqrt_theta, y_k, t, rule)

        cost = _cost_block(modes, t, m_k, sqrt_theta, y_k, rule)
        if pointwise_policy:
            cand = np.empty((d, M))
            for j in range(d):
                cand[j] = delta * fbars[j] + regress_eval(surface.coeffs[k][j], ids)
            if cost.ndim == 2:
                paid = cost[mode]  # (M, d)
            else:
                paid = cost[mode, :, rows]
            _, jstar = _stay_biased_argmax(cand - paid.T, mode)
        else:
            jstar = policy.choice[k][mode, ids]

        if cost.ndim == 2:
            total -= cost[mode, jstar]
        else:
            total -= cost[mode, jstar, rows]
        total += delta * fbars[jstar, rows]
        switches += jstar != mode
        mode = jstar

    mean = float(total.mean())
    stderr = float(total.std(ddof=1) / np.sqrt(M)) if M > 1 else 0.0
    return PolicyEvaluation(
        mean=mean,
        stderr=stderr,
        mean_switches=float(switches.mean()),
        n_paths=M,
    )


def bermudan_projection(strategy: Strategy, grid: TimeGrid) -> Strategy:
    """Round every switch time up to the next grid point (min t in grid >= tau)."""
    times = grid.times
    new_switches = tuple(
        (float(times[grid.ceil_index(tau)]), xi) for tau, xi in strategy.switches
    )
    return Strategy(xi0=strategy.xi0, switches=new_switches)
