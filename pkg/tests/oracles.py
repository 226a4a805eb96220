"""Independent reference computations used to check the solver.

Everything in this module is deliberately written from scratch against the
problem statement, using different algorithms and data layouts than the
package so that agreement is evidence of correctness rather than shared
bugs:

- exact Gaussian monomial moments via the Stein recurrence in rational
  arithmetic;
- a dense-grid dynamic program for the scalar benchmark problem, using the
  closed-form filter variance instead of simulation or regression;
- a dictionary-based exhaustive tree valuation for small two-point-noise
  instances.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np

from switchmc import load_problem
from switchmc.benchmarks import benchmark_problem


def gaussian_monomial_moment(m, theta, alpha) -> float:
    """Exact E[prod_i X_i^alpha_i] for X ~ N(m, theta), via the Stein
    recurrence E[X_i g(X)] = m_i E[g] + sum_j theta_ij E[dg/dx_j].

    Computed in rational arithmetic (floats convert exactly), so the result
    is the correctly rounded moment.
    """
    m = [Fraction(v) for v in np.asarray(m, dtype=float).ravel().tolist()]
    theta = [
        [Fraction(v) for v in row]
        for row in np.asarray(theta, dtype=float).tolist()
    ]
    alpha = tuple(int(a) for a in alpha)
    if len(m) != len(alpha) or len(theta) != len(alpha):
        raise ValueError("m, theta and alpha must share one dimension")
    if any(a < 0 for a in alpha):
        raise ValueError("alpha must be nonnegative")

    cache: dict = {}

    def moment(a: tuple) -> Fraction:
        if all(v == 0 for v in a):
            return Fraction(1)
        if a in cache:
            return cache[a]
        i = next(idx for idx, v in enumerate(a) if v > 0)
        lower = list(a)
        lower[i] -= 1
        lower = tuple(lower)
        total = m[i] * moment(lower)
        for j, count in enumerate(lower):
            if count > 0:
                lower2 = list(lower)
                lower2[j] -= 1
                total += theta[i][j] * count * moment(tuple(lower2))
        cache[a] = total
        return total

    return float(moment(alpha))


def reduced_reference_values(
    m0: float,
    n_steps: int = 730,
    c01: float = 0.01,
    c10: float = 0.001,
    n_grid: int = 2401,
    half_width: float = 6.0,
    gh_order: int = 32,
) -> tuple:
    """Dense-grid dynamic program for the scalar benchmark (idle payoff 0,
    earning payoff equal to the conditional mean, tanh filter variance).

    Works on the conditional-mean axis directly: with F = 0 and C = G = 1 the
    conditional mean is a martingale whose one-step increment on
    [t_k, t_{k+1}] is Gaussian with variance delta - (tanh(t_{k+1}) -
    tanh(t_k)), so the transition kernel is known in closed form and no
    simulation, regression or path discretization enters.  Returns the pair
    (idle value, earning value) at m0.
    """
    T = 1.0
    delta = T / n_steps
    times = np.linspace(0.0, T, n_steps + 1)
    step_var = delta - np.diff(np.tanh(times))

    grid_m = np.linspace(-half_width, half_width, n_grid)
    z, w = np.polynomial.hermite_e.hermegauss(gh_order)
    w = w / w.sum()

    v_idle = np.zeros(n_grid)
    v_earn = np.zeros(n_grid)
    for k in reversed(range(n_steps)):
        s = math.sqrt(max(step_var[k], 0.0))
        pts = np.clip(grid_m[:, None] + s * z[None, :], -half_width, half_width)
        cont_idle = np.interp(pts, grid_m, v_idle) @ w
        cont_earn = np.interp(pts, grid_m, v_earn) @ w
        stay_idle = cont_idle
        stay_earn = grid_m * delta + cont_earn
        v_idle, v_earn = (
            np.maximum(stay_idle, stay_earn - c01),
            np.maximum(stay_earn, stay_idle - c10),
        )
    return (
        float(np.interp(m0, grid_m, v_idle)),
        float(np.interp(m0, grid_m, v_earn)),
    )


def tiny_tree_value(model, modes, schedule, rule) -> list:
    """Exhaustive valuation of a scalar two-point-noise instance, organized
    as plain Python dictionaries keyed by observation-increment prefixes.

    Independent of the package's tree oracle (which vectorizes over numpy
    unique labels); only the model coefficients and the quadrature nodes are
    shared.  Practical for n_steps <= 3 (4^n paths).
    """
    grid = model.grid
    n = grid.n_steps
    if n > 3:
        raise ValueError("tiny_tree_value is for n_steps <= 3")
    delta = grid.delta
    root = math.sqrt(delta)
    d = modes.d

    fcoef = float(np.asarray(model.F)[0, 0, 0])
    ccoef = float(np.asarray(model.C)[0, 0, 0])
    gcoef = float(np.asarray(model.G)[0, 0, 0])
    m0 = float(np.asarray(model.m0)[0])
    y0 = float(np.asarray(model.y0)[0])

    paths = []
    for signs in itertools.product((-1.0, 1.0), repeat=2 * n):
        x = m0
        m = m0
        y = y0
        m_hist = [m]
        y_hist = [y]
        dy_hist = []
        for k in range(n):
            dw = signs[2 * k] * root
            du = signs[2 * k + 1] * root
            theta_k = float(schedule.thetas[k][0, 0])
            dy = gcoef * x * delta + du
            x = x + fcoef * x * delta + ccoef * dw
            m = m + fcoef * m * delta + theta_k * gcoef * (dy - gcoef * m * delta)
            y = y + dy
            m_hist.append(m)
            y_hist.append(y)
            dy_hist.append(dy)
        paths.append({"m": m_hist, "y": y_hist, "dy": tuple(dy_hist)})

    nodes = [float(v) for v in np.asarray(rule.nodes).ravel().tolist()]
    weights = [float(v) for v in np.asarray(rule.weights).ravel().tolist()]

    def payoff_bar(j, m, y, k):
        t = float(grid.times[k])
        s = float(schedule.sqrt_thetas[k][0, 0])
        total = 0.0
        for z, w in zip(nodes, weights):
            x = np.array([m + s * z])
            total += w * float(modes.payoffs[j].fn(x, np.array([y]), t))
        return total

    # Backward induction over information prefixes.  values[p][i] is the
    # mode-i value seen by path p at the current step; groups of paths that
    # share a dy prefix must agree on it by construction.
    values = [[0.0] * d for _ in paths]
    for k in reversed(range(n)):
        cost = np.asarray(modes.cost_matrix(float(grid.times[k])), dtype=float)
        groups: dict = {}
        for p, path in enumerate(paths):
            groups.setdefault(path["dy"][:k], []).append(p)
        new_values = [None] * len(paths)
        for members in groups.values():
            cont = [
                sum(values[p][j] for p in members) / len(members)
                for j in range(d)
            ]
            ref = paths[members[0]]
            cand = [
                payoff_bar(j, ref["m"][k], ref["y"][k], k) * delta + cont[j]
                for j in range(d)
            ]
            vals = [
                max(cand[j] - float(cost[i, j]) for j in range(d))
                for i in range(d)
            ]
            for p in members:
                new_values[p] = list(vals)
        values = new_values
    return values[0]


def make_benchmark(n_steps: int = 730, m0: float = 0.0, **overrides):
    """The standard scalar test problem as (model, modes), with optional
    coefficient overrides (e.g. G=0.0, C=0.0, theta0=1.0)."""
    problem = benchmark_problem(m0=m0)
    problem["n_steps"] = int(n_steps)
    problem.update(overrides)
    return load_problem(problem)
