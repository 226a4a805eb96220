"""Conditional-law propagation: Riccati covariance schedule, mean updates,
and Gaussian quadrature for belief-averaged payoffs.

Under the linear model the conditional law of the signal given observations
is Gaussian N(m_t, theta_t).  The covariance theta_t solves a matrix Riccati
ODE and is deterministic, so it is integrated once per problem; the mean m_t
follows a linear recursion driven by observation increments.  Expectations
against the belief reduce to Gaussian quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import ndtri
from scipy.stats import qmc

from .model import ModelSpec, ModeSet, TimeGrid

__all__ = [
    "IntegrationError",
    "EvaluationError",
    "GaussianBelief",
    "CovarianceSchedule",
    "QuadratureRule",
    "psd_sqrt",
    "build_quadrature",
    "solve_riccati",
    "default_substeps",
    "rowwise_matvec",
    "mean_step",
    "gauss_expectation",
    "effective_payoff",
    "effective_payoff_batch",
]

# Entry magnitude beyond which Riccati integration is declared divergent.
_BLOWUP = 1e12
# Eigenvalue floor when clipping covariance matrices to the PSD cone.
_EIG_FLOOR = 0.0
# Tolerance for the sqrt factor consistency check.
_SQRT_ATOL = 1e-10
# Dimension above which tensorized Gauss-Hermite is replaced by Halton nodes.
_TENSOR_MAX_DIM = 3
# Number of Halton nodes used in high dimension.
_HALTON_POINTS = 2 ** 12


class IntegrationError(RuntimeError):
    """Riccati integration diverged or produced non-finite entries."""


class EvaluationError(RuntimeError):
    """An integrand returned a non-finite value at a quadrature node."""


def psd_sqrt(theta: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition with eigenvalue clipping."""
    theta = np.asarray(theta, dtype=float)
    sym = 0.5 * (theta + theta.T)
    vals, vecs = np.linalg.eigh(sym)
    vals = np.clip(vals, _EIG_FLOOR, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """Conditional law N(m, theta) of the signal given observations."""

    m: np.ndarray
    theta: np.ndarray

    def __post_init__(self) -> None:
        m = np.atleast_1d(np.asarray(self.m, dtype=float))
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim == 0:
            theta = theta.reshape(1, 1)
        n1 = m.shape[0]
        if theta.shape != (n1, n1):
            raise ValueError(f"theta must have shape ({n1}, {n1}), got {theta.shape}")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "theta", theta)

    @property
    def n1(self) -> int:
        return self.m.shape[0]


@dataclass(frozen=True, eq=False)
class CovarianceSchedule:
    """Conditional covariances theta_{t_k} and their PSD square roots, k=0..N."""

    thetas: np.ndarray
    sqrt_thetas: np.ndarray

    def __post_init__(self) -> None:
        thetas = np.asarray(self.thetas, dtype=float)
        sqrts = np.asarray(self.sqrt_thetas, dtype=float)
        if thetas.ndim != 3 or thetas.shape[1] != thetas.shape[2]:
            raise ValueError(f"thetas must have shape (N+1, n1, n1), got {thetas.shape}")
        if sqrts.shape != thetas.shape:
            raise ValueError(
                f"sqrt_thetas shape {sqrts.shape} does not match thetas shape {thetas.shape}"
            )
        recon = np.einsum("kij,klj->kil", sqrts, sqrts)
        err = float(np.abs(recon - thetas).max())
        if err > _SQRT_ATOL:
            raise ValueError(
                f"sqrt_thetas inconsistent with thetas: max |S S^T - theta| = {err:.3e}"
            )
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "sqrt_thetas", sqrts)

    @classmethod
    def from_thetas(cls, thetas: np.ndarray) -> "CovarianceSchedule":
        thetas = np.asarray(thetas, dtype=float)
        sqrts = np.stack([psd_sqrt(th) for th in thetas])
        return cls(thetas=thetas, sqrt_thetas=sqrts)

    @property
    def n_steps(self) -> int:
        return self.thetas.shape[0] - 1

    def belief(self, k: int, m: np.ndarray) -> GaussianBelief:
        return GaussianBelief(m=m, theta=self.thetas[k])


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes z_q in R^dim and weights summing to one for N(0, I) expectations.

    Gauss-Hermite rules store their nodes in mirror-paired order (each node
    immediately followed by its reflection through the origin, after an
    optional leading self-mirrored center node).  ``weighted_sum`` exploits
    that layout so integrands odd around a zero mean cancel exactly in
    floating point instead of leaving roundoff residue.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "gauss-hermite"

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.ndim != 2:
            raise ValueError(f"nodes must have shape (n_nodes, dim), got {nodes.shape}")
        if weights.shape != (nodes.shape[0],):
            raise ValueError(
                f"weights must have shape ({nodes.shape[0]},), got {weights.shape}"
            )
        total = float(weights.sum())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {total}")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def _mirror_paired(self) -> bool:
        n = self.n_nodes
        if self.kind != "gauss-hermite" or n < 2:
            return False
        lead = n % 2
        return bool(np.array_equal(self.nodes[lead::2], -self.nodes[lead + 1::2]))

    def weighted_sum(self, vals: np.ndarray) -> np.ndarray:
        """Weighted node sum over the last axis of ``vals`` (..., n_nodes).

        For mirror-paired rules each (+z, -z) pair is added first, so odd
        contributions cancel bitwise rather than accumulating roundoff.
        """
        p = np.asarray(vals, dtype=float) * self.weights
        if self._mirror_paired:
            lead = self.n_nodes % 2
            out = (p[..., lead::2] + p[..., lead + 1::2]).sum(axis=-1)
            if lead:
                out = out + p[..., 0]
            return out
        return p.sum(axis=-1)


def build_quadrature(dim: int, order: int = 16) -> QuadratureRule:
    """Quadrature for standard Gaussian expectations in ``dim`` dimensions.

    Up to dimension 3 this is the tensor product of one-dimensional
    Gauss-Hermite rules with ``order`` nodes per axis (exact on polynomials of
    per-axis degree <= 2*order - 1).  In higher dimension it falls back to a
    fixed Halton sequence mapped through the Gaussian quantile function.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if dim <= _TENSOR_MAX_DIM:
        z1, w1 = hermegauss(order)
        # Restore the exact +-z symmetry the rule has in exact arithmetic.
        z1 = 0.5 * (z1 - z1[::-1])
        w1 = 0.5 * (w1 + w1[::-1])
        w1 = w1 / w1.sum()
        grids = np.meshgrid(*([z1] * dim), indexing="ij")
        nodes = np.stack([g.reshape(-1) for g in grids], axis=-1)
        wgrids = np.meshgrid(*([w1] * dim), indexing="ij")
        weights = np.ones(nodes.shape[0])
        for wg in wgrids:
            weights = weights * wg.reshape(-1)
        weights = weights / weights.sum()
        order_idx = _mirror_pair_order(order, dim)
        return QuadratureRule(
            nodes=nodes[order_idx], weights=weights[order_idx], kind="gauss-hermite"
        )
    sampler = qmc.Halton(d=dim, scramble=False)
    sampler.fast_forward(1)  # skip the origin, whose quantile is -inf
    u = sampler.random(_HALTON_POINTS)
    nodes = ndtri(u)
    weights = np.full(_HALTON_POINTS, 1.0 / _HALTON_POINTS)
    return QuadratureRule(nodes=nodes, weights=weights, kind="halton")


def _mirror_pair_order(order: int, dim: int) -> np.ndarray:
    """Node permutation putting each tensor node next to its reflection.

    The optional self-mirrored center node (odd 1-D order only) comes first;
    after it, positions 2i and 2i+1 hold a node and its negation.
    """
    n = order ** dim
    flat = np.arange(n).reshape([order] * dim)
    mirror = flat[(slice(None, None, -1),) * dim].reshape(-1)
    visited = np.zeros(n, dtype=bool)
    center = []
    pairs = []
    for i in range(n):
        if visited[i]:
            continue
        j = int(mirror[i])
        visited[i] = True
        if j == i:
            center.append(i)
        else:
            visited[j] = True
            pairs.extend((i, j))
    return np.array(center + pairs, dtype=np.int64)


def default_substeps(grid: TimeGrid) -> int:
    """Substeps per grid interval so the RK4 step is at most 1e-3."""
    return max(1, math.ceil(grid.delta / 1e-3))


def rowwise_matvec(mat: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Apply ``mat`` (r, n) to each row of ``vecs`` (..., n), giving (..., r).

    Uses an explicit fixed-order accumulation over the small coefficient
    dimensions so results for a given row are bit-identical no matter how the
    rows are batched.  Matrix dimensions here are model dimensions (a few at
    most), so the Python loop is cheap.
    """
    mat = np.asarray(mat, dtype=float)
    vecs = np.asarray(vecs, dtype=float)
    r, n = mat.shape
    out = np.empty(vecs.shape[:-1] + (r,))
    for i in range(r):
        acc = mat[i, 0] * vecs[..., 0]
        for j in range(1, n):
            acc = acc + mat[i, j] * vecs[..., j]
        out[..., i] = acc
    return out


def _riccati_rhs(theta: np.ndarray, F: np.ndarray, CC: np.ndarray, GG: np.ndarray) -> np.ndarray:
    return F @ theta + theta @ F.T - theta @ GG @ theta + CC


def solve_riccati(model: ModelSpec, grid: TimeGrid, substeps: int | None = None) -> CovarianceSchedule:
    """Integrate d theta/dt = F theta + theta F^T - theta G^T G theta + C C^T.

    Classical RK4 with ``substeps`` sub-intervals per grid interval
    (default: enough for a step of at most 1e-3).  Coefficients are held at
    their interval value.  After every substep the iterate is symmetrized and
    eigenvalue-clipped back to the PSD cone.  Entries exceeding 1e12 in
    magnitude raise IntegrationError.
    """
    if substeps is None:
        substeps = default_substeps(grid)
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    n_steps = grid.n_steps
    thetas = np.empty((n_steps + 1, model.n1, model.n1))
    theta = 0.5 * (model.theta0 + model.theta0.T)
    vals, vecs = np.linalg.eigh(theta)
    theta = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    thetas[0] = theta
    h = grid.delta / substeps
    for k in range(n_steps):
        F = model.F[k]
        CC = model.C[k] @ model.C[k].T
        GG = model.G[k].T @ model.G[k]
        for _ in range(substeps):
            k1 = _riccati_rhs(theta, F, CC, GG)
            k2 = _riccati_rhs(theta + 0.5 * h * k1, F, CC, GG)
            k3 = _riccati_rhs(theta + 0.5 * h * k2, F, CC, GG)
            k4 = _riccati_rhs(theta + h * k3, F, CC, GG)
            theta = theta + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            theta = 0.5 * (theta + theta.T)
            if not np.all(np.isfinite(theta)) or np.abs(theta).max() > _BLOWUP:
                raise IntegrationError(
                    f"Riccati integration diverged on interval [{grid.times[k]:g}, "
                    f"{grid.times[k + 1]:g}] (max |entry| > {_BLOWUP:g})"
                )
            vals, vecs = np.linalg.eigh(theta)
            if vals.min() < 0.0:
                theta = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        thetas[k + 1] = theta
    return CovarianceSchedule.from_thetas(thetas)


def mean_step(
    m: np.ndarray,
    dy: np.ndarray,
    theta: np.ndarray,
    F: np.ndarray,
    G: np.ndarray,
    delta: float,
) -> np.ndarray:
    """One Euler step of the conditional mean recursion.

    m_next = m + F m delta + theta G^T (dy - G m delta), vectorized over
    leading axes of ``m`` (..., n1) and ``dy`` (..., n2).
    """
    m = np.asarray(m, dtype=float)
    dy = np.asarray(dy, dtype=float)
    drift = rowwise_matvec(F, m)
    innov = dy - rowwise_matvec(G, m) * delta
    gain = np.asarray(theta, dtype=float) @ np.asarray(G, dtype=float).T
    return m + drift * delta + rowwise_matvec(gain, innov)


def gauss_expectation(phi, belief: GaussianBelief, rule: QuadratureRule) -> float:
    """E[phi(X)] for X ~ N(m, theta) via quadrature at m + sqrt(theta) z_q.

    ``phi`` must accept an array of shape (n_nodes, n1) and return (n_nodes,).
    A zero covariance short-circuits to a single evaluation at the mean.
    Non-finite integrand values raise EvaluationError naming the node.
    """
    m = belief.m
    if not np.any(belief.theta):
        val = np.asarray(phi(m[None, :]), dtype=float).reshape(-1)
        if not np.isfinite(val[0]):
            raise EvaluationError(f"integrand not finite at the mean {m}")
        return float(val[0])
    if rule.dim != belief.n1:
        raise ValueError(f"rule dimension {rule.dim} does not match belief dimension {belief.n1}")
    sqrt_theta = psd_sqrt(belief.theta)
    points = m[None, :] + rule.nodes @ sqrt_theta.T
    vals = np.asarray(phi(points), dtype=float).reshape(-1)
    if vals.shape != (rule.n_nodes,):
        raise ValueError(
            f"integrand returned shape {np.shape(phi(points))}, expected ({rule.n_nodes},)"
        )
    bad = ~np.isfinite(vals)
    if bad.any():
        q = int(np.argmax(bad))
        raise EvaluationError(
            f"integrand not finite at quadrature node {q} (point {points[q]})"
        )
    return float(rule.weighted_sum(vals))


def effective_payoff(
    modes: ModeSet,
    j: int,
    belief: GaussianBelief,
    y: np.ndarray,
    t: float,
    rule: QuadratureRule,
) -> float:
    """Belief-averaged payoff of mode j at observation state y and time t."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    payoff = modes.payoffs[j]

    def phi(points: np.ndarray) -> np.ndarray:
        ys = np.broadcast_to(y, points.shape[:-1] + y.shape)
        return payoff(points, ys, t)

    return gauss_expectation(phi, belief, rule)


def effective_payoff_batch(
    modes: ModeSet,
    j: int,
    m_batch: np.ndarray,
    sqrt_theta: np.ndarray,
    y_batch: np.ndarray,
    t: float,
    rule: QuadratureRule,
) -> np.ndarray:
    """Belief-averaged payoff of mode j at many (m, y) points sharing one
    covariance factor.  Returns shape (M,) for inputs (M, n1) and (M, n2)."""
    m_batch = np.asarray(m_batch, dtype=float)
    y_batch = np.asarray(y_batch, dtype=float)
    payoff = modes.payoffs[j]
    if not np.any(sqrt_theta):
        vals = np.asarray(payoff(m_batch, y_batch, t), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise EvaluationError(f"payoff of mode {j} not finite at some mean point")
        return vals
    # points: (M, n_nodes, n1)
    shifts = rule.nodes @ sqrt_theta.T
    points = m_batch[:, None, :] + shifts[None, :, :]
    ys = np.broadcast_to(y_batch[:, None, :], points.shape[:-1] + (y_batch.shape[-1],))
    vals = np.asarray(payoff(points, ys, t), dtype=float)
    if vals.shape != points.shape[:-1]:
        raise ValueError(
            f"payoff of mode {j} returned shape {vals.shape}, expected {points.shape[:-1]}"
        )
    if not np.all(np.isfinite(vals)):
        raise EvaluationError(f"payoff of mode {j} not finite at some quadrature node")
    return rule.weighted_sum(vals)
