"""Problem specification: dimensions, coefficient schedules, mode set, time grid.

A problem instance is a linear signal/observation pair

    dX_t = F_t X_t dt + C_t dW_t        (hidden signal, dim n1)
    dY_t = G_t X_t dt + dU_t            (observation, dim n2)

together with a finite set of operating modes, each carrying a running payoff
f_i(x, y, t) and pairwise switching costs c(i, j, t).  Everything here is a
plain immutable value object; the solver modules consume them read-only.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "TimeGrid",
    "ModelSpec",
    "PayoffSpec",
    "ModeSet",
    "Strategy",
    "ValidationReport",
    "payoff_from_registry",
    "as_payoff",
    "validate",
    "switch_count_bound",
    "floor_time",
    "load_problem",
]

# Tolerance used for symmetry / PSD / triangle-inequality checks.
_CHECK_ATOL = 1e-10
# Relative slack when snapping times to the grid (guards float division noise).
_GRID_SNAP = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < t_1 < ... < t_N = T with spacing delta = T/N."""

    T: float
    n_steps: int

    def __post_init__(self) -> None:
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got T={self.T}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def delta(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)

    def floor_index(self, t: float) -> int:
        """Index of the largest grid point <= t.  Errors outside [0, T]."""
        if t < -self.T * _GRID_SNAP or t > self.T * (1.0 + _GRID_SNAP):
            raise ValueError(f"time {t} outside [0, {self.T}]")
        k = int(np.floor(t / self.delta + _GRID_SNAP))
        return min(max(k, 0), self.n_steps)

    def ceil_index(self, t: float) -> int:
        """Index of the smallest grid point >= t.  Errors outside [0, T]."""
        if t < -self.T * _GRID_SNAP or t > self.T * (1.0 + _GRID_SNAP):
            raise ValueError(f"time {t} outside [0, {self.T}]")
        k = int(np.ceil(t / self.delta - _GRID_SNAP))
        return min(max(k, 0), self.n_steps)


def floor_time(t: float, grid: TimeGrid) -> float:
    """Largest grid point <= t (the piecewise-constant evaluation time)."""
    return grid.times[grid.floor_index(t)]


def _as_schedule(name: str, value, n_steps: int, rows: int, cols: int) -> np.ndarray:
    """Coerce a coefficient input to a per-grid-point table (N+1, rows, cols).

    Accepted forms: a scalar (only when rows == cols == 1), a constant matrix
    (rows, cols), or a full table (N+1, rows, cols).  Row k is the value used
    on the interval [t_k, t_{k+1}).
    """
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        if (rows, cols) != (1, 1):
            raise ValueError(
                f"{name}: scalar shorthand only allowed for 1x1 coefficients, "
                f"expected shape ({rows}, {cols})"
            )
        arr = arr.reshape(1, 1)
    if arr.ndim == 2:
        if arr.shape != (rows, cols):
            raise ValueError(f"{name}: expected shape ({rows}, {cols}), got {arr.shape}")
        return np.broadcast_to(arr, (n_steps + 1, rows, cols)).copy()
    if arr.ndim == 3:
        if arr.shape != (n_steps + 1, rows, cols):
            raise ValueError(
                f"{name}: per-grid table must have shape ({n_steps + 1}, {rows}, {cols}), "
                f"got {arr.shape}"
            )
        return arr.astype(float, copy=True)
    raise ValueError(f"{name}: cannot interpret input of shape {arr.shape}")


def _as_vector(name: str, value, n: int) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.shape != (n,):
        raise ValueError(f"{name}: expected shape ({n},), got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Signal/observation model with piecewise-constant coefficient schedules.

    F, C, G may be given as scalars (1x1 case), constant matrices, or
    per-grid-point tables of shape (n_steps+1, rows, cols); they are stored as
    full tables, with row k the value on [t_k, t_{k+1}).
    """

    n1: int
    m1: int
    n2: int
    m2: int
    T: float
    n_steps: int
    F: np.ndarray
    C: np.ndarray
    G: np.ndarray
    m0: np.ndarray
    theta0: np.ndarray
    y0: np.ndarray

    def __post_init__(self) -> None:
        for dim_name in ("n1", "m1", "n2", "m2"):
            if getattr(self, dim_name) < 1:
                raise ValueError(f"{dim_name} must be >= 1, got {getattr(self, dim_name)}")
        if self.m1 > self.n1:
            raise ValueError(f"m1 must be <= n1, got m1={self.m1}, n1={self.n1}")
        if self.m2 > self.n2:
            raise ValueError(f"m2 must be <= n2, got m2={self.m2}, n2={self.n2}")
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got T={self.T}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        objset = object.__setattr__
        objset(self, "F", _as_schedule("F", self.F, self.n_steps, self.n1, self.n1))
        objset(self, "C", _as_schedule("C", self.C, self.n_steps, self.n1, self.m1))
        objset(self, "G", _as_schedule("G", self.G, self.n_steps, self.n2, self.n1))
        objset(self, "m0", _as_vector("m0", self.m0, self.n1))
        objset(self, "y0", _as_vector("y0", self.y0, self.n2))
        theta0 = np.asarray(self.theta0, dtype=float)
        if theta0.ndim == 0:
            theta0 = theta0.reshape(1, 1)
        if theta0.shape != (self.n1, self.n1):
            raise ValueError(
                f"theta0: expected shape ({self.n1}, {self.n1}), got {theta0.shape}"
            )
        objset(self, "theta0", theta0)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(T=self.T, n_steps=self.n_steps)

    def replace(self, **overrides) -> "ModelSpec":
        """New ModelSpec with some fields replaced (arrays re-coerced).

        Changing ``n_steps`` (or ``T``) re-grids the coefficient schedules.
        A schedule that is constant in time collapses back to a single matrix
        and is re-tiled on the new grid; a genuinely time-varying schedule
        cannot be re-gridded automatically and must be overridden explicitly.
        """
        fields = dict(
            n1=self.n1, m1=self.m1, n2=self.n2, m2=self.m2, T=self.T,
            n_steps=self.n_steps, F=self.F, C=self.C, G=self.G,
            m0=self.m0, theta0=self.theta0, y0=self.y0,
        )
        regridding = any(
            key in overrides and overrides[key] != fields[key]
            for key in ("n_steps", "T")
        )
        if regridding:
            for key in ("F", "C", "G"):
                if key in overrides:
                    continue
                table = fields[key]
                if np.all(table == table[0]):
                    fields[key] = table[0]
                else:
                    raise ValueError(
                        f"cannot re-grid time-varying schedule {key}; "
                        f"pass a new {key} alongside the grid change"
                    )
        fields.update(overrides)
        return ModelSpec(**fields)


@dataclass(frozen=True, eq=False)
class PayoffSpec:
    """A running payoff f(x, y, t), vectorized over leading axes of x and y.

    ``fn`` takes x of shape (..., n1), y of shape (..., n2) and a scalar t and
    returns an array of shape (...).  ``name``/``params`` identify registry
    payoffs so closed-form checks can recognize them; programmatic payoffs use
    name "custom".
    """

    name: str
    params: Mapping[str, float]
    fn: Callable[[np.ndarray, np.ndarray, float], np.ndarray]

    def __call__(self, x: np.ndarray, y: np.ndarray, t: float) -> np.ndarray:
        return self.fn(x, y, t)


def payoff_from_registry(name: str, **params: float) -> PayoffSpec:
    """Built-in payoffs: ``zero``, ``linear`` (first signal coordinate), and
    ``affine`` (a * first signal coordinate + b)."""
    if name == "zero":
        if params:
            raise ValueError(f"payoff 'zero' takes no parameters, got {params}")
        return PayoffSpec("zero", {}, lambda x, y, t: np.zeros(np.shape(x)[:-1]))
    if name == "linear":
        if params:
            raise ValueError(f"payoff 'linear' takes no parameters, got {params}")
        return PayoffSpec("linear", {}, lambda x, y, t: np.asarray(x)[..., 0])
    if name == "affine":
        unknown = set(params) - {"a", "b"}
        if unknown:
            raise ValueError(f"payoff 'affine' takes parameters a, b; got extras {unknown}")
        a = float(params.get("a", 1.0))
        b = float(params.get("b", 0.0))
        return PayoffSpec("affine", {"a": a, "b": b}, lambda x, y, t: a * np.asarray(x)[..., 0] + b)
    raise ValueError(f"unknown payoff '{name}' (registry: zero, linear, affine)")


def as_payoff(obj) -> PayoffSpec:
    """Coerce a registry name, parameter dict, callable, or PayoffSpec."""
    if isinstance(obj, PayoffSpec):
        return obj
    if isinstance(obj, str):
        return payoff_from_registry(obj)
    if isinstance(obj, Mapping):
        params = dict(obj)
        name = params.pop("payoff", None) or params.pop("name", None)
        if name is None:
            raise ValueError(f"payoff mapping needs a 'payoff' or 'name' key, got {obj}")
        if isinstance(name, Mapping):
            inner = dict(name)
            name = inner.pop("name")
            params.update(inner)
        return payoff_from_registry(str(name), **params)
    if callable(obj):
        return PayoffSpec("custom", {}, obj)
    raise ValueError(f"cannot interpret payoff {obj!r}")


@dataclass(frozen=True, eq=False)
class ModeSet:
    """d operating modes: payoffs f_i(x, y, t) and switching costs c(i, j, t).

    Costs are time-only by default.  With ``allow_state_costs=True`` the cost
    callable may take (i, j, t, x, y); effective costs are then integrated
    over the belief like payoffs, and a warning is logged because the value
    regularity behind the error analysis is no longer guaranteed.
    """

    payoffs: tuple
    costs: Callable
    nu: float
    allow_state_costs: bool = False

    def __post_init__(self) -> None:
        payoffs = tuple(as_payoff(p) for p in self.payoffs)
        if not payoffs:
            raise ValueError("ModeSet needs at least one mode")
        object.__setattr__(self, "payoffs", payoffs)
        costs = self.costs
        if not callable(costs):
            matrix = np.asarray(costs, dtype=float)
            d = len(payoffs)
            if matrix.shape != (d, d):
                raise ValueError(f"cost matrix must be ({d}, {d}), got {matrix.shape}")
            object.__setattr__(self, "costs", lambda i, j, t, _m=matrix: float(_m[i, j]))
        if self.allow_state_costs:
            logger.warning(
                "state-dependent switching costs enabled: Lipschitz regularity of the "
                "value function is no longer guaranteed and error scaling may degrade"
            )

    @property
    def d(self) -> int:
        return len(self.payoffs)

    def cost(self, i: int, j: int, t: float) -> float:
        return float(self.costs(i, j, t))

    def cost_matrix(self, t: float) -> np.ndarray:
        d = self.d
        out = np.empty((d, d))
        for i in range(d):
            for j in range(d):
                out[i, j] = self.costs(i, j, t)
        return out


@dataclass(frozen=True)
class Strategy:
    """Initial mode plus an ordered list of (switch time, target mode)."""

    xi0: int
    switches: tuple = ()

    def __post_init__(self) -> None:
        switches = tuple((float(tau), int(xi)) for tau, xi in self.switches)
        taus = [tau for tau, _ in switches]
        if any(b < a for a, b in zip(taus, taus[1:])):
            raise ValueError(f"switch times must be non-decreasing, got {taus}")
        object.__setattr__(self, "switches", switches)


@dataclass
class ValidationReport:
    """Outcome of ``validate``: empty ``violations`` means pass."""

    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "pass"
        return "\n".join(f"violation: {v}" for v in self.violations)


def _cost_at(modes: ModeSet, i: int, j: int, t: float, x: np.ndarray, y: np.ndarray) -> float:
    if modes.allow_state_costs:
        try:
            return float(modes.costs(i, j, t, x, y))
        except TypeError:
            return float(modes.costs(i, j, t))
    return float(modes.costs(i, j, t))


def validate(model: ModelSpec, modes: ModeSet, grid: TimeGrid) -> ValidationReport:
    """Check every structural assumption; report violations, never raise.

    State-dependent costs (when enabled) are checked at (x, y) = (m0, y0).
    """
    report = ValidationReport()
    add = report.violations.append

    if not model.T > 0:
        add(f"horizon not positive: T={model.T}")
    if abs(grid.T - model.T) > _CHECK_ATOL * max(1.0, abs(model.T)):
        add(f"grid horizon {grid.T} does not match model horizon {model.T}")
    if grid.n_steps != model.n_steps:
        add(f"grid n_steps {grid.n_steps} does not match model n_steps {model.n_steps}")
    times = grid.times
    spacings = np.diff(times)
    if not np.allclose(spacings, grid.delta, rtol=0, atol=_CHECK_ATOL * max(1.0, grid.T)):
        add("time grid is not uniform")

    theta0 = model.theta0
    if not np.allclose(theta0, theta0.T, atol=_CHECK_ATOL):
        add("theta0 is not symmetric")
    else:
        min_eig = float(np.linalg.eigvalsh(0.5 * (theta0 + theta0.T)).min())
        if min_eig < -_CHECK_ATOL:
            add(f"theta0 is not positive semi-definite (min eigenvalue {min_eig:.3e})")

    for name in ("F", "C", "G"):
        table = getattr(model, name)
        if not np.all(np.isfinite(table)):
            add(f"coefficient schedule {name} has non-finite entries")

    if not modes.nu > 0:
        add(f"nu must be positive, got {modes.nu}")

    d = modes.d
    x0, y0 = model.m0, model.y0
    try:
        for k, t in enumerate(times):
            c = np.empty((d, d))
            for i in range(d):
                for j in range(d):
                    c[i, j] = _cost_at(modes, i, j, float(t), x0, y0)
            diag = np.abs(np.diag(c))
            if diag.max(initial=0.0) > _CHECK_ATOL:
                add(f"diagonal cost nonzero at t={t:g} (max |c(i,i)| = {diag.max():.3e})")
                break
            off = c[~np.eye(d, dtype=bool)]
            if d > 1 and off.min(initial=np.inf) < modes.nu - _CHECK_ATOL:
                add(
                    f"switching cost below nu at t={t:g} "
                    f"(min off-diagonal {off.min():.3e} < nu={modes.nu:g})"
                )
                break
            tri_ok = True
            for i1 in range(d):
                for i2 in range(d):
                    for i3 in range(d):
                        if c[i1, i2] + c[i2, i3] < c[i1, i3] - _CHECK_ATOL:
                            add(
                                f"triangle inequality violated at t={t:g}: "
                                f"c({i1},{i2}) + c({i2},{i3}) = {c[i1, i2] + c[i2, i3]:g} "
                                f"< c({i1},{i3}) = {c[i1, i3]:g}"
                            )
                            tri_ok = False
                            break
                    if not tri_ok:
                        break
                if not tri_ok:
                    break
            if not tri_ok:
                break
    except Exception as exc:  # user cost callables may misbehave; report, don't raise
        add(f"cost evaluation failed: {exc}")

    return report


def switch_count_bound(modes: ModeSet, f_sup: float, T: float) -> float:
    """Upper bound 2*T*f_sup/nu on the mean number of switches of an optimal
    strategy, given a bound f_sup on sup_i |f_i| over the working domain."""
    if not modes.nu > 0:
        raise ValueError(f"invalid ModeSet: nu must be > 0, got {modes.nu}")
    if f_sup < 0:
        raise ValueError(f"f_sup must be >= 0, got {f_sup}")
    if not T > 0:
        raise ValueError(f"T must be > 0, got {T}")
    return 2.0 * T * f_sup / modes.nu


def load_problem(source) -> tuple:
    """Build (ModelSpec, ModeSet) from a JSON problem file, path, or dict.

    Expected keys: n1, m1, n2, m2, T, n_steps, F, C, G, m0, theta0, y0,
    modes (list of payoff selectors), costs (d x d matrix), nu.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    elif isinstance(source, Mapping):
        data = dict(source)
    else:
        data = json.load(source)

    required = ["n1", "m1", "n2", "m2", "T", "n_steps", "F", "C", "G",
                "m0", "theta0", "y0", "modes", "costs", "nu"]
    missing = [k for k in required if k not in data]
    if missing:
        raise ValueError(f"problem file missing keys: {missing}")

    model = ModelSpec(
        n1=int(data["n1"]), m1=int(data["m1"]),
        n2=int(data["n2"]), m2=int(data["m2"]),
        T=float(data["T"]), n_steps=int(data["n_steps"]),
        F=data["F"], C=data["C"], G=data["G"],
        m0=data["m0"], theta0=data["theta0"], y0=data["y0"],
    )
    payoffs = [as_payoff(entry) for entry in data["modes"]]
    modes = ModeSet(
        payoffs=tuple(payoffs),
        costs=np.asarray(data["costs"], dtype=float),
        nu=float(data["nu"]),
        allow_state_costs=bool(data.get("allow_state_costs", False)),
    )
    return model, modes
