"""Age grids, sampled age functions, model parameters, and simulator state.

The population density f(a, t) lives on a uniform age grid over [0, A].
All integrals in the package use composite trapezoid quadrature on that
grid; equilibrium construction and the transport step share the same
cumulative-trapezoid antiderivative of the mortality rate, which is what
makes the computed equilibrium an exact fixed point of the discrete
dynamics rather than an approximate one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import exprfn


class ModelError(ValueError):
    pass


class GridMismatchError(ModelError):
    pass


class PositivityError(ModelError):
    pass


@dataclass(frozen=True)
class AgeGrid:
    """Uniform grid of n cells (n+1 nodes) on [0, A]."""

    A: float
    n: int
    nodes: np.ndarray = field(init=False, compare=False, repr=False)
    weights: np.ndarray = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if not (isinstance(self.A, (int, float)) and math.isfinite(self.A) and self.A > 0):
            raise ModelError(f"maximum age must be finite and positive, got {self.A!r}")
        if not (isinstance(self.n, int) and self.n >= 8):
            raise ModelError(f"need at least 8 cells, got {self.n!r}")
        # composite trapezoid weights
        w = np.full(self.n + 1, self.da)
        w[0] = w[-1] = 0.5 * self.da
        object.__setattr__(self, "nodes", _freeze(np.linspace(0.0, self.A, self.n + 1)))
        object.__setattr__(self, "weights", _freeze(w))

    @property
    def da(self) -> float:
        return self.A / self.n


def _freeze(values: np.ndarray) -> np.ndarray:
    out = np.array(values, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class AgeFunction:
    """Values of a function of age sampled at the grid nodes."""

    grid: AgeGrid
    values: np.ndarray

    def __post_init__(self):
        values = _freeze(self.values)
        if values.shape != (self.grid.n + 1,):
            raise ModelError(
                f"expected {self.grid.n + 1} node values, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ModelError("age function has non-finite node values")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_callable(cls, grid: AgeGrid, fn) -> "AgeFunction":
        return cls(grid, np.array([fn(a) for a in grid.nodes], dtype=float))

    @classmethod
    def from_expression(cls, grid: AgeGrid, text: str) -> "AgeFunction":
        node = exprfn.parse(text)
        return cls.from_callable(grid, lambda a: exprfn.evaluate(node, a))

    @classmethod
    def from_table(cls, grid: AgeGrid, ages, vals) -> "AgeFunction":
        """Linear interpolation of (age, value) pairs onto the grid nodes."""
        ages = np.asarray(ages, dtype=float)
        vals = np.asarray(vals, dtype=float)
        if ages.ndim != 1 or ages.shape != vals.shape or ages.size < 2:
            raise ModelError("table needs two parallel 1-d arrays with at least 2 rows")
        if np.any(np.diff(ages) <= 0):
            raise ModelError("table ages must be strictly increasing")
        if ages[0] > 0 or ages[-1] < grid.A:
            raise ModelError(f"table must cover [0, {grid.A}]")
        return cls(grid, np.interp(grid.nodes, ages, vals))


def quad(fn: AgeFunction) -> float:
    """Trapezoid integral of an age function over [0, A]."""
    return float(np.dot(fn.grid.weights, fn.values))


def weighted_quad(weight: AgeFunction, fn: AgeFunction) -> float:
    """Trapezoid integral of weight * fn; both must share one grid."""
    if weight.grid != fn.grid:
        raise GridMismatchError(
            f"weight sampled on (A={weight.grid.A}, n={weight.grid.n}) but "
            f"integrand on (A={fn.grid.A}, n={fn.grid.n})"
        )
    return float(np.dot(weight.grid.weights, weight.values * fn.values))


def cumulative_quad(fn: AgeFunction) -> np.ndarray:
    """Running trapezoid antiderivative: out[i] integrates fn over [0, a_i]."""
    v = fn.values
    da = fn.grid.da
    cells = 0.5 * da * (v[1:] + v[:-1])
    out = np.empty(v.size)
    out[0] = 0.0
    np.cumsum(cells, out=out[1:])
    return out


def tail_quad(fn: AgeFunction) -> np.ndarray:
    """Running trapezoid integral of fn over [a_i, A]; out[-1] = 0."""
    total = cumulative_quad(fn)
    return total[-1] - total


def derivative(fn: AgeFunction) -> np.ndarray:
    """Second-order finite differences of sampled node values."""
    return np.gradient(fn.values, fn.grid.da, edge_order=2)


def derivative_from_expression(grid: AgeGrid, text: str, refine: int = 10) -> np.ndarray:
    """Central differences of an expression at step da/refine.

    Interior nodes use the symmetric stencil; the endpoints use the
    second-order one-sided stencil so the evaluation never leaves [0, A].
    """
    node = exprfn.parse(text)

    def p(a: float) -> float:
        return exprfn.evaluate(node, a)

    h = grid.da / refine
    out = np.empty(grid.n + 1)
    for i, a in enumerate(grid.nodes):
        if a - h < 0:
            out[i] = (-3 * p(a) + 4 * p(a + h) - p(a + 2 * h)) / (2 * h)
        elif a + h > grid.A:
            out[i] = (3 * p(a) - 4 * p(a - h) + p(a - 2 * h)) / (2 * h)
        else:
            out[i] = (p(a + h) - p(a - h)) / (2 * h)
    return out


@dataclass(frozen=True)
class ModelParams:
    """Mortality mu, birth kernel k, output weight p, boundary scale M.

    ``p_prime`` is the sampled derivative of p, used by the measurement
    removal term ptilde = p' - p*mu.  Builders that know p as an
    expression pass a refined-sampling derivative; otherwise it defaults
    to finite differences of the node values.
    """

    grid: AgeGrid
    mu: AgeFunction
    k: AgeFunction
    p: AgeFunction
    M: float = 1.0
    p_prime: AgeFunction | None = None

    def __post_init__(self):
        for name, fn in (("mu", self.mu), ("k", self.k), ("p", self.p)):
            if fn.grid != self.grid:
                raise GridMismatchError(f"{name} is sampled on a different grid")
            if np.any(fn.values < 0):
                raise ModelError(f"{name} must be nonnegative on [0, A]")
        if quad(self.p) <= 0:
            raise ModelError("output weight p must have positive integral")
        if quad(self.k) <= 0:
            raise ModelError("birth kernel k must have positive integral")
        if not (math.isfinite(self.M) and self.M > 0):
            raise ModelError(f"boundary scale M must be positive, got {self.M!r}")
        if self.p_prime is None:
            object.__setattr__(
                self, "p_prime", AgeFunction(self.grid, derivative(self.p))
            )
        elif self.p_prime.grid != self.grid:
            raise GridMismatchError("p_prime is sampled on a different grid")


def ptilde(params: ModelParams) -> AgeFunction:
    """Removal weight p' - p*mu appearing in the output derivative."""
    return AgeFunction(
        params.grid, params.p_prime.values - params.p.values * params.mu.values
    )


def output(f: AgeFunction, params: ModelParams) -> float:
    """Measured output y = integral of p * f."""
    return weighted_quad(params.p, f)


def bc_residual(f: AgeFunction, params: ModelParams) -> float:
    """Relative renewal defect |f(0) - integral(k f)| / max(1, f(0))."""
    births = weighted_quad(params.k, f)
    return abs(f.values[0] - births) / max(1.0, abs(f.values[0]))


@dataclass(frozen=True)
class SimState:
    """Population profile, dilution rate, and clock time.

    Profiles must be strictly positive at every node; the renewal
    boundary condition is enforced by the solver, not here, because
    initial data is allowed to violate it (the mismatch is reported and
    transported out of the domain).
    """

    f: AgeFunction
    D: float
    t: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.D):
            raise ModelError(f"dilution rate must be finite, got {self.D!r}")
        if not math.isfinite(self.t):
            raise ModelError(f"time must be finite, got {self.t!r}")
        bad = np.where(self.f.values <= 0)[0]
        if bad.size:
            i = int(bad[0])
            raise PositivityError(
                f"profile not strictly positive at node {i} (a={self.f.grid.nodes[i]:g})"
            )
