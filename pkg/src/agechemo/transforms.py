"""Coordinate changes that turn the population PDE into scalar dynamics.

The ergodic projection Pi(f) measures the population's size along the
equilibrium profile; its logarithm eta = ln Pi obeys the exact scalar
law  d(eta)/dt = D* - D  in open loop.  What Pi does not capture is the
shape mismatch, recorded as the history

    psi(t - a) = f(a, t) / (f*(a) Pi(f(t))) - 1,

which solves an autonomous renewal equation and decays on its own.  The
output enters the scalar picture through  ln(y/y*) = eta + v(psi)  with
v(psi) = ln(1 + integral g psi), and through the remainder functional v1
that the full-state backstepping law cancels.

For dilution rates confined to an interval (Dlo, Dhi), ``phi`` and
``phi_inv`` map between the interval and the real line so that the
controller can work with an unconstrained coordinate zeta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .equilibrium import Equilibrium
from .model import AgeFunction, ModelError, SimState, quad, weighted_quad


class TransformError(ModelError):
    pass


# --- ergodic projection and history ----------------------------------------


def pi_projection(f: AgeFunction, eq: Equilibrium) -> float:
    """Pi(f) = (integral pi f) / (integral a k f*); positive on positive f."""
    value = weighted_quad(eq.pi, f) / eq.proj_denom
    if value <= 0:
        raise TransformError(f"ergodic projection is not positive: {value!r}")
    return value


def log_projection(f: AgeFunction, eq: Equilibrium) -> float:
    """eta = ln Pi(f)."""
    return math.log(pi_projection(f, eq))


def psi_history(f: AgeFunction, eq: Equilibrium) -> AgeFunction:
    """Shape mismatch history; values[i] is psi(t - a_i), always > -1."""
    Pi = pi_projection(f, eq)
    return AgeFunction(f.grid, f.values / (eq.fstar.values * Pi) - 1.0)


def P_functional(psi: AgeFunction, eq: Equilibrium) -> float:
    """Projection residual; vanishes on histories extracted from a profile."""
    return weighted_quad(eq.ktilde_tail, psi) / eq.rinv


# --- output remainders ------------------------------------------------------


def v_functional(psi: AgeFunction, eq: Equilibrium) -> float:
    """v(psi) = ln(1 + integral g psi), the output's shape correction."""
    x = weighted_quad(eq.g, psi)
    if x <= -1.0:
        raise TransformError(f"output correction undefined: integral g psi = {x:.6g} <= -1")
    return math.log1p(x)


def v1_functional(psi: AgeFunction, eq: Equilibrium) -> float:
    """Remainder cancelled by full-state backstepping; v1(0) = 0.

    v1 = -D* - B(psi) / integral p f* (1 + psi), where B collects the
    boundary and removal terms of the output derivative:

        B = p(A) f*(A) (1 + psi(t-A)) - p(0) f*(0) (1 + psi(t))
            - integral ptilde f* (1 + psi).

    Integration by parts gives B(0) = -D* y*, hence v1(0) = 0.
    """
    p = eq.params.p.values
    fs = eq.fstar.values
    shape = 1.0 + psi.values
    den = quad(AgeFunction(psi.grid, p * fs * shape))
    if den <= 0:
        raise TransformError("output of the reconstructed profile is not positive")
    B = (
        p[-1] * fs[-1] * shape[-1]
        - p[0] * fs[0] * shape[0]
        - quad(AgeFunction(psi.grid, eq.ptilde.values * fs * shape))
    )
    return -eq.Dstar - B / den


def G_functional(psi: AgeFunction, sigma: float) -> float:
    """Weighted sup of the history, G = max |psi| e^{-sigma a} / (1 + min(0, min psi)).

    The denominator keeps G an upper bound for |v| and |v1| even when
    the history dips toward the positivity floor psi = -1.
    """
    if sigma <= 0:
        raise TransformError(f"decay weight sigma must be positive, got {sigma!r}")
    floor = 1.0 + min(0.0, float(np.min(psi.values)))
    if floor <= 0:
        raise TransformError("history reaches psi <= -1; profile lost positivity")
    weighted = np.abs(psi.values) * np.exp(-sigma * psi.grid.nodes)
    return float(np.max(weighted)) / floor


# --- dilution interval coordinates ------------------------------------------


@dataclass(frozen=True)
class DilutionBounds:
    """Open dilution interval (Dlo, Dhi) containing D*.

    Dhi may be inf, but only in the degenerate positivity-only case
    Dlo = 0, where the interval coordinate reduces to ln(D/D*).
    """

    Dlo: float
    Dhi: float
    Dstar: float

    def __post_init__(self):
        if not (self.Dlo >= 0 and math.isfinite(self.Dlo)):
            raise TransformError(f"lower dilution bound must be finite and >= 0, got {self.Dlo!r}")
        if not self.Dhi > self.Dlo:
            raise TransformError("upper dilution bound must exceed the lower bound")
        if math.isinf(self.Dhi) and self.Dlo != 0:
            raise TransformError("an unbounded interval is only supported as (0, inf)")
        if not (self.Dlo < self.Dstar < self.Dhi):
            raise TransformError(
                f"equilibrium rate {self.Dstar!r} must lie strictly inside "
                f"({self.Dlo!r}, {self.Dhi!r})"
            )

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.Dhi)

    @property
    def alpha(self) -> float:
        # interval width
        return self.Dhi - self.Dlo

    @property
    def beta(self) -> float:
        # image of D* under the Moebius part of phi_inv
        return (self.Dhi - self.Dstar) / (self.Dstar - self.Dlo)

    @property
    def delta1(self) -> float:
        return (self.Dstar - self.Dlo) / self.Dstar

    @property
    def ratio(self) -> float:
        # (D* - Dlo)/(Dhi - D*), reciprocal of beta
        return (self.Dstar - self.Dlo) / (self.Dhi - self.Dstar)


def phi(zeta: float, bounds: DilutionBounds) -> float:
    """Map the real line onto (Dlo, Dhi); phi(0) = D*."""
    if not bounds.bounded:
        return bounds.Dstar * math.exp(zeta)
    e = math.exp(zeta)
    return bounds.Dlo + bounds.alpha * e / (bounds.beta + e)

def phi_inv(D: float, bounds: DilutionBounds) -> float:
    """Interval coordinate zeta = ln(beta (D - Dlo) / (Dhi - D)); 0 at D*."""
    if not bounds.bounded:
        if D <= 0:
            raise TransformError(f"dilution rate {D!r} outside (0, inf)")
        return math.log(D / bounds.Dstar)
    if not (bounds.Dlo < D < bounds.Dhi):
        raise TransformError(
            f"dilution rate {D!r} outside ({bounds.Dlo!r}, {bounds.Dhi!r})"
        )
    return math.log(bounds.beta * (D - bounds.Dlo) / (bounds.Dhi - D))


# --- state decomposition -----------------------------------------------------


@dataclass(frozen=True)
class TransformedState:
    """Scalar coordinates of one simulator state; fields are None when the
    controller family does not define them (no bounds, no gain context)."""

    eta: float
    psi: AgeFunction
    delta: float | None = None
    zeta: float | None = None
    z: float | None = None


def decompose(
    state: SimState,
    eq: Equilibrium,
    k1: float | None = None,
    c1: float | None = None,
    bounds: DilutionBounds | None = None,
) -> TransformedState:
    """Split a state into size eta, shape psi, and actuator coordinates.

    delta = D - D* - k1 ln(y/y*) is the backstepping error (needs k1);
    zeta is the interval coordinate (needs bounds, or D > 0 for the
    degenerate log coordinate); z = zeta - c1 eta (needs both).
    """
    eta = log_projection(state.f, eq)
    psi = psi_history(state.f, eq)

    delta = None
    if k1 is not None:
        y = weighted_quad(eq.params.p, state.f)
        delta = state.D - eq.Dstar - k1 * math.log(y / eq.ystar)

    zeta = None
    if bounds is not None:
        zeta = phi_inv(state.D, bounds)
    elif state.D > 0:
        zeta = math.log(state.D / eq.Dstar)

    z = None
    if c1 is not None and zeta is not None:
        z = zeta - c1 * eta
    return TransformedState(eta=eta, psi=psi, delta=delta, zeta=zeta, z=z)
