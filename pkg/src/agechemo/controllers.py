"""Feedback laws for the dilution-rate actuator.

Every law maps a simulator state (f, D) to the actuator input u driving
dD/dt = u, and every law vanishes at the equilibrium (f*, D*).  The
families:

  backstep-full          cancel the output derivative exactly, then damp
                         the dilution error (full profile measurement)
  backstep-const-pmu     same, reduced to boundary measurements when the
                         output weight and mortality are constant
  relaxed-output         static output feedback; no cancellation, same
                         nominal target D* + k1 ln(y/y*)
  safety-filtered        nominal law plus the smallest correction that
                         enforces dD/dt >= -k3 D (keeps D positive)
  constrained-output     output feedback through an interval coordinate;
                         D stays in (Dlo, Dhi) forever
  positive-only          the degenerate interval (0, inf) of the above
  lyap-fullstate         strict Lyapunov redesign on the positive orthant
  lyap-fullstate-bounded the same redesign pushed into a bounded interval

The module treats gains uniformly: k1/k2/k3 for the output-error family,
c1/c2/theta for the Lyapunov redesigns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .equilibrium import Equilibrium
from .model import ModelError, SimState, weighted_quad
from .transforms import DilutionBounds, phi_inv, pi_projection

VARIANTS = (
    "backstep-full",
    "backstep-const-pmu",
    "relaxed-output",
    "safety-filtered",
    "constrained-output",
    "positive-only",
    "lyap-fullstate",
    "lyap-fullstate-bounded",
)

_NEEDS = {
    "backstep-full": ("k1", "k2"),
    "backstep-const-pmu": ("k1", "k2"),
    "relaxed-output": ("k1", "k2"),
    "safety-filtered": ("k1", "k2", "k3"),
    "constrained-output": ("k1", "k2", "k3"),
    "positive-only": ("k1", "k2", "k3"),
    "lyap-fullstate": ("c1", "c2", "theta"),
    "lyap-fullstate-bounded": ("c1", "c2", "theta"),
}


class ControllerError(ModelError):
    pass


@dataclass(frozen=True)
class ControllerSpec:
    """Variant tag plus the gains and bounds that variant requires."""

    variant: str
    k1: float | None = None
    k2: float | None = None
    k3: float | None = None
    c1: float | None = None
    c2: float | None = None
    theta: float | None = None
    bounds: DilutionBounds | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ControllerError(
                f"unknown controller {self.variant!r}; choose one of {', '.join(VARIANTS)}"
            )
        for gain in _NEEDS[self.variant]:
            value = getattr(self, gain)
            if value is None or not (math.isfinite(value) and value > 0):
                raise ControllerError(
                    f"{self.variant} needs gain {gain} > 0, got {value!r}"
                )
        if self.variant in ("constrained-output", "lyap-fullstate-bounded"):
            if self.bounds is None or not self.bounds.bounded:
                raise ControllerError(f"{self.variant} needs finite dilution bounds")


def _output(state: SimState, eq: Equilibrium) -> float:
    y = weighted_quad(eq.params.p, state.f)
    if y <= 0:
        raise ControllerError("measured output is not positive")
    return y


def u_backstep_full(state: SimState, eq: Equilibrium, spec: ControllerSpec) -> float:
    """Cancel the output derivative, then damp the dilution error.

    u_c = -k1 D - (k1/y) [p(A) f(A) - p(0) f(0) - integral ptilde f]
    u_s = -k2 (D - D* - k1 ln(y/y*))
    """
    y = _output(state, eq)
    p = eq.params.p.values
    f = state.f.values
    boundary_flux = p[-1] * f[-1] - p[0] * f[0]
    removal = weighted_quad(eq.ptilde, state.f)
    u_c = -spec.k1 * state.D - (spec.k1 / y) * (boundary_flux - removal)
    u_s = -spec.k2 * (state.D - eq.Dstar - spec.k1 * math.log(y / eq.ystar))
    return u_c + u_s


def u_backstep_const_pmu(state: SimState, eq: Equilibrium, spec: ControllerSpec) -> float:
    """Backstepping with constant output weight and mortality.

    The cancelling term collapses to boundary terms of f alone:
    u_c = -k1 D - (k1 p / y) [f(A) - f(0)] - k1 mu.
    """
    p = eq.params.p.values
    mu = eq.params.mu.values
    if np.ptp(p) > 1e-12 * max(1.0, abs(p[0])):
        raise ControllerError("backstep-const-pmu requires a constant output weight p")
    if np.ptp(mu) > 1e-12 * max(1.0, abs(mu[0])):
        raise ControllerError("backstep-const-pmu requires a constant mortality mu")
    y = _output(state, eq)
    f = state.f.values
    u_c = -spec.k1 * state.D - (spec.k1 * p[0] / y) * (f[-1] - f[0]) - spec.k1 * mu[0]
    u_s = -spec.k2 * (state.D - eq.Dstar - spec.k1 * math.log(y / eq.ystar))
    return u_c + u_s


def u_relaxed_output(state: SimState, eq: Equilibrium, spec: ControllerSpec) -> float:
    """Static output feedback: u = -(k1+k2)(D - D*) + k1 k2 ln(y/y*)."""
    y = _output(state, eq)
    return -(spec.k1 + spec.k2) * (state.D - eq.Dstar) + spec.k1 * spec.k2 * math.log(
        y / eq.ystar
    )


def u_safety_filtered(
    state: SimState, eq: Equilibrium, spec: ControllerSpec, u0: float | None = None
) -> float:
    """Minimal correction of a nominal law enforcing dD/dt >= -k3 D.

    With u = u0 + max(0, -u0 - k3 D) the closed loop satisfies
    D(t) >= D(0) exp(-k3 t), so a positive initial rate stays positive.
    The nominal u0 defaults to the full backstepping law.
    """
    if u0 is None:
        u0 = u_backstep_full(state, eq, spec)
    return u0 + max(0.0, -u0 - spec.k3 * state.D)


def u_constrained_output(state: SimState, eq: Equilibrium, spec: ControllerSpec) -> float:
    """Output feedback that keeps D inside the open interval (Dlo, Dhi)."""
    bounds = spec.bounds
    if not (bounds.Dlo < state.D < bounds.Dhi):
        raise ControllerError(
            f"dilution rate {state.D!r} outside ({bounds.Dlo}, {bounds.Dhi})"
        )
    y = _output(state, eq)
    gate = (state.D - bounds.Dlo) * (bounds.Dhi - state.D) / (bounds.Dhi - bounds.Dlo)
    zeta = phi_inv(state.D, bounds)
    return gate * (
        (spec.k1 + spec.k2) * (eq.Dstar - state.D)
        - spec.k3 * (zeta - spec.k2 * math.log(y / eq.ystar))
    )


def u_positive_only(state: SimState, eq: Equilibrium, spec: ControllerSpec) -> float:
    """Output feedback on the positive orthant; D > 0 is invariant."""
    if state.D <= 0:
        raise ControllerError(f"dilution rate {state.D!r} must be positive")
    y = _output(state, eq)
    return state.D * (
        (spec.k1 + spec.k2) * (eq.Dstar - state.D)
        + spec.k3 * (math.log(eq.Dstar / state.D) + spec.k2 * math.log(y / eq.ystar))
    )


def u_lyap_fullstate(state: SimState, eq: Equilibrium, spec: ControllerSpec) -> float:
    """Strict Lyapunov redesign on F x (0, inf).

    u = D* D { c1 [theta (Pi^c1 - 1) + 1 - D/D*] + c2 ((D*/D) Pi^c1 - 1) }.
    """
    if state.D <= 0:
        raise ControllerError(f"dilution rate {state.D!r} must be positive")
    Pi_c1 = pi_projection(state.f, eq) ** spec.c1
    return (
        eq.Dstar
        * state.D
        * (
            spec.c1 * (spec.theta * (Pi_c1 - 1.0) + 1.0 - state.D / eq.Dstar)
            + spec.c2 * ((eq.Dstar / state.D) * Pi_c1 - 1.0)
        )
    )


def u_lyap_fullstate_bounded_zform(
    eta: float, zeta: float, Dstar: float, bounds: DilutionBounds, spec: ControllerSpec
) -> float:
    """Interval Lyapunov redesign in the transformed coordinates (eta, zeta).

    u = (D*/(Dhi-Dlo)) (D-Dlo)(Dhi-D) { c1 [theta delta1 (1+n) (E-1)/(1+nE)^2
        + (1-Z)/(1+nZ)] + c2 (E/Z - 1) },   E = e^{c1 eta}, Z = e^{zeta}.
    """
    E = math.exp(spec.c1 * eta)
    Z = math.exp(zeta)
    n = bounds.ratio
    # (D - Dlo)(Dhi - D) = alpha^2 n Z / (1 + n Z)^2 under Z = (1/n)(D-Dlo)/(Dhi-D)
    gate = Dstar * bounds.alpha * n * Z / (1.0 + n * Z) ** 2
    shape = spec.c1 * (
        spec.theta * bounds.delta1 * (1.0 + n) * (E - 1.0) / (1.0 + n * E) ** 2
        + (1.0 - Z) / (1.0 + n * Z)
    ) + spec.c2 * (E / Z - 1.0)
    return gate * shape


def u_lyap_fullstate_bounded(state: SimState, eq: Equilibrium, spec: ControllerSpec) -> float:
    """Interval Lyapunov redesign evaluated on the profile directly.

    Substitutes E = Pi(f)^c1 and Z = (1/n)(D-Dlo)/(Dhi-D) into the
    transformed-coordinate law; both routes agree to rounding error.
    """
    bounds = spec.bounds
    if not (bounds.Dlo < state.D < bounds.Dhi):
        raise ControllerError(
            f"dilution rate {state.D!r} outside ({bounds.Dlo}, {bounds.Dhi})"
        )
    E = pi_projection(state.f, eq) ** spec.c1
    n = bounds.ratio
    Z = (state.D - bounds.Dlo) / (bounds.Dhi - state.D) / n
    gate = (
        eq.Dstar / bounds.alpha * (state.D - bounds.Dlo) * (bounds.Dhi - state.D)
    )
    shape = spec.c1 * (
        spec.theta * bounds.delta1 * (1.0 + n) * (E - 1.0) / (1.0 + n * E) ** 2
        + (1.0 - Z) / (1.0 + n * Z)
    ) + spec.c2 * (E / Z - 1.0)
    return gate * shape


_LAWS = {
    "backstep-full": u_backstep_full,
    "backstep-const-pmu": u_backstep_const_pmu,
    "relaxed-output": u_relaxed_output,
    "safety-filtered": u_safety_filtered,
    "constrained-output": u_constrained_output,
    "positive-only": u_positive_only,
    "lyap-fullstate": u_lyap_fullstate,
    "lyap-fullstate-bounded": u_lyap_fullstate_bounded,
}


def controller_input(state: SimState, eq: Equilibrium, spec: ControllerSpec) -> float:
    """Evaluate the law named by spec.variant at the given state."""
    return _LAWS[spec.variant](state, eq, spec)


def resolve(ctrl, eq: Equilibrium):
    """Normalise a ControllerSpec or a (state, eq) callable to state -> u."""
    if isinstance(ctrl, ControllerSpec):
        law = _LAWS[ctrl.variant]
        return lambda state: law(state, eq, ctrl)
    if callable(ctrl):
        return lambda state: float(ctrl(state, eq))
    raise ControllerError(f"not a controller: {ctrl!r}")
