"""Stability measures on the original state and trajectory-level audits.

The theorems bound two size measures:

  R1 = max_a |ln(f/f*)| + |D - D*|            unrestricted dilution
  R2 = max_a |ln(f/f*)| + |phi_inv(D)|        dilution confined to an interval

R2 blows up at the interval edges, so a finite R2 along a whole
trajectory already certifies constraint satisfaction.  The envelope
check realises the KL-estimates concretely: given a rate, it reports the
smallest C with measure(t) <= C e^{-rate t} over the recorded samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .equilibrium import Equilibrium
from .model import ModelError, SimState
from .transforms import DilutionBounds, phi_inv


class AnalysisError(ModelError):
    pass


def profile_lognorm(state: SimState, eq: Equilibrium) -> float:
    """max over age of |ln(f/f*)|."""
    return float(np.max(np.abs(np.log(state.f.values / eq.fstar.values))))


def measure_R1(state: SimState, eq: Equilibrium) -> float:
    return profile_lognorm(state, eq) + abs(state.D - eq.Dstar)


def measure_R2(state: SimState, eq: Equilibrium, bounds: DilutionBounds) -> float:
    return profile_lognorm(state, eq) + abs(phi_inv(state.D, bounds))


@dataclass(frozen=True)
class EnvelopeReport:
    """Smallest exponential envelope constant over the recorded samples."""

    measure: str
    rate: float
    C: float
    t_at_C: float
    attained_early: bool
    passed: bool


def decay_bound_check(
    traj, measure: str, rate: float, c_max: float = 1e3
) -> EnvelopeReport:
    """Envelope fit: C = max_t measure(t) e^{rate t} over the records.

    C is always finite on finite data; the check fails only when C
    exceeds c_max, which signals either a wrong rate or a trajectory
    that does not actually decay.  ``attained_early`` warns when the
    maximiser sits in the first half of the run (healthy decay) versus
    the tail (envelope dominated by the slowest samples).
    """
    values = traj.diag.get(measure)
    if values is None:
        raise AnalysisError(f"trajectory did not record {measure!r}")
    if rate <= 0 or not math.isfinite(rate):
        raise AnalysisError(f"envelope rate must be positive and finite, got {rate!r}")
    t = np.asarray(traj.times, dtype=float)
    weighted = np.asarray(values, dtype=float) * np.exp(rate * t)
    i = int(np.argmax(weighted))
    C = float(weighted[i])
    return EnvelopeReport(
        measure=measure,
        rate=rate,
        C=C,
        t_at_C=float(t[i]),
        attained_early=t[i] <= 0.5 * t[-1],
        passed=math.isfinite(C) and C < c_max,
    )


@dataclass(frozen=True)
class ConstraintReport:
    """Dilution-rate constraint outcomes over one trajectory."""

    min_D: float
    max_D: float
    positive: bool
    inside_interval: bool | None
    safety_envelope_ok: bool | None


def constraint_audit(
    traj, bounds: DilutionBounds | None = None, k3: float | None = None,
    envelope_slack: float = 1e-6,
) -> ConstraintReport:
    """Check positivity, interval containment, and the safety-filter floor.

    The safety floor D(t) >= D(0) e^{-k3 t} (1 - slack) is only evaluated
    when k3 is given; interval containment only when bounds are given.
    """
    D = np.asarray(traj.D, dtype=float)
    t = np.asarray(traj.times, dtype=float)
    inside = None
    if bounds is not None:
        inside = bool(np.all((D > bounds.Dlo) & (D < bounds.Dhi)))
    envelope = None
    if k3 is not None:
        floor = D[0] * np.exp(-k3 * t) * (1.0 - envelope_slack)
        envelope = bool(np.all(D >= floor))
    return ConstraintReport(
        min_D=float(np.min(D)),
        max_D=float(np.max(D)),
        positive=bool(np.min(D) > 0),
        inside_interval=inside,
        safety_envelope_ok=envelope,
    )
