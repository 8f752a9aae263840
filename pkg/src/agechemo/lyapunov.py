"""Lyapunov functionals and trajectory decay audits.

The stability proofs in this package all follow one pattern: a quadratic
form in the scalar coordinates plus a multiple of G(psi)^2 decays along
solutions at a computable rate.  This module evaluates those functionals
pointwise and fits the realised decay rate from a recorded trajectory so
tests can compare fitted against guaranteed rates.

Functionals (gains k1, k2, k3 > 0, certificate exponent sigma):

  U1 = (eta^2 + b1 delta^2) / 2                     actuated subsystem
  V1 = U1 + b2 G^2 / 2      b1 = 2/(k2 k1), b2 = (k1/sigma) e^{2 sigma A}
       guaranteed rate  min(k1/2, k2, sigma)        full backstepping
  V2 = same shape           b1 = 4/(k2 k1),
       b2 = (k1/sigma + b1 c1 k1^2/(sigma k2)) e^{2 sigma A}
       guaranteed rate  min(k1/2, k2/2, sigma)      relaxed output law
  U3 = eta^2/2 + b1 (zeta - k2 eta)^2 / 2,  b1 = 1/(k1 k2)
       bounded rise under the interval law: U3(t) <= U3(0) + forcing
  V_theta = theta omega(-c1 eta) + omega(zeta - c1 eta)
       exact derivative -4 D* [theta c1 mu_z(c1 eta) + c2 mu_z(zeta - c1 eta)]
       along the positive-orthant redesign, omega(z) = e^z - 1 - z and
       mu_z(z) = sinh^2(z/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelError


class LyapunovError(ModelError):
    pass


def omega(z: float) -> float:
    """Convex potential e^z - 1 - z; zero only at z = 0."""
    return math.expm1(z) - z


def mu_z(z: float) -> float:
    """sinh^2(z/2); satisfies (e^z - 1)(e^{-z} - 1) = -4 mu_z(z)."""
    return math.sinh(0.5 * z) ** 2


def U1(eta: float, delta: float, b1: float) -> float:
    return 0.5 * (eta * eta + b1 * delta * delta)


def V1_coefficients(k1: float, k2: float, sigma: float, A: float) -> tuple[float, float, float]:
    """(b1, b2, guaranteed rate) for the full backstepping functional."""
    b1 = 2.0 / (k2 * k1)
    b2 = (k1 / sigma) * math.exp(2.0 * sigma * A)
    return b1, b2, min(0.5 * k1, k2, sigma)


def V1_value(eta: float, delta: float, G: float, k1: float, k2: float, sigma: float, A: float) -> float:
    b1, b2, _ = V1_coefficients(k1, k2, sigma, A)
    return U1(eta, delta, b1) + 0.5 * b2 * G * G


def V2_coefficients(
    k1: float, k2: float, sigma: float, A: float, c1: float
) -> tuple[float, float, float]:
    """(b1, b2, guaranteed rate) for the relaxed output-feedback functional."""
    b1 = 4.0 / (k2 * k1)
    b2 = (k1 / sigma + b1 * c1 * k1 * k1 / (sigma * k2)) * math.exp(2.0 * sigma * A)
    return b1, b2, min(0.5 * k1, 0.5 * k2, sigma)


def V2_value(
    eta: float, delta: float, G: float, k1: float, k2: float, sigma: float, A: float, c1: float
) -> float:
    b1, b2, _ = V2_coefficients(k1, k2, sigma, A, c1)
    return U1(eta, delta, b1) + 0.5 * b2 * G * G


def U3_value(eta: float, zeta: float, k1: float, k2: float) -> float:
    b1 = 1.0 / (k1 * k2)
    diff = zeta - k2 * eta
    return 0.5 * eta * eta + 0.5 * b1 * diff * diff


def U3_forcing_bound(k1: float, k2: float, k3: float, sigma: float, A: float, G0: float) -> float:
    """Total rise the interval law can extract from the decaying history."""
    b1 = 1.0 / (k1 * k2)
    return (b1 * k2 * k2 * k3 / (2.0 * sigma)) * math.exp(2.0 * sigma * A) * G0 * G0


def Vtheta_value(eta: float, zeta: float, c1: float, theta: float) -> float:
    return theta * omega(-c1 * eta) + omega(zeta - c1 * eta)


def Vtheta_rate(
    eta: float, zeta: float, Dstar: float, c1: float, c2: float, theta: float
) -> float:
    """Exact time derivative of V_theta along the positive-orthant redesign."""
    return -4.0 * Dstar * (theta * c1 * mu_z(c1 * eta) + c2 * mu_z(zeta - c1 * eta))


# --- trajectory audits -------------------------------------------------------


@dataclass(frozen=True)
class LyapReport:
    """Fitted versus guaranteed decay of one functional along one run."""

    tag: str
    slope: float
    rate: float
    margin: float
    window: tuple[float, float]
    passed: bool


_RATES = {
    "V1": lambda m: min(0.5 * m["k1"], m["k2"], m["sigma"]),
    "V2": lambda m: min(0.5 * m["k1"], 0.5 * m["k2"], m["sigma"]),
    "G": lambda m: m["sigma"],
}


def fit_log_slope(times: np.ndarray, values: np.ndarray, floor: float = 1e-10) -> tuple[float, tuple[float, float]]:
    """Least-squares slope of ln(values) over the window above the floor.

    The window ends at the first sample at or below the floor; the tail
    past that point is rounding noise, not decay.
    """
    values = np.asarray(values, dtype=float)
    below = np.where(values <= floor)[0]
    end = int(below[0]) if below.size else values.size
    if end < 3:
        raise LyapunovError(
            f"only {end} samples above the fit floor {floor:g}; nothing to fit"
        )
    t = np.asarray(times, dtype=float)[:end]
    logv = np.log(values[:end])
    slope = np.polyfit(t, logv, 1)[0]
    return float(slope), (float(t[0]), float(t[-1]))


def decay_audit(traj, functional: str, margin: float = 0.1, floor: float = 1e-10) -> LyapReport:
    """Fit the decay of a recorded functional and compare to its guarantee.

    ``traj`` must expose .times, .diag[tag], and .meta with the gains and
    the certificate exponent sigma.  Passing means the fitted slope is at
    most -(1 - margin) times the guaranteed rate.
    """
    if functional not in _RATES:
        raise LyapunovError(
            f"no guaranteed rate for {functional!r}; audit one of {sorted(_RATES)}"
        )
    values = traj.diag.get(functional)
    if values is None:
        raise LyapunovError(f"trajectory did not record {functional!r}")
    rate = _RATES[functional](traj.meta)
    slope, window = fit_log_slope(traj.times, values, floor=floor)
    return LyapReport(
        tag=functional,
        slope=slope,
        rate=rate,
        margin=margin,
        window=window,
        passed=slope <= -(1.0 - margin) * rate,
    )


@dataclass(frozen=True)
class VthetaReport:
    """Finite-difference check of the exact V_theta derivative formula."""

    strictly_decreasing: bool
    max_rel_mismatch: float
    checked: int
    passed: bool


def audit_vtheta(traj, rel_tol: float = 0.02, floor_ratio: float = 1e-6) -> VthetaReport:
    """Compare record-to-record differences of V_theta with the analytic rate.

    The finite difference over one record interval is matched against the
    trapezoid average of the analytic derivative at the two endpoints.
    Records after V_theta has fallen below floor_ratio * V_theta(0) carry
    only rounding error and are excluded from the relative comparison.
    """
    V = traj.diag.get("Vtheta")
    eta = traj.diag.get("eta")
    zeta = traj.diag.get("zeta")
    if V is None or eta is None or zeta is None:
        raise LyapunovError("trajectory did not record Vtheta, eta, and zeta")
    m = traj.meta
    rate = [
        Vtheta_rate(e, z, m["Dstar"], m["c1"], m["c2"], m["theta"])
        for e, z in zip(eta, zeta)
    ]
    t = traj.times
    cutoff = floor_ratio * V[0]
    worst = 0.0
    checked = 0
    decreasing = True
    for j in range(len(t) - 1):
        dV = V[j + 1] - V[j]
        if V[j] > 1e-14 and dV >= 0:
            decreasing = False
        if V[j] < cutoff or V[j + 1] < cutoff:
            continue
        h = t[j + 1] - t[j]
        analytic = 0.5 * (rate[j] + rate[j + 1])
        if analytic == 0:
            continue
        worst = max(worst, abs(dV / h - analytic) / abs(analytic))
        checked += 1
    if checked == 0:
        raise LyapunovError("no record intervals above the V_theta floor")
    return VthetaReport(
        strictly_decreasing=decreasing,
        max_rel_mismatch=worst,
        checked=checked,
        passed=decreasing and worst <= rel_tol,
    )
