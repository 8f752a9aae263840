"""Equilibrium family of the chemostat and the renewal-kernel certificate.

For a candidate dilution rate D the net reproductive output is

    L(D) = integral k(a) exp(-D a - integral_0^a mu) da.

An equilibrium dilution rate D* solves L(D*) = 1 (the stationary renewal
balance); L is strictly decreasing in D, so a bisection with a doubling
upper bracket finds the unique root whenever the population is viable at
zero dilution (L(0) >= 1).  The equilibrium profile is then

    f*(a) = M exp(-D* a - integral_0^a mu)

with the boundary value f*(0) = M a free family parameter.

``certify_assumption1`` searches for a contraction certificate of the
linearised renewal equation: a pair (lambda, sigma) with

    rho(lambda, sigma) = integral |ktilde(a) - r lambda K(a)| e^{sigma a} da < 1,

where K(a) is the tail integral of ktilde and 1/r = integral a ktilde.
A certificate with sigma > 0 is what turns every Lyapunov estimate in
this package into an exponential decay rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    AgeFunction,
    ModelError,
    ModelParams,
    cumulative_quad,
    ptilde,
    quad,
    tail_quad,
)


class ViabilityError(ModelError):
    pass


class CertificationError(ModelError):
    pass


def survival_exponent(params: ModelParams) -> np.ndarray:
    """Cumulative mortality integral_0^a mu at the grid nodes."""
    return cumulative_quad(params.mu)


def lotka_sharpe_value(D: float, params: ModelParams) -> float:
    """Net reproductive output L(D) under dilution rate D."""
    grid = params.grid
    survival = np.exp(-D * grid.nodes - survival_exponent(params))
    return float(np.dot(grid.weights, params.k.values * survival))


def solve_lotka_sharpe(params: ModelParams, tol: float = 0.0) -> float:
    """Unique D* >= 0 with L(D*) = 1, by bisection with a doubling bracket.

    The default tol runs the bisection to machine precision so that the
    discrete renewal balance holds to rounding error; the equilibrium
    profile is then a fixed point of the transport step to the same
    accuracy.
    """
    L0 = lotka_sharpe_value(0.0, params)
    if L0 < 1.0:
        raise ViabilityError(
            f"population not viable: reproductive output at zero dilution is {L0:.6g} < 1"
        )
    if L0 == 1.0:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(200):
        if lotka_sharpe_value(hi, params) < 1.0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise ViabilityError("no finite dilution rate balances the renewal integral")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if lotka_sharpe_value(mid, params) >= 1.0:
            lo = mid
        else:
            hi = mid
        if tol > 0 and hi - lo <= tol * max(1.0, hi):
            break
    Dstar = 0.5 * (lo + hi)
    residual = abs(lotka_sharpe_value(Dstar, params) - 1.0)
    if residual > 1e-10:
        raise ViabilityError(f"bisection stalled with renewal residual {residual:.3g}")
    return Dstar


@dataclass(frozen=True)
class Equilibrium:
    """Equilibrium pair (f*, D*) and every derived quantity reused downstream.

    pi       adjoint weight, pi(a) = (integral_a^A k f*) / f*(a), pi(0) = 1
    ktilde   normalised birth kernel k f* / f*(0), unit integral
    g        output density p f* / y*, unit integral
    rinv     mean renewal age integral a ktilde da (reciprocal of r)
    c1       squared bound constant of the output remainder functional
    """

    params: ModelParams
    Dstar: float
    fstar: AgeFunction
    ystar: float
    pi: AgeFunction
    ktilde: AgeFunction
    g: AgeFunction
    rinv: float
    c1: float
    ptilde: AgeFunction
    ktilde_tail: AgeFunction
    proj_denom: float


def build_equilibrium(params: ModelParams) -> Equilibrium:
    """Solve for D* and assemble the equilibrium profile and its transforms."""
    grid = params.grid
    Dstar = solve_lotka_sharpe(params)
    fstar = AgeFunction(
        grid, params.M * np.exp(-Dstar * grid.nodes - survival_exponent(params))
    )
    ystar = quad(AgeFunction(grid, params.p.values * fstar.values))

    births = AgeFunction(grid, params.k.values * fstar.values)
    pi = AgeFunction(grid, tail_quad(births) / fstar.values)
    ktilde = AgeFunction(grid, births.values / params.M)
    g = AgeFunction(grid, params.p.values * fstar.values / ystar)
    rinv = quad(AgeFunction(grid, grid.nodes * ktilde.values))
    if rinv <= 0:
        raise ModelError("mean renewal age must be positive")

    pt = ptilde(params)
    boundary = (
        params.p.values[-1] * fstar.values[-1] + params.p.values[0] * fstar.values[0]
    )
    interior = quad(AgeFunction(grid, np.abs(pt.values) * fstar.values))
    sqrt_c1 = 2.0 * (boundary + interior) / ystar
    proj_denom = quad(AgeFunction(grid, grid.nodes * params.k.values * fstar.values))

    return Equilibrium(
        params=params,
        Dstar=Dstar,
        fstar=fstar,
        ystar=ystar,
        pi=pi,
        ktilde=ktilde,
        g=g,
        rinv=rinv,
        c1=sqrt_c1 * sqrt_c1,
        ptilde=pt,
        ktilde_tail=AgeFunction(grid, tail_quad(ktilde)),
        proj_denom=proj_denom,
    )


@dataclass(frozen=True)
class KernelCert:
    """Contraction certificate for the linearised renewal kernel."""

    lam: float
    sigma: float
    rho0: float
    rho_sigma: float


def _rho(eq: Equilibrium, lam: float, sigma: float) -> float:
    grid = eq.params.grid
    deviation = np.abs(eq.ktilde.values - (lam / eq.rinv) * eq.ktilde_tail.values)
    return float(np.dot(grid.weights, deviation * np.exp(sigma * grid.nodes)))


def certify_assumption1(
    eq: Equilibrium,
    lambda_grid: np.ndarray | None = None,
    sigma_max: float = 5.0,
    margin: float = 1e-3,
) -> KernelCert:
    """Scan lambda, then push sigma as high as the contraction allows.

    The returned certificate satisfies rho(lam, 0) < 1 and
    rho(lam, sigma) <= 1 - margin.  Raises CertificationError when no
    lambda on the grid contracts at sigma = 0.
    """
    if lambda_grid is None:
        lambda_grid = np.arange(1, 101) * 0.05
    rho0_all = [_rho(eq, lam, 0.0) for lam in lambda_grid]
    best = int(np.argmin(rho0_all))
    lam, rho0 = float(lambda_grid[best]), float(rho0_all[best])
    if rho0 >= 1.0:
        raise CertificationError(
            f"no contraction certificate on the lambda grid (best rho = {rho0:.4f}); "
            "the birth kernel concentrates too much mass near the maximum age"
        )
    target = 1.0 - margin
    if _rho(eq, lam, sigma_max) <= target:
        sigma = sigma_max
    else:
        lo, hi = 0.0, sigma_max
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if _rho(eq, lam, mid) <= target:
                lo = mid
            else:
                hi = mid
        sigma = lo
    if sigma <= 0:
        raise CertificationError(
            f"contraction holds at sigma = 0 (rho = {rho0:.4f}) but no positive "
            "decay exponent clears the margin"
        )
    return KernelCert(lam=lam, sigma=sigma, rho0=rho0, rho_sigma=_rho(eq, lam, sigma))
