"""Shared model builders for the test suite."""

import numpy as np
import pytest

from agechemo.equilibrium import build_equilibrium, certify_assumption1
from agechemo.model import (
    AgeFunction,
    AgeGrid,
    ModelParams,
    derivative_from_expression,
)


def reference_params(n: int = 500) -> ModelParams:
    """Reference chemostat: mortality rising toward the age horizon,
    births weighting older cells, output weight 1 + a^2/10, birth level 8."""
    grid = AgeGrid(2.0, n)
    return ModelParams(
        grid=grid,
        mu=AgeFunction.from_expression(grid, "1/(20 - 5*a)"),
        k=AgeFunction.from_expression(grid, "a"),
        p=AgeFunction.from_expression(grid, "1 + a^2/10"),
        M=8.0,
        p_prime=AgeFunction(grid, derivative_from_expression(grid, "1 + a^2/10")),
    )


def flat_params(
    n: int = 400,
    A: float = 1.0,
    mu0: float = 0.0,
    k0: float = 2.0,
    p0: float = 1.0,
    M: float = 1.0,
) -> ModelParams:
    """Constant-coefficient model; its equilibrium relations are analytic."""
    grid = AgeGrid(A, n)
    ones = np.ones(grid.n + 1)
    return ModelParams(
        grid=grid,
        mu=AgeFunction(grid, mu0 * ones),
        k=AgeFunction(grid, k0 * ones),
        p=AgeFunction(grid, p0 * ones),
        M=M,
    )


@pytest.fixture(scope="session")
def ref_params():
    return reference_params(500)


@pytest.fixture(scope="session")
def ref_eq(ref_params):
    return build_equilibrium(ref_params)


@pytest.fixture(scope="session")
def ref_cert(ref_eq):
    return certify_assumption1(ref_eq)


@pytest.fixture(scope="session")
def flat_eq():
    return build_equilibrium(flat_params())
