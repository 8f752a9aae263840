"""Size measures, envelope fits, and dilution-constraint audits."""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from agechemo.analysis import (
    AnalysisError,
    constraint_audit,
    decay_bound_check,
    measure_R1,
    measure_R2,
    profile_lognorm,
)
from agechemo.model import AgeFunction, SimState
from agechemo.transforms import DilutionBounds, phi_inv


def test_measures_vanish_at_equilibrium(ref_eq):
    state = SimState(ref_eq.fstar, ref_eq.Dstar, 0.0)
    assert profile_lognorm(state, ref_eq) == 0.0
    assert measure_R1(state, ref_eq) == 0.0
    bounds = DilutionBounds(0.1, 1.5, ref_eq.Dstar)
    assert measure_R2(state, ref_eq, bounds) == pytest.approx(0.0, abs=1e-14)


def test_measures_split_profile_and_dilution(ref_eq):
    grid = ref_eq.params.grid
    scaled = AgeFunction(grid, ref_eq.fstar.values * math.exp(0.2))
    state = SimState(scaled, ref_eq.Dstar + 0.3, 0.0)
    assert profile_lognorm(state, ref_eq) == pytest.approx(0.2, abs=1e-12)
    assert measure_R1(state, ref_eq) == pytest.approx(0.5, abs=1e-12)
    bounds = DilutionBounds(0.1, 1.5, ref_eq.Dstar)
    want = 0.2 + abs(phi_inv(ref_eq.Dstar + 0.3, bounds))
    assert measure_R2(state, ref_eq, bounds) == pytest.approx(want, abs=1e-12)


def _traj(rate, t_end=6.0, samples=60, start=2.0):
    t = np.linspace(0.0, t_end, samples)
    return SimpleNamespace(
        times=t,
        D=None,
        diag={"R1": start * np.exp(-rate * t)},
    )


def test_envelope_tight_on_exact_decay():
    # data decays at 0.8; claiming the slower rate 0.7 leaves the
    # envelope anchored at the initial sample with C = measure(0)
    report = decay_bound_check(_traj(0.8), "R1", 0.7)
    assert report.C == pytest.approx(2.0, rel=1e-12)
    assert report.t_at_C == 0.0
    assert report.attained_early
    assert report.passed


def test_envelope_fails_on_wrong_rate():
    # claiming a faster rate than the data shows pushes C to the tail
    report = decay_bound_check(_traj(0.3, t_end=40.0), "R1", 1.5)
    assert report.t_at_C == pytest.approx(40.0)
    assert not report.attained_early
    assert report.C > 1e3
    assert not report.passed


def test_envelope_argument_validation():
    traj = _traj(0.5)
    with pytest.raises(AnalysisError, match="did not record"):
        decay_bound_check(traj, "R2", 0.5)
    with pytest.raises(AnalysisError, match="rate"):
        decay_bound_check(traj, "R1", 0.0)
    with pytest.raises(AnalysisError, match="rate"):
        decay_bound_check(traj, "R1", -1.0)


def test_constraint_audit_flags():
    t = np.linspace(0.0, 5.0, 50)
    D = 0.5 + 0.3 * np.exp(-t)
    traj = SimpleNamespace(times=t, D=D)
    report = constraint_audit(traj)
    assert report.positive
    assert report.min_D == pytest.approx(float(D.min()))
    assert report.max_D == pytest.approx(0.8)
    assert report.inside_interval is None
    assert report.safety_envelope_ok is None

    bounds = DilutionBounds(0.1, 1.5, 0.5)
    report = constraint_audit(traj, bounds=bounds)
    assert report.inside_interval is True
    tight = DilutionBounds(0.51, 1.5, 0.6)
    report = constraint_audit(traj, bounds=tight)
    assert report.inside_interval is False


def test_constraint_audit_safety_floor():
    t = np.linspace(0.0, 5.0, 50)
    k3 = 1.0
    # decays exactly at the permitted rate: inside the envelope
    traj = SimpleNamespace(times=t, D=2.0 * np.exp(-k3 * t))
    assert constraint_audit(traj, k3=k3).safety_envelope_ok is True
    # decays faster than permitted: violates the floor
    traj = SimpleNamespace(times=t, D=2.0 * np.exp(-2.0 * k3 * t))
    report = constraint_audit(traj, k3=k3)
    assert report.safety_envelope_ok is False
    assert not report.positive or report.min_D > 0  # positivity is separate


def test_constraint_audit_negative_rates():
    t = np.linspace(0.0, 2.0, 20)
    traj = SimpleNamespace(times=t, D=0.5 - 0.4 * t)
    report = constraint_audit(traj)
    assert not report.positive
    assert report.min_D < 0
