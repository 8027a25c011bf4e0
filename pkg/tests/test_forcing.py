"""Forcing profiles: analytic derivatives, exact zero discrete mean, wrapping."""

import math

import pytest
from hypothesis import given, settings, strategies as st

from periprop.forcing import ForceKind, ForcingProfile, midpoint_samples

_PI = math.pi


def _fd2(f, t, eps=1e-5):
    return (f(t + eps) - 2.0 * f(t) + f(t - eps)) / (eps * eps)


@pytest.mark.parametrize("name", ["y1", "y2", "y3"])
def test_acceleration_is_second_derivative_of_displacement(name):
    p = ForcingProfile.from_name(name, 64)
    for t in (0.12, 0.37, 0.55, 0.81):
        assert p.acceleration(t) == pytest.approx(_fd2(p.displacement, t), rel=2e-5, abs=2e-5)
        eps = 1e-6
        fd1 = (p.displacement(t + eps) - p.displacement(t - eps)) / (2 * eps)
        assert p.velocity(t) == pytest.approx(fd1, rel=1e-5, abs=1e-5)


def test_y1_closed_form():
    p = ForcingProfile.from_name("y1", 32)
    for t in (0.0, 0.2, 0.9):
        assert p.acceleration(t) == pytest.approx(2.0 * _PI**2 * math.cos(2.0 * _PI * t), abs=1e-12)
    # single harmonic: the analytic mean is zero and midpoint sampling sees it
    assert abs(p.correction) < 1e-12


@given(
    name=st.sampled_from(["y1", "y2", "y3"]),
    N=st.integers(min_value=8, max_value=400),
)
@settings(max_examples=60, deadline=None)
def test_corrected_samples_mean_exactly_zero(name, N):
    p = ForcingProfile.from_name(name, N)
    samples = midpoint_samples(p)
    assert len(samples) == N
    assert math.fsum(samples) == 0.0


def test_residual_removed_sample_by_sample():
    # the chirped profiles have nonzero midpoint-rule bias
    p2 = ForcingProfile.from_name("y2", 200)
    p3 = ForcingProfile.from_name("y3", 200)
    assert p2.correction != 0.0
    assert p3.correction != 0.0
    mids = [(2 * i - 1) / 400 for i in range(1, 201)]
    plain = [p2.corrected_acceleration(t) for t in mids]
    # the scalar shift stalls at a few ulps of the largest sample ...
    scale = max(abs(s) for s in plain)
    assert 0.0 < abs(math.fsum(plain)) < 64.0 * math.ulp(scale)
    # ... and the sample list removes that remainder exactly, moving each
    # touched sample by at most a few of its own ulps
    fixed = midpoint_samples(p2)
    assert math.fsum(fixed) == 0.0
    for a, b in zip(plain, fixed):
        assert abs(a - b) <= 4.0 * math.ulp(abs(a))


def test_periodic_wrapping():
    p = ForcingProfile.from_name("y2", 50)
    assert p.corrected_acceleration(1.25) == p.corrected_acceleration(0.25)
    assert p.displacement(2.75) == p.displacement(0.75)


def test_midpoint_samples_resampling():
    p = ForcingProfile.from_name("y3", 50)
    s100 = midpoint_samples(p, 100)
    assert len(s100) == 100
    assert math.fsum(s100) == 0.0
    # the correction is grid-dependent: resampling rebuilds it
    assert ForcingProfile(ForceKind.Y3, 100).correction != p.correction


def test_validation():
    with pytest.raises(ValueError, match="unknown force"):
        ForcingProfile.from_name("y4", 50)
    with pytest.raises(ValueError, match="at least 2"):
        ForcingProfile(ForceKind.Y1, 1)
    with pytest.raises(ValueError, match="period"):
        ForcingProfile(ForceKind.Y1, 50, period=2.0)


def test_displacement_period_endpoints():
    # all three displacements return to their values at the period ends
    for name in ("y1", "y2", "y3"):
        p = ForcingProfile.from_name(name, 16)
        assert p.displacement(0.0) == pytest.approx(p.displacement(1.0), abs=1e-12)
