"""Level-set body shapes: values, gradients, symmetry, and registry."""

import math

import pytest
from hypothesis import given, settings, strategies as st

from periprop.geometry import (
    BodyShape,
    DomainSpec,
    SingularTaperError,
    body_profile,
    level_gradient,
    level_value,
)


def test_registry_names():
    for name in ("ellipsoid", "drop", "flipped-drop", "sphere"):
        shape = BodyShape.from_name(name)
        assert shape.z_extent > 0
    with pytest.raises(ValueError, match="unknown shape"):
        BodyShape.from_name("torus")


def test_drop_level_value_frozen():
    # frozen reference: 1.5*0.25/1.15^2 + 0.7*0.25 - 1 evaluated in exact arithmetic
    drop = BodyShape.drop()
    assert level_value(drop, 0.5, 0.5) == pytest.approx(-0.5414461247637051, abs=1e-15)


def test_sphere_is_unit_ball():
    s = BodyShape.sphere()
    assert level_value(s, 1.0, 0.0) == pytest.approx(0.0, abs=1e-15)
    assert level_value(s, 0.0, 1.0) == pytest.approx(0.0, abs=1e-15)
    assert s.z_extent == pytest.approx(1.0)


def test_z_extent_is_level_zero():
    for name in ("ellipsoid", "drop", "flipped-drop"):
        shape = BodyShape.from_name(name)
        assert level_value(shape, 0.0, shape.z_extent) == pytest.approx(0.0, abs=1e-12)
        assert level_value(shape, 0.0, -shape.z_extent) == pytest.approx(0.0, abs=1e-12)


@given(
    r=st.floats(0.0, 2.0),
    z=st.floats(-1.0, 1.0),
    taper=st.sampled_from([0.0, 0.3, -0.3]),
)
@settings(max_examples=50, deadline=None)
def test_mirrored_flips_z(r, z, taper):
    shape = BodyShape(kind=BodyShape.drop().kind, c_r=1.5, c_z=0.7, taper=taper)
    m = shape.mirrored()
    assert level_value(m, r, -z) == pytest.approx(level_value(shape, r, z), rel=1e-12, abs=1e-12)


@given(r=st.floats(0.05, 1.5), z=st.floats(-1.0, 1.0))
@settings(max_examples=40, deadline=None)
def test_gradient_matches_finite_differences(r, z):
    shape = BodyShape.drop()
    gr, gz = level_gradient(shape, r, z)
    eps = 1e-6
    fd_r = (level_value(shape, r + eps, z) - level_value(shape, r - eps, z)) / (2 * eps)
    fd_z = (level_value(shape, r, z + eps) - level_value(shape, r, z - eps)) / (2 * eps)
    assert gr == pytest.approx(fd_r, rel=1e-5, abs=1e-5)
    assert gz == pytest.approx(fd_z, rel=1e-5, abs=1e-5)


def test_singular_taper_raises():
    drop = BodyShape.drop()  # taper 0.3 -> singular at z = -10/3
    with pytest.raises(SingularTaperError):
        level_value(drop, 1.0, -1.0 / drop.taper)
    with pytest.raises(SingularTaperError):
        level_gradient(drop, 1.0, -1.0 / drop.taper)


def test_body_profile_lies_on_level_set():
    for name in ("ellipsoid", "drop", "flipped-drop", "sphere"):
        shape = BodyShape.from_name(name)
        for frac in (-0.9, -0.5, 0.0, 0.4, 0.8):
            z = frac * shape.z_extent
            r = body_profile(shape, z)
            assert r >= 0
            assert level_value(shape, r, z) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError, match="outside the body"):
        body_profile(BodyShape.sphere(), 1.5)


def test_domain_validation():
    DomainSpec(4.0).validate(BodyShape.drop())
    with pytest.raises(ValueError, match="does not clear"):
        DomainSpec(1.0).validate(BodyShape.drop())


def test_drop_pair_antisymmetric_profiles():
    drop = BodyShape.from_name("drop")
    flip = BodyShape.from_name("flipped-drop")
    for z in (-0.7, -0.2, 0.1, 0.6):
        assert body_profile(flip, -z) == pytest.approx(body_profile(drop, z), rel=1e-12)
