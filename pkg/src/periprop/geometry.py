"""Body shapes and the truncated axisymmetric computational domain.

A body is described by its meridian level set in the (r, z) half-plane,

    Lambda(r, z) = c_r * r**2 / (1 + taper*z)**2 + c_z * z**2 - 1,

negative inside the body.  taper = 0 gives an ellipsoid, positive/negative
taper the drop and flipped-drop variants.  No 3D geometry is ever built; the
flow and the motion are axisymmetric and everything lives in the half-plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum


class ShapeKind(Enum):
    ELLIPSOID = "ellipsoid"
    DROP = "drop"
    FLIPPED_DROP = "flipped-drop"


@dataclass(frozen=True)
class BodyShape:
    """Axisymmetric body defined by a meridian level set.

    Coefficients are fields rather than constants so parameter studies can
    perturb them; the defaults of the named constructors are the reference
    values c_r=1.5, c_z=0.7, taper in {0, +0.3, -0.3}.
    """

    kind: ShapeKind
    c_r: float = 1.5
    c_z: float = 0.7
    taper: float = 0.0

    @staticmethod
    def ellipsoid(c_r: float = 1.5, c_z: float = 0.7) -> "BodyShape":
        return BodyShape(ShapeKind.ELLIPSOID, c_r, c_z, 0.0)

    @staticmethod
    def drop(c_r: float = 1.5, c_z: float = 0.7, taper: float = 0.3) -> "BodyShape":
        return BodyShape(ShapeKind.DROP, c_r, c_z, abs(taper))

    @staticmethod
    def flipped_drop(c_r: float = 1.5, c_z: float = 0.7, taper: float = 0.3) -> "BodyShape":
        return BodyShape(ShapeKind.FLIPPED_DROP, c_r, c_z, -abs(taper))

    @staticmethod
    def sphere(radius: float = 1.0) -> "BodyShape":
        """Unit-coefficient ellipsoid; the analytic drag oracle K = 6*pi."""
        c = 1.0 / radius**2
        return BodyShape(ShapeKind.ELLIPSOID, c, c, 0.0)

    @staticmethod
    def from_name(name: str) -> "BodyShape":
        key = name.strip().lower().replace("_", "-")
        table = {
            "ellipsoid": BodyShape.ellipsoid,
            "drop": BodyShape.drop,
            "flipped-drop": BodyShape.flipped_drop,
            "sphere": BodyShape.sphere,
        }
        if key not in table:
            raise ValueError(f"unknown shape {name!r}; expected one of {sorted(table)}")
        return table[key]()

    @property
    def z_extent(self) -> float:
        """Poles sit at z = +/- 1/sqrt(c_z)."""
        return 1.0 / math.sqrt(self.c_z)

    @property
    def max_radius(self) -> float:
        """Upper bound on the radial extent, (1 + |taper|*z_extent)/sqrt(c_r)."""
        return (1.0 + abs(self.taper) * self.z_extent) / math.sqrt(self.c_r)

    def mirrored(self) -> "BodyShape":
        """The shape reflected through z -> -z."""
        kind = {
            ShapeKind.DROP: ShapeKind.FLIPPED_DROP,
            ShapeKind.FLIPPED_DROP: ShapeKind.DROP,
            ShapeKind.ELLIPSOID: ShapeKind.ELLIPSOID,
        }[self.kind]
        return BodyShape(kind, self.c_r, self.c_z, -self.taper)


class SingularTaperError(ValueError):
    """Raised when 1 + taper*z = 0, where the level function is undefined."""


def level_value(shape: BodyShape, r: float, z: float) -> float:
    """Evaluate the meridian level function Lambda(r, z).

    Negative inside the body, zero on the surface, positive outside.
    Raises SingularTaperError when 1 + taper*z = 0.
    """
    w = 1.0 + shape.taper * z
    if w == 0.0:
        raise SingularTaperError(f"level function singular at z={z}: 1 + taper*z = 0")
    return shape.c_r * r * r / (w * w) + shape.c_z * z * z - 1.0


def level_gradient(shape: BodyShape, r: float, z: float) -> tuple[float, float]:
    """Gradient (d/dr, d/dz) of the level function; used for surface projection."""
    w = 1.0 + shape.taper * z
    if w == 0.0:
        raise SingularTaperError(f"level gradient singular at z={z}")
    dr = 2.0 * shape.c_r * r / (w * w)
    dz = -2.0 * shape.c_r * r * r * shape.taper / (w * w * w) + 2.0 * shape.c_z * z
    return dr, dz


def body_profile(shape: BodyShape, z: float) -> float:
    """Meridian radius r_b(z) = (1 + taper*z) * sqrt((1 - c_z*z**2)/c_r).

    Defined for |z| <= 1/sqrt(c_z); satisfies Lambda(r_b(z), z) = 0.
    """
    zmax = shape.z_extent
    if abs(z) > zmax * (1.0 + 1e-12):
        raise ValueError(f"z={z} outside the body range |z| <= {zmax}")
    s = max(0.0, 1.0 - shape.c_z * z * z)
    return (1.0 + shape.taper * z) * math.sqrt(s / shape.c_r)


@dataclass(frozen=True)
class DomainSpec:
    """Truncated meridian domain D_R = (0,R) x (-R,R) minus the body."""

    outer_radius: float

    def validate(self, shape: BodyShape) -> None:
        R = self.outer_radius
        if R <= shape.z_extent:
            raise ValueError(f"outer radius {R} does not clear the body poles at {shape.z_extent}")
        if R <= shape.max_radius:
            raise ValueError(f"outer radius {R} does not clear the body equator at {shape.max_radius}")
