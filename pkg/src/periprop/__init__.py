"""Axisymmetric fluid-structure solver for self-propulsion of a rigid body
driven by a zero-mean time-periodic internal force.

The package computes, for a rigid axisymmetric body immersed in a viscous
incompressible fluid:

* the resistance coefficient K of the steady auxiliary Stokes problem,
* the time-periodic linearized flow around the oscillating body,
* the second-order thrust G_z and the predicted mean velocity G_z / K,
* the true mean velocity from direct integration of the coupled nonlinear
  fluid-body system.

All quantities are dimensionless; the single physical parameter is the Stokes
number h, which multiplies every inertial term as 2*h**2.
"""

__version__ = "0.1.0"
