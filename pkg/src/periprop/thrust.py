"""Second-order thrust and predicted mean velocity from the linear solution.

The thrust G_z is the period average of the quadratic convective functional
of the linearized periodic flow, tested against the auxiliary resistance
field; the predicted mean swimming velocity is gamma0_bar = G_z / K.  Time
quadrature uses the trapezoidal stage midpoints of the stepper trajectory,
so the average is consistent with the stepping scheme's own stage points.

The azimuthal factor 2 pi is included in both G_z and K (it cancels in
gamma0_bar).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import auxstokes, fem
from .auxstokes import ResistanceResult
from .fem import DofMap, FieldVP, LiftField, OperatorSet, Regime
from .forcing import ForcingProfile
from .geometry import BodyShape, DomainSpec
from .meshgen import AxiMesh, generate_mesh
from .timeloop import LinearStepper, PeriodicSolution, SimConfig, seek_periodic


@dataclass(frozen=True)
class ThrustResult:
    """Thrust, resistance, and the predicted mean velocity G_z / K."""

    G_z: float
    K: float
    gamma0_bar: float
    h: float


def compute_thrust(
    mesh: AxiMesh,
    dofmap: DofMap,
    sol: PeriodicSolution,
    resistance: ResistanceResult,
    cfg: SimConfig,
) -> ThrustResult:
    """G_z = -2 h^2 mean_n of int ((Vhat_n - xihat_n e_z) . grad Vhat_n) . h3.

    Vhat_n, xihat_n are the stage midpoints (V_{n-1} + V_n)/2 and the same
    for the body velocity.
    """
    h3 = resistance.h3
    if len(h3.u_r) != len(sol.states[0].u_r):
        raise ValueError("auxiliary field and periodic solution use different meshes")
    N = len(sol.states) - 1
    total = 0.0
    for n in range(1, N + 1):
        a, b = sol.states[n - 1], sol.states[n]
        vhat = FieldVP(u_r=0.5 * (a.u_r + b.u_r), u_z=0.5 * (a.u_z + b.u_z), p=b.p)
        xihat = 0.5 * (sol.body_velocity[n - 1] + sol.body_velocity[n])
        total += fem.nonlinear_form_against(mesh, dofmap, vhat, xihat, h3)
    G_z = -2.0 * cfg.h**2 * total / N
    return ThrustResult(G_z=G_z, K=resistance.K, gamma0_bar=G_z / resistance.K, h=cfg.h)


@dataclass
class LinearProblem:
    """Mesh, operators, lift, and resistance shared by linear runs.

    Everything here is independent of the Stokes number h and the forcing,
    so one instance serves a whole h-sweep on a fixed mesh.
    """

    shape: BodyShape
    cfg: SimConfig
    mesh: AxiMesh
    dofmap: DofMap
    ops: OperatorSet
    lift: LiftField
    resistance: ResistanceResult

    @classmethod
    def build(cls, shape: BodyShape, cfg: SimConfig, mesh: AxiMesh | None = None) -> "LinearProblem":
        if mesh is None:
            mesh = generate_mesh(shape, DomainSpec(cfg.R), cfg.size_far, cfg.size_body)
        dofmap = fem.build_spaces(mesh, cfg.mode)
        ops = fem.assemble_operators(mesh, dofmap)
        lift = fem.build_lift(mesh, dofmap)
        h3 = auxstokes.solve_auxiliary(mesh, dofmap, ops)
        resistance = auxstokes.compute_resistance(mesh, dofmap, h3, ops, lift)
        return cls(shape=shape, cfg=cfg, mesh=mesh, dofmap=dofmap, ops=ops, lift=lift, resistance=resistance)

    def run(self, force: ForcingProfile, h: float | None = None, collect_trace: bool = False):
        """Periodic linear solve plus thrust at Stokes number h (default cfg.h)."""
        cfg = self.cfg if h is None else replace(self.cfg, h=h)
        stepper = LinearStepper(self.mesh, self.dofmap, self.ops, self.lift, cfg, Regime.LINEAR)
        sol = seek_periodic(stepper, force, collect_trace=collect_trace)
        thrust = compute_thrust(self.mesh, self.dofmap, sol, self.resistance, cfg)
        return sol, thrust


@dataclass(frozen=True)
class SweepEntry:
    h: float
    thrust: ThrustResult | None
    converged: bool
    error: str | None = None


def sweep_h(shape: BodyShape, cfg: SimConfig, force: ForcingProfile, h_values) -> list:
    """Full linear pipeline per Stokes number on one shared mesh.

    Per-h failures are isolated: the entry carries the error message and the
    sweep continues.
    """
    h_values = list(h_values)
    if not h_values:
        raise ValueError("empty h list")
    problem = LinearProblem.build(shape, cfg)
    entries = []
    for h in h_values:
        try:
            sol, thrust = problem.run(force, h=float(h))
            entries.append(SweepEntry(h=float(h), thrust=thrust, converged=sol.converged))
        except Exception as exc:  # per-h isolation is part of the contract
            entries.append(SweepEntry(h=float(h), thrust=None, converged=False, error=str(exc)))
    return entries


def thrust_record(shape_name: str, force_name: str, result: ThrustResult) -> dict:
    """JSON-ready summary of one thrust computation."""
    return {
        "shape": shape_name,
        "force": force_name,
        "h": result.h,
        "G_z": result.G_z,
        "K": result.K,
        "gamma0_bar": result.gamma0_bar,
    }
