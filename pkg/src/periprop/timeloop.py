"""Time-periodic solution of the linearized coupled fluid-body system.

One period is split into N tangent-trapezoidal steps.  Each step couples the
fluid solve to the scalar body momentum equation through a relaxed
Gauss-Seidel subiteration: the fluid sees the body velocity as Dirichlet
data, the body sees the fluid through the axial surface force, evaluated as
a residual-consistent volume functional against the lift field z-bar.

Because the fluid step is affine in the body velocity gamma, each step
solves once for the gamma = 0 particular state and reuses a precomputed
unit-gamma homogeneous state; the subiteration then updates a scalar and is
algebraically identical to re-solving the fluid per pass.

Periodicity is reached by the mean-projection accelerator: integrate one
period, and if the end state differs from the start, restart from the end
state minus its time average (the projection converges because the period
map is an affine contraction and the target has zero temporal mean).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .fem import DofMap, ElementMode, FieldVP, LiftField, OperatorSet, Regime
from .forcing import ForcingProfile
from .linsolve import factorize
from .meshgen import AxiMesh


@dataclass(frozen=True)
class TimeGrid:
    """Uniform splitting of the unit period into N steps."""

    N: int

    def __post_init__(self):
        if self.N < 8:
            raise ValueError(f"need N >= 8 steps per period, got {self.N}")

    @property
    def dt(self) -> float:
        return 1.0 / self.N

    def nodes(self) -> np.ndarray:
        return np.arange(self.N + 1) / self.N

    def midpoints(self) -> np.ndarray:
        return (2.0 * np.arange(1, self.N + 1) - 1.0) / (2.0 * self.N)


@dataclass(frozen=True)
class SimConfig:
    """Parameters of one periodic run; h is the Stokes number.

    omega is the body-force relaxation factor: a constant in (0, 1], or
    "auto" to use the optimal value 1/(1 + d) computed from the stepper's
    added-mass feedback d (the subiteration then converges in two passes in
    the linear regime).  The fixed point does not depend on omega.
    """

    h: float
    R: float = 8.0
    size_far: float = 0.5
    size_body: float = 0.05
    N: int = 200
    omega: float | str = 0.8
    subiter_tol: float = 1e-9
    subiter_max: int = 50
    periodic_tol: float = 1e-6
    max_cycles: int = 50
    mode: ElementMode = ElementMode.TAYLOR_HOOD

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError(f"Stokes number must be positive, got {self.h}")
        if self.omega != "auto" and not (0.0 < self.omega <= 1.0):
            raise ValueError(f"relaxation must lie in (0, 1] or be 'auto', got {self.omega}")
        if self.N < 8:
            raise ValueError(f"need N >= 8 steps per period, got {self.N}")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.N)


@dataclass
class PeriodicSolution:
    """Converged (or best) periodic trajectory over one period."""

    states: list
    body_velocity: np.ndarray
    cycle_count: int
    periodic_residual: float
    mean_body_velocity: float
    mean_field_norm: float
    converged: bool
    residual_history: list
    trace: list  # rows (cycle, step, t, gamma, drag, subiters)
    subiter_mean: float


class SubiterationError(RuntimeError):
    """Fluid-body subiteration failed to converge within subiter_max."""


class LinearStepper:
    """Tangent-trapezoidal stepper for the linearized regime.

    The saddle matrix (2h^2/dt) M + A/2 in the velocity block is constant
    over all steps and cycles; it is factorized once.  The homogeneous
    (gamma = 1, zero right side) state is solved once and every step
    superposes x(gamma) = x_part + gamma * x_hom.
    """

    def __init__(
        self,
        mesh: AxiMesh,
        dofmap: DofMap,
        ops: OperatorSet,
        lift: LiftField,
        cfg: SimConfig,
        regime: Regime = Regime.LINEAR,
    ):
        self.mesh = mesh
        self.dofmap = dofmap
        self.ops = ops
        self.lift = lift
        self.cfg = cfg
        self.regime = regime
        self.dt = cfg.grid.dt
        self.mass = 2.0 * cfg.h**2
        self.c_m = self.mass / self.dt

        velocity_block = self.c_m * ops.M + 0.5 * ops.A
        self.bcs = fem.build_bcset(dofmap, regime)
        self.sys_c = fem.apply_dirichlet(fem.saddle_matrix(ops, velocity_block), self.bcs)
        self.lu = factorize(self.sys_c.K_free)

        zv = lift.velocity()
        # force functional F_z(x_n; x_prev) = g_new . v_n + g_old . v_prev + g_p . p_n
        self.g_new = self.c_m * (ops.M @ zv) + 0.5 * (ops.A @ zv)
        self.g_old = -self.c_m * (ops.M @ zv) + 0.5 * (ops.A @ zv)
        self.g_p = -(ops.B @ zv)

        x_hom_free = self.lu.solve(self.sys_c.reduce_rhs(np.zeros(dofmap.n_total), 1.0))
        self.x_hom = self.sys_c.expand(x_hom_free, 1.0)
        nv = dofmap.n_velocity
        self.F_hom = float(self.g_new @ self.x_hom[:nv] + self.g_p @ self.x_hom[nv:])
        # added-mass feedback of the body velocity on its own force balance
        self.added_mass = (self.dt / self.mass) * self.F_hom
        self.omega = cfg.omega if cfg.omega != "auto" else 1.0 / (1.0 + self.added_mass)

    def force_of(self, x: np.ndarray, x_prev: np.ndarray) -> float:
        nv = self.dofmap.n_velocity
        return float(self.g_new @ x[:nv] + self.g_old @ x_prev[:nv] + self.g_p @ x[nv:])

    def step(self, x_prev: np.ndarray, gamma_prev: float, ydd_mid: float):
        """Advance one step; returns (x_next, gamma_next, subiters, drag)."""
        nv = self.dofmap.n_velocity
        v_prev = x_prev[:nv]
        b = np.zeros(self.dofmap.n_total)
        b[:nv] = self.c_m * (self.ops.M @ v_prev) - 0.5 * (self.ops.A @ v_prev)
        x_part = self.sys_c.expand(self.lu.solve(self.sys_c.reduce_rhs(b, 0.0)), 0.0)
        F_part = self.force_of(x_part, x_prev)

        cfg = self.cfg
        omega = self.omega
        gamma = gamma_prev
        explicit = gamma_prev + self.dt * ydd_mid
        coef = self.dt / self.mass
        subiters = 0
        for _ in range(cfg.subiter_max):
            subiters += 1
            gamma_tilde = explicit - coef * (F_part + gamma * self.F_hom)
            gamma_new = omega * gamma_tilde + (1.0 - omega) * gamma
            delta, gamma = abs(gamma_new - gamma), gamma_new
            if delta <= cfg.subiter_tol:
                break
        else:
            raise SubiterationError(
                f"subiteration stalled: |d gamma| = {delta:.3e} after {cfg.subiter_max} passes"
            )
        x = x_part + gamma * self.x_hom
        return x, gamma, subiters, F_part + gamma * self.F_hom

    def field_norm(self, v: np.ndarray) -> float:
        return math.sqrt(float(v @ (self.ops.M @ v)))


def step_linear(prev: FieldVP, gamma_prev: float, t_mid: float, cfg: SimConfig, stepper: LinearStepper, force: ForcingProfile):
    """Single linearized step at midpoint time t_mid (module-level veneer)."""
    x, gamma, subiters, _ = stepper.step(prev.stacked(), gamma_prev, force.corrected_acceleration(t_mid))
    return FieldVP.from_stacked(stepper.dofmap, x, time_tag=prev.time_tag + stepper.dt), gamma, subiters


def surface_force_z(
    state: FieldVP,
    prev: FieldVP,
    gamma: float,
    dofmap: DofMap,
    ops: OperatorSet,
    lift: LiftField,
    h: float,
    dt: float,
    regime: Regime = Regime.LINEAR,
) -> float:
    """Axial surface force as the residual-consistent volume functional.

    F_z = int [2h^2 (v_n - v_prev)/dt (+ 2h^2 conv)] . zbar
          + T(stage, p_n) : grad zbar,  stage = (v_prev + v_n)/2;
    the convective term enters only in the nonlinear regime, evaluated at the
    stage state with advecting body velocity gamma.  With state == prev the
    time term drops and the steady functional (the resistance) is recovered.
    """
    zv = lift.velocity()
    v, v_prev = state.velocity(), prev.velocity()
    mass = 2.0 * h * h
    out = (mass / dt) * float(zv @ (ops.M @ (v - v_prev)))
    out += 0.5 * float(zv @ (ops.A @ (v + v_prev)))
    out -= float((ops.B @ zv) @ state.p)
    if regime is Regime.NONLINEAR:
        stage = FieldVP(u_r=0.5 * (state.u_r + prev.u_r), u_z=0.5 * (state.u_z + prev.u_z), p=state.p)
        lift_field = FieldVP(u_r=lift.u_r, u_z=lift.u_z, p=np.zeros(0))
        out += mass * fem.nonlinear_form_against(None, dofmap, stage, gamma, lift_field)
    return out


def _midpoint_mean_states(xs: np.ndarray) -> np.ndarray:
    """Midpoint-rule time average of node samples x_0..x_N (axis 0)."""
    return (0.5 * (xs[0] + xs[-1]) + xs[1:-1].sum(axis=0)) / (len(xs) - 1)


def seek_periodic(stepper: LinearStepper, force: ForcingProfile, collect_trace: bool = True) -> PeriodicSolution:
    """Mean-projection iteration to the periodic solution of the linear regime."""
    if stepper.regime is not Regime.LINEAR:
        raise ValueError("mean projection requires the linear regime (zero-mean target)")
    cfg = stepper.cfg
    if force.N != cfg.N:
        raise ValueError(f"forcing sampled at N={force.N} but config has N={cfg.N}")
    n_total = stepper.dofmap.n_total
    nv = stepper.dofmap.n_velocity
    grid = cfg.grid
    mids = grid.midpoints()
    ydd = [force.corrected_acceleration(float(t)) for t in mids]

    x0 = np.zeros(n_total)
    gamma0 = 0.0
    history = []
    trace = []
    best = None
    for cycle in range(1, cfg.max_cycles + 1):
        xs = np.empty((cfg.N + 1, n_total))
        gammas = np.empty(cfg.N + 1)
        xs[0], gammas[0] = x0, gamma0
        total_sub = 0
        for n in range(1, cfg.N + 1):
            x, g, subiters, drag = stepper.step(xs[n - 1], gammas[n - 1], ydd[n - 1])
            xs[n], gammas[n] = x, g
            total_sub += subiters
            if collect_trace:
                trace.append((cycle, n, n * grid.dt, g, drag, subiters))
        residual = stepper.field_norm(xs[-1][:nv] - xs[0][:nv]) + abs(gammas[-1] - gammas[0])
        history.append(residual)
        if best is None or residual <= best[0]:
            best = (residual, xs, gammas, cycle, total_sub)
        if residual < cfg.periodic_tol:
            break
        mean_x = _midpoint_mean_states(xs)
        mean_g = float(_midpoint_mean_states(gammas))
        x0 = xs[-1] - mean_x
        gamma0 = gammas[-1] - mean_g

    residual, xs, gammas, cycle, total_sub = best
    converged = bool(residual < cfg.periodic_tol)
    mean_x = _midpoint_mean_states(xs)
    mean_g = float(_midpoint_mean_states(gammas))
    states = [FieldVP.from_stacked(stepper.dofmap, xs[n], time_tag=n * grid.dt) for n in range(cfg.N + 1)]
    return PeriodicSolution(
        states=states,
        body_velocity=gammas,
        cycle_count=cycle,
        periodic_residual=residual,
        mean_body_velocity=mean_g,
        mean_field_norm=stepper.field_norm(mean_x[:nv]),
        converged=converged,
        residual_history=history,
        trace=trace,
        subiter_mean=total_sub / cfg.N,
    )


def time_average_field(sol: PeriodicSolution) -> FieldVP:
    """Midpoint-rule average of the trajectory's fields over the period."""
    xs = np.stack([s.stacked() for s in sol.states])
    mean = _midpoint_mean_states(xs)
    n = len(sol.states[0].u_r)
    return FieldVP(u_r=mean[:n], u_z=mean[n : 2 * n], p=mean[2 * n :], time_tag=0.0)


def time_average_velocity(sol: PeriodicSolution) -> float:
    return float(_midpoint_mean_states(sol.body_velocity))
