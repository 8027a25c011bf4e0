"""Direct integration of the coupled fluid-body system to its periodic regime.

The linear stepper treats the convective term as absent; here each trapezoidal
stage is solved by Newton on the monolithic fluid unknowns, with the same
omega-relaxed body subiteration closing the force balance.  The convection-free
stage factorization serves as the GMRES preconditioner, so the extra cost per
step over the linear path is a handful of matrix-vector products.

Periodicity is found by marching whole periods and watching the period map:
the mean velocity over a period and the state at the period boundary both have
to settle.  The mean-projection shortcut of the linear path does not apply
because the nonlinear mean is the quantity being computed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem, forcing
from .fem import DofMap, FieldVP, OperatorSet, Regime
from .forcing import ForcingProfile
from .geometry import BodyShape, DomainSpec
from .linsolve import NewtonDivergenceError, SolverError, SparseSystem, factorize, newton, solve_gmres
from .meshgen import AxiMesh, generate_mesh
from .timeloop import (
    LinearStepper,
    SimConfig,
    SubiterationError,
    surface_force_z,
    _midpoint_mean_states,
)


class _StageJacobian:
    """Stage Jacobian with a frozen-factorization GMRES solve.

    Holds the assembled free-dof matrix; solves with the convection-free
    stage LU as preconditioner.  Falls back to a direct factorization if
    GMRES stalls, which keeps rare strongly-convective steps from derailing
    a long march.
    """

    def __init__(self, matrix: sp.csr_matrix, preconditioner, rtol: float, stats: dict | None = None):
        self.matrix = matrix
        self.preconditioner = preconditioner
        self.rtol = rtol
        self.stats = stats if stats is not None else {}
        self._direct = None

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, other):
        return self.matrix @ other

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x, info = solve_gmres(
            SparseSystem(self.matrix, rhs),
            preconditioner=self.preconditioner,
            tol=self.rtol,
            maxiter=40,
        )
        self.stats["gmres_iters"] = self.stats.get("gmres_iters", 0) + info["iterations"]
        if not info["converged"]:
            bnorm = float(np.linalg.norm(rhs))
            rel = float(np.linalg.norm(self.matrix @ x - rhs)) / max(bnorm, 1e-300)
            if rel > 1e-4:
                if self._direct is None:
                    self._direct = factorize(self.matrix)
                x = self._direct.solve(rhs)
                self.stats["direct_fallbacks"] = self.stats.get("direct_fallbacks", 0) + 1
        return x


class NonlinearStepper:
    """Trapezoidal stepper for the body-frame system with convection.

    Wraps a LinearStepper built under the all-Dirichlet regime: its stage
    factorization preconditions the Newton systems and its added-mass estimate
    sets the subiteration relaxation.  The Jacobian is refreshed lazily (every
    jac_refresh steps, or on a Newton failure); the residual is always exact,
    so staleness only affects the iteration count, never the answer.
    """

    def __init__(
        self,
        mesh: AxiMesh,
        dofmap: DofMap,
        ops: OperatorSet,
        lift,
        cfg: SimConfig,
        jac_refresh: int = 20,
        gmres_rtol: float = 1e-6,
        newton_rtol: float = 1e-10,
    ):
        self.mesh = mesh
        self.dofmap = dofmap
        self.ops = ops
        self.lift = lift
        self.cfg = cfg
        self.lin = LinearStepper(mesh, dofmap, ops, lift, cfg, Regime.NONLINEAR)
        self.regime = Regime.NONLINEAR
        self.dt = self.lin.dt
        self.mass = self.lin.mass
        self.c_m = self.lin.c_m
        self.omega = self.lin.omega
        self.jac_refresh = jac_refresh
        self.gmres_rtol = gmres_rtol
        self.newton_rtol = newton_rtol
        self._jac: _StageJacobian | None = None
        self._jac_age = 0
        self._zero_p = np.zeros(0)
        self._x_hom_free = self.lin.x_hom[self.lin.sys_c.bcs.free]
        self.stats = {"steps": 0, "subiters": 0, "newton_iters": 0, "gmres_iters": 0, "jac_builds": 0}

    # -- stage equation ---------------------------------------------------

    def stage_system(self, x_prev: np.ndarray, gamma_prev: float, gamma: float):
        """Residual and exact-Jacobian callables of one trapezoidal stage.

        The unknown is the free-dof vector of (v_n, p_n) at fixed body
        velocity gamma; the convective term is evaluated at the stage average
        v_hat = (v_prev + v_n)/2 advected with gamma_hat = (gamma_prev+gamma)/2.
        """
        sys_c = self.lin.sys_c
        free = sys_c.bcs.free
        nv = self.dofmap.n_velocity
        v_prev = x_prev[:nv]
        b = np.zeros(self.dofmap.n_total)
        b[:nv] = self.c_m * (self.ops.M @ v_prev) - 0.5 * (self.ops.A @ v_prev)
        b_red = sys_c.reduce_rhs(b, gamma)
        gamma_hat = 0.5 * (gamma_prev + gamma)
        mass = self.mass

        def stage_field(x_free: np.ndarray) -> FieldVP:
            x_full = sys_c.expand(x_free, gamma)
            vhat = 0.5 * (v_prev + x_full[:nv])
            np2 = self.dofmap.n_p2
            return FieldVP(u_r=vhat[:np2], u_z=vhat[np2:], p=self._zero_p)

        def residual(x_free: np.ndarray) -> np.ndarray:
            conv = fem.convection_vector(self.dofmap, stage_field(x_free), gamma_hat)
            full = np.zeros(self.dofmap.n_total)
            full[:nv] = mass * conv
            return sys_c.K_free @ x_free - b_red + full[free]

        def jacobian_matrix(x_free: np.ndarray) -> sp.csr_matrix:
            Jc = fem.assemble_convection_jacobian(self.mesh, self.dofmap, stage_field(x_free), gamma_hat)
            n_rest = self.dofmap.n_total - nv
            pad = sp.bmat([[Jc, None], [None, sp.csr_matrix((n_rest, n_rest))]], format="csr")
            # d vhat / d v_n = 1/2
            return (sys_c.K_free + (0.5 * mass) * pad[free][:, free]).tocsr()

        return residual, jacobian_matrix

    def _solve_stage(self, x_prev: np.ndarray, gamma_prev: float, gamma: float, x_free0: np.ndarray):
        residual, jacobian_matrix = self.stage_system(x_prev, gamma_prev, gamma)
        # scale the Newton tolerance by the right-hand-side magnitude
        nv = self.dofmap.n_velocity
        v_prev = x_prev[:nv]
        b_scale = float(np.linalg.norm(self.c_m * (self.ops.M @ v_prev) - 0.5 * (self.ops.A @ v_prev)))
        tol = self.newton_rtol * max(1.0, b_scale)

        def jacobian(x_free: np.ndarray):
            if self._jac is None or self._jac_age >= self.jac_refresh:
                self._jac = _StageJacobian(jacobian_matrix(x_free), self.lin.lu, self.gmres_rtol, self.stats)
                self._jac_age = 0
                self.stats["jac_builds"] += 1
            return self._jac

        try:
            x_free, trace = newton(residual, jacobian, x_free0, tol=tol, maxit=12)
        except (SolverError, NewtonDivergenceError):
            # stale Jacobian can stall Newton: rebuild and retry once
            self._jac = None
            x_free, trace = newton(residual, jacobian, x_free0, tol=tol, maxit=25)
        self.stats["newton_iters"] += len(trace) - 1
        return x_free

    # -- one step ----------------------------------------------------------

    def step(
        self,
        x_prev: np.ndarray,
        gamma_prev: float,
        ydd_mid: float,
        gamma_pred: float | None = None,
        x_guess: np.ndarray | None = None,
    ):
        """Advance one step; returns (x_next, gamma_next, subiters, F_z).

        gamma_pred and x_guess seed the iterations (extrapolations from
        earlier steps shorten them); the converged result does not depend on
        the seeds.
        """
        cfg = self.cfg
        sys_c = self.lin.sys_c
        free = sys_c.bcs.free
        gamma = gamma_prev if gamma_pred is None else gamma_pred
        x_free = (x_prev if x_guess is None else x_guess)[free]
        prev_field = FieldVP.from_stacked(self.dofmap, x_prev)
        explicit = gamma_prev + self.dt * ydd_mid
        coef = self.dt / self.mass
        omega = self.omega
        subiters = 0
        delta = np.inf
        F_z = 0.0
        for _ in range(cfg.subiter_max):
            subiters += 1
            x_free = self._solve_stage(x_prev, gamma_prev, gamma, x_free)
            x_full = sys_c.expand(x_free, gamma)
            F_z = surface_force_z(
                FieldVP.from_stacked(self.dofmap, x_full),
                prev_field,
                0.5 * (gamma_prev + gamma),
                self.dofmap,
                self.ops,
                self.lift,
                cfg.h,
                self.dt,
                Regime.NONLINEAR,
            )
            gamma_tilde = explicit - coef * F_z
            gamma_new = omega * gamma_tilde + (1.0 - omega) * gamma
            delta, gamma_used, gamma = abs(gamma_new - gamma), gamma, gamma_new
            if delta <= cfg.subiter_tol:
                break
            # move the field guess with gamma so the next Newton call starts
            # from the affine prediction rather than the stale solution
            x_free = x_free + (gamma - gamma_used) * self._x_hom_free
        else:
            raise SubiterationError(f"subiteration stalled: |d gamma| = {delta:.3e} after {cfg.subiter_max} passes")
        # the field was solved at gamma_used; the convection-free homogeneous
        # response moves it to the converged gamma (both differ by <=
        # subiter_tol, so the neglected convective coupling is second order
        # in an already negligible correction)
        x_free = x_free + (gamma - gamma_used) * self._x_hom_free
        self._jac_age += 1
        self.stats["steps"] += 1
        self.stats["subiters"] += subiters
        return sys_c.expand(x_free, gamma), gamma, subiters, F_z

    def field_norm(self, v: np.ndarray) -> float:
        return self.lin.field_norm(v)


def step_nonlinear(prev: FieldVP, gamma_prev: float, t_mid: float, cfg: SimConfig, stepper: NonlinearStepper, force: ForcingProfile):
    """Single nonlinear step at midpoint time t_mid (module-level veneer)."""
    x, gamma, subiters, _ = stepper.step(prev.stacked(), gamma_prev, force.corrected_acceleration(t_mid))
    return FieldVP.from_stacked(stepper.dofmap, x, time_tag=prev.time_tag + stepper.dt), gamma, subiters


@dataclass
class NonlinearResult:
    """Periodic-regime summary of a direct nonlinear run.

    mean_gamma is the midpoint-rule average of the body velocity over the
    final marched period; per_period holds (period, mean_gamma, state_change)
    rows, state_change being the period-map residual that decides convergence.
    times/gammas carry the full body-velocity history for trajectory work.
    """

    mean_gamma: float
    per_period: list
    cycles_run: int
    cycle_residual: float
    converged: bool
    times: np.ndarray
    gammas: np.ndarray
    h: float
    warm_subiters: int = 0

    def summary_rows(self):
        return [(int(k), float(m), float(s)) for (k, m, s) in self.per_period]


def _transient_tail(deltas: list) -> np.ndarray | None:
    """Predicted remaining transient sum from consecutive period-map deltas.

    The late transient is governed by the linearized period map: consecutive
    differences satisfy d_{j+1} = E d_j for a contraction E.  Projecting the
    observed differences onto their own span gives a small matrix model H of
    E, and the tail sum over all future periods is (I-H)^{-1} H d_k in that
    basis.  Several gates guard against applying the model outside its range:
    the fit must actually explain the data, the model must be a contraction,
    and the predicted jump must stay within a fixed multiple of the last
    observed change.  Returns None when any gate fails.
    """
    m = len(deltas)
    D = np.stack(deltas, axis=1)
    scale = np.linalg.norm(D[:, -1])
    if scale == 0.0 or not np.isfinite(scale):
        return None
    Q, R = np.linalg.qr(D)
    # coordinates of each delta in the orthonormal basis
    a = Q.T @ D
    A_prev, A_next = a[:, :-1], a[:, 1:]
    H, *_ = np.linalg.lstsq(A_prev.T, A_next.T, rcond=None)
    H = H.T
    fit = np.linalg.norm(H @ A_prev - A_next) / max(np.linalg.norm(A_next), 1e-300)
    if fit > 0.1:
        return None
    eigs = np.linalg.eigvals(H)
    rho = float(np.max(np.abs(eigs))) if len(eigs) else 0.0
    if rho >= 0.995:
        return None
    try:
        tail_coord = np.linalg.solve(np.eye(m) - H, H @ a[:, -1])
    except np.linalg.LinAlgError:
        return None
    tail = Q @ tail_coord
    if not np.all(np.isfinite(tail)) or np.linalg.norm(tail) > 100.0 * scale:
        return None
    return tail


def run_to_periodic(
    cfg: SimConfig,
    force: ForcingProfile,
    shape: BodyShape,
    mesh: AxiMesh | None = None,
    assembled: tuple | None = None,
    cycle_tol: float = 1e-5,
    state_tol: float = 1e-4,
    max_cycles: int = 60,
    stepper: NonlinearStepper | None = None,
    accelerate: bool = True,
) -> NonlinearResult:
    """March the nonlinear system period by period until the period map settles.

    One linear pass with a mean projection seeds the initial values: the
    periodic solution of the convection-free dynamics has zero mean, so
    subtracting the computed mean from the end state removes the slowly
    decaying drift mode before the nonlinear march starts.  Convergence then
    asks the per-period mean velocity change to drop below cycle_tol and the
    period-boundary state change below state_tol; failure to settle within
    max_cycles is reported through the converged flag, not an exception.

    The slowest surviving transient is a domain-scale viscous mode whose
    period-to-period decay factor approaches 1 on large domains.  With
    accelerate=True an Aitken jump along the dominant mode is applied whenever
    three consecutive period-end states show a cleanly aligned geometric
    decay; convergence is still judged only on honestly marched periods after
    the last jump, so the fixed point is unaffected.

    Parameters
    ----------
    cfg, force, shape : run configuration, forcing profile, body.
    mesh, assembled : optional prebuilt mesh or (mesh, dofmap, ops, lift)
        tuple, reused across runs of the same geometry.
    cycle_tol, state_tol, max_cycles : period-map convergence knobs.
    stepper : optional prebuilt NonlinearStepper (overrides mesh/assembled).
    accelerate : Aitken extrapolation of the period map (on by default).
    """
    if stepper is None:
        if assembled is not None:
            mesh, dofmap, ops, lift = assembled
        else:
            if mesh is None:
                mesh = generate_mesh(shape, DomainSpec(cfg.R), cfg.size_far, cfg.size_body)
            dofmap = fem.build_spaces(mesh, cfg.mode)
            ops = fem.assemble_operators(mesh, dofmap)
            lift = fem.build_lift(mesh, dofmap)
        stepper = NonlinearStepper(mesh, dofmap, ops, lift, cfg)
    if force.N != cfg.N:
        raise ValueError(f"forcing discretization N={force.N} does not match cfg.N={cfg.N}")
    N = cfg.N
    ydd = np.asarray(forcing.midpoint_samples(force, N))

    n_total = stepper.dofmap.n_total
    nv = stepper.dofmap.n_velocity

    # linear pass + mean projection for corrected initial values
    x = np.zeros(n_total)
    gamma = 0.0
    xs = np.empty((N + 1, n_total))
    gs = np.empty(N + 1)
    xs[0], gs[0] = x, gamma
    warm_subiters = 0
    for n in range(N):
        x, gamma, sub, _ = stepper.lin.step(x, gamma, ydd[n])
        xs[n + 1], gs[n + 1] = x, gamma
        warm_subiters += sub
    x0 = xs[-1] - _midpoint_mean_states(xs)
    gamma0 = gs[-1] - float(_midpoint_mean_states(gs))

    per_period = []
    times_all = [np.array([0.0])]
    gammas_all = [np.array([gamma0])]
    mean_prev = None
    x_end_prev = x0
    g_end_prev = gamma0
    converged = False
    residual = np.inf
    k = 0
    x, gamma = x0, gamma0
    g_hist = [gamma0, gamma0]
    x_hist = [x0, x0]
    deltas: list = []
    since_jump = 0
    for k in range(1, max_cycles + 1):
        gs = np.empty(N + 1)
        gs[0] = gamma
        for n in range(N):
            gamma_pred = 2.0 * g_hist[-1] - g_hist[-2]
            x_guess = 2.0 * x_hist[-1] - x_hist[-2]
            x, gamma, _, _ = stepper.step(x, gamma, ydd[n], gamma_pred, x_guess)
            gs[n + 1] = gamma
            g_hist = [g_hist[-1], gamma]
            x_hist = [x_hist[-1], x]
        mean_k = float(_midpoint_mean_states(gs))
        state_change = stepper.field_norm(x[:nv] - x_end_prev[:nv]) + abs(gamma - g_end_prev)
        per_period.append((k, mean_k, state_change))
        times_all.append((k - 1) + (np.arange(N) + 1) / N)
        gammas_all.append(gs[1:])
        d_mean = np.inf if mean_prev is None else abs(mean_k - mean_prev)
        residual = state_change + (0.0 if mean_prev is None else d_mean)
        if mean_prev is not None and d_mean <= cycle_tol and state_change <= state_tol:
            converged = True
            break
        delta = np.concatenate([x - x_end_prev, [gamma - g_end_prev]])
        mean_prev = mean_k
        x_end_prev, g_end_prev = x, gamma
        since_jump += 1
        deltas.append(delta)
        if len(deltas) > 6:
            deltas.pop(0)
        if accelerate and since_jump >= 3 and len(deltas) >= 3:
            tail = _transient_tail(deltas)
            if tail is not None:
                x = x + tail[:-1]
                gamma = gamma + tail[-1]
                g_hist = [gamma, gamma]
                x_hist = [x, x]
                x_end_prev, g_end_prev = x, gamma
                mean_prev = None
                deltas.clear()
                since_jump = 0
    mean_gamma = per_period[-1][1] if per_period else 0.0
    return NonlinearResult(
        mean_gamma=mean_gamma,
        per_period=per_period,
        cycles_run=k,
        cycle_residual=residual,
        converged=converged,
        times=np.concatenate(times_all),
        gammas=np.concatenate(gammas_all),
        h=cfg.h,
        warm_subiters=warm_subiters,
    )


def trajectory(result: NonlinearResult):
    """Body position eta(t) by cumulative trapezoid of gamma, plus the mean line.

    Returns (t, eta, mean_line) with mean_line = mean_gamma * t; in the
    converged regime eta(kT) advances by mean_gamma per period, so the two
    curves run parallel once transients have died out.
    """
    t = result.times
    g = result.gammas
    if len(t) < 2:
        return t, np.zeros_like(t), np.zeros_like(t)
    eta = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(t))])
    return t, eta, result.mean_gamma * (t - t[0])
