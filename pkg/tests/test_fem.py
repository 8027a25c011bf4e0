"""Element assembly: operator structure, exact identities, convergence orders.

The spatial accuracy test manufactures an axisymmetric Stokes solution from a
streamfunction (exactly divergence-free), derives the body force with sympy,
and solves with full Dirichlet data on a structured rectangle mesh away from
any body.  Quadratic velocity elements should converge in L2 at third order;
the gate is 2.5 to leave room for preasymptotic wobble.
"""

import math

import numpy as np
import pytest
import scipy.sparse as sp

from periprop import fem
from periprop.fem import ElementMode, Regime
from periprop.geometry import BodyShape, DomainSpec
from periprop.meshgen import BoundaryTag, generate_mesh, make_mesh
from periprop.linsolve import factorize

from conftest import coarse_config


def rectangle_mesh(n: int):
    """Structured right-triangle mesh of [0,1]^2 in the (r, z) plane."""
    k = n + 1
    rr, zz = np.meshgrid(np.arange(k) / n, np.arange(k) / n, indexing="ij")
    vertices = np.column_stack([rr.ravel(), zz.ravel()])
    idx = lambda i, j: i * k + j
    cells = []
    for i in range(n):
        for j in range(n):
            v00, v10, v11, v01 = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            cells.append([v00, v10, v11])
            cells.append([v00, v11, v01])
    bedges, tags = [], []
    for j in range(n):
        bedges.append([idx(0, j + 1), idx(0, j)])
        tags.append(BoundaryTag.AXIS)
        bedges.append([idx(n, j), idx(n, j + 1)])
        tags.append(BoundaryTag.LATERAL)
    for i in range(n):
        bedges.append([idx(i, 0), idx(i + 1, 0)])
        tags.append(BoundaryTag.OUTBOT)
        bedges.append([idx(i + 1, n), idx(i, n)])
        tags.append(BoundaryTag.OUTTOP)
    return make_mesh(vertices, np.asarray(cells), np.asarray(bedges), tags)


@pytest.fixture(scope="module")
def manufactured():
    """Exact fields and body force for the steady Stokes system.

    u is built from the streamfunction psi = r^2 phi so div u = 0 identically;
    f = -div T(u, p) in axisymmetric cylindrical coordinates.
    """
    import sympy as sy

    r, z = sy.symbols("r z", positive=True)
    phi = (1 - r**2) ** 2 * sy.sin(sy.pi * z)
    u_r = -r * sy.diff(phi, z)
    u_z = 2 * phi + r * sy.diff(phi, r)
    p = sy.sin(sy.pi * r**2) * sy.cos(sy.pi * z)

    s_rr = -p + 2 * sy.diff(u_r, r)
    s_zz = -p + 2 * sy.diff(u_z, z)
    s_rz = sy.diff(u_r, z) + sy.diff(u_z, r)
    s_tt = -p + 2 * u_r / r
    f_r = -(sy.diff(s_rr, r) + sy.diff(s_rz, z) + (s_rr - s_tt) / r)
    f_z = -(sy.diff(s_rz, r) + sy.diff(s_zz, z) + s_rz / r)

    div_u = sy.simplify(sy.diff(r * u_r, r) / r + sy.diff(u_z, z))
    assert div_u == 0

    lam = lambda e: sy.lambdify((r, z), sy.cancel(sy.together(e)), "numpy")
    return {
        "u_r": lam(u_r),
        "u_z": lam(u_z),
        "p": lam(p),
        "f": (lam(f_r), lam(f_z)),
    }


def solve_manufactured(n: int, exact) -> float:
    """Dirichlet Stokes solve on the n x n rectangle; returns L2 velocity error."""
    mesh = rectangle_mesh(n)
    dofmap = fem.build_spaces(mesh, ElementMode.TAYLOR_HOOD)
    ops = fem.assemble_operators(mesh, dofmap)
    bcs = fem.build_bcset(dofmap, Regime.NONLINEAR)
    sys_c = fem.apply_dirichlet(fem.saddle_matrix(ops, ops.A), bcs)

    fr_fn, fz_fn = exact["f"]
    load = np.concatenate([fem.assemble_load(mesh, dofmap, lambda r, z: (fr_fn(r, z), fz_fn(r, z))), np.zeros(dofmap.n_pressure)])

    np2 = dofmap.n_p2
    coords = dofmap.p2_coords
    x_c = np.zeros(dofmap.n_total)
    x_c[:np2] = exact["u_r"](coords[:, 0], coords[:, 1])
    x_c[np2 : 2 * np2] = exact["u_z"](coords[:, 0], coords[:, 1])
    pin_vertex = bcs.pinned_pressure - 2 * np2
    x_c[bcs.pinned_pressure] = exact["p"](*mesh.vertices[pin_vertex])
    mask = np.zeros(dofmap.n_total, dtype=bool)
    mask[bcs.constrained] = True
    x_c[~mask] = 0.0

    x_free = factorize(sys_c.K_free).solve(sys_c.reduce_rhs_values(load, x_c))
    x = sys_c.expand_values(x_free, x_c)

    g = dofmap.geom
    uh_r = np.einsum("ci,qi->cq", x[:np2][dofmap.cell_p2], g.n2)
    uh_z = np.einsum("ci,qi->cq", x[np2 : 2 * np2][dofmap.cell_p2], g.n2)
    er = uh_r - exact["u_r"](g.qr, g.qz)
    ez = uh_z - exact["u_z"](g.qr, g.qz)
    return math.sqrt(float(np.sum(g.w * (er**2 + ez**2))))


def test_spatial_convergence_order(manufactured):
    errs = [solve_manufactured(n, manufactured) for n in (4, 8, 16)]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 2.5, f"errors {errs}, orders {orders}"


def test_temporal_convergence_order(coarse_drop):
    from dataclasses import replace

    from periprop.forcing import ForcingProfile
    from periprop.timeloop import LinearStepper

    p = coarse_drop
    gammas = {}
    for N in (25, 50, 100):
        cfg = replace(p.cfg, N=N)
        stepper = LinearStepper(p.mesh, p.dofmap, p.ops, p.lift, cfg)
        force = ForcingProfile.from_name("y2", N)
        x = np.zeros(p.dofmap.n_total)
        gamma = 0.0
        for t in cfg.grid.midpoints():
            x, gamma, _, _ = stepper.step(x, gamma, force.corrected_acceleration(float(t)))
        gammas[N] = gamma
    order = math.log2(abs(gammas[25] - gammas[50]) / abs(gammas[50] - gammas[100]))
    assert order >= 1.8, f"one-period gammas {gammas}, order {order}"


def test_operator_symmetry_and_volume():
    mesh = rectangle_mesh(6)
    dofmap = fem.build_spaces(mesh, ElementMode.TAYLOR_HOOD)
    ops = fem.assemble_operators(mesh, dofmap)

    one = np.ones(dofmap.n_p2)
    vol = float(one @ (ops.M_scalar @ one))
    # revolved volume of the unit square: 2 pi int r dr dz = pi, exact for
    # affine cells and a rule of degree >= 1
    assert abs(vol - math.pi) < 1e-12 * math.pi

    assert (ops.M - ops.M.T).nnz == 0 or abs(ops.M - ops.M.T).max() < 1e-14
    assert abs(ops.A - ops.A.T).max() < 1e-12

    rng = np.random.default_rng(7)
    for _ in range(3):
        v = rng.standard_normal(dofmap.n_velocity)
        assert float(v @ (ops.M @ v)) > 0.0
        assert float(v @ (ops.A @ v)) >= -1e-12


def test_divergence_of_uniform_translation_is_zero():
    # div(e_z) = 0 pointwise, so the assembled divergence of the uniform
    # axial field vanishes cellwise, not just after cancellation
    mesh = rectangle_mesh(5)
    dofmap = fem.build_spaces(mesh, ElementMode.TAYLOR_HOOD)
    ops = fem.assemble_operators(mesh, dofmap)
    ez = np.concatenate([np.zeros(dofmap.n_p2), np.ones(dofmap.n_p2)])
    assert np.max(np.abs(ops.B @ ez)) < 1e-13


def test_viscous_nullspace_is_rigid_translation():
    # D(e_z) = 0: uniform axial translation carries no viscous energy
    mesh = rectangle_mesh(5)
    dofmap = fem.build_spaces(mesh, ElementMode.TAYLOR_HOOD)
    ops = fem.assemble_operators(mesh, dofmap)
    ez = np.concatenate([np.zeros(dofmap.n_p2), np.ones(dofmap.n_p2)])
    assert np.max(np.abs(ops.A @ ez)) < 1e-12
    # e_r is not rigid in axisymmetry (it stretches the hoop direction)
    er = np.concatenate([np.ones(dofmap.n_p2), np.zeros(dofmap.n_p2)])
    assert float(er @ (ops.A @ er)) > 1.0


def test_body_dirichlet_enforced_exactly(coarse_drop):
    from periprop.timeloop import LinearStepper

    p = coarse_drop
    stepper = LinearStepper(p.mesh, p.dofmap, p.ops, p.lift, coarse_config())
    x = stepper.sys_c.expand(np.zeros(len(stepper.bcs.free)), 1.0)
    body = p.dofmap.boundary_nodes[BoundaryTag.BODY]
    np2 = p.dofmap.n_p2
    assert np.all(x[body + np2] == 1.0)
    assert np.all(x[body] == 0.0)
    axis = p.dofmap.boundary_nodes[BoundaryTag.AXIS]
    assert np.all(x[axis] == 0.0)


def test_lps_mode_assembles_stabilization():
    mesh = generate_mesh(BodyShape.sphere(), DomainSpec(4.0), size_far=1.0, size_body=0.4)
    dofmap = fem.build_spaces(mesh, ElementMode.EQUAL_ORDER_LPS)
    ops = fem.assemble_operators(mesh, dofmap)
    assert dofmap.n_pressure == dofmap.n_p2
    assert ops.S.nnz > 0
    assert abs(ops.S - ops.S.T).max() < 1e-12
    # the fluctuation filter kills linears: S @ (affine pressure) = 0
    coords = dofmap.p2_coords
    lin = 0.3 + 0.7 * coords[:, 0] - 0.2 * coords[:, 1]
    assert np.max(np.abs(ops.S @ lin)) < 1e-12
