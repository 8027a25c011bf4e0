"""Axisymmetric mixed finite elements on the meridian triangulation.

Velocity components (u_r, u_z) use quadratic Lagrange elements; pressure is
linear (Taylor-Hood, the default) or quadratic with local projection
stabilization.  Every integral carries the azimuthal measure 2 pi r dr dz,
baked into the quadrature weights, so assembled operators and functionals
are integrals over the full solid of revolution.  The (meridian) viscous
form is

    a(u, phi) = int [ 2 dr(u_r) dr(phi_r) + 2 dz(u_z) dz(phi_z)
                      + (dz(u_r) + dr(u_z)) (dz(phi_r) + dr(phi_z))
                      + 2 u_r phi_r / r^2 ] 2 pi r dr dz,

the divergence form b(u, q) = int q (dr(u_r) + u_r/r + dz(u_z)) 2 pi r dr dz.
Quadrature is a 7-point degree-5 interior rule, so the 1/r factors are never
evaluated on the axis.

Global dof layout: u_r at [0, n_p2), u_z at [n_p2, 2 n_p2), pressure at
[2 n_p2, 2 n_p2 + n_pressure).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .meshgen import AxiMesh, BoundaryTag

TWO_PI = 2.0 * math.pi

# 7-point degree-5 rule, barycentric points and area-fraction weights
_S15 = math.sqrt(15.0)
_B1 = (6.0 - _S15) / 21.0
_B2 = (6.0 + _S15) / 21.0
_W0 = 9.0 / 40.0
_W1 = (155.0 - _S15) / 1200.0
_W2 = (155.0 + _S15) / 1200.0
_QBARY = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_B1, _B1, 1 - 2 * _B1],
        [_B1, 1 - 2 * _B1, _B1],
        [1 - 2 * _B1, _B1, _B1],
        [_B2, _B2, 1 - 2 * _B2],
        [_B2, 1 - 2 * _B2, _B2],
        [1 - 2 * _B2, _B2, _B2],
    ]
)
_QW = np.array([_W0, _W1, _W1, _W1, _W2, _W2, _W2])
NQ = 7


class ElementMode(Enum):
    TAYLOR_HOOD = "taylor-hood"
    EQUAL_ORDER_LPS = "equal-order-lps"


class Regime(Enum):
    """Boundary-condition regime.

    LINEAR: Body Dirichlet, axis u_r = 0, lateral Dirichlet-0, natural
    (do-nothing) outflow at z = +-R.  NONLINEAR: Dirichlet-0 on every outer
    boundary (the moving-frame formulation is incompatible with do-nothing
    outflow) plus one pinned pressure dof to fix the gauge.
    """

    LINEAR = "linear"
    NONLINEAR = "nonlinear"


def _p2_values(bary: np.ndarray) -> np.ndarray:
    """P2 basis values at barycentric points; dof order [v0,v1,v2,m12,m20,m01]."""
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    return np.column_stack(
        [
            l0 * (2 * l0 - 1),
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            4 * l1 * l2,
            4 * l2 * l0,
            4 * l0 * l1,
        ]
    )


def _p2_ref_grads(bary: np.ndarray) -> np.ndarray:
    """Reference gradients of the P2 basis, shape (nq, 6, 2)."""
    gl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    nq = len(bary)
    out = np.empty((nq, 6, 2))
    for q, (l0, l1, l2) in enumerate(bary):
        lam = (l0, l1, l2)
        for i in range(3):
            out[q, i] = (4 * lam[i] - 1) * gl[i]
        out[q, 3] = 4 * (l2 * gl[1] + l1 * gl[2])
        out[q, 4] = 4 * (l0 * gl[2] + l2 * gl[0])
        out[q, 5] = 4 * (l1 * gl[0] + l0 * gl[1])
    return out


def _p1_values(bary: np.ndarray) -> np.ndarray:
    return bary.copy()


_P1_REF_GRADS = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


class _Geom:
    """Per-cell geometry and basis tables shared by every assembler."""

    def __init__(self, mesh: AxiMesh, mode: ElementMode):
        cells = mesh.cells
        v = mesh.vertices
        p0, p1, p2 = v[cells[:, 0]], v[cells[:, 1]], v[cells[:, 2]]
        J = np.stack([p1 - p0, p2 - p0], axis=2)  # (m, 2, 2), columns are edges
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1] / det
        inv[:, 0, 1] = -J[:, 0, 1] / det
        inv[:, 1, 0] = -J[:, 1, 0] / det
        inv[:, 1, 1] = J[:, 0, 0] / det
        self.n2 = _p2_values(_QBARY)  # (nq, 6)
        ref_g2 = _p2_ref_grads(_QBARY)  # (nq, 6, 2)
        # physical gradients: grad N = invJ^T @ ref_grad
        self.g2 = np.einsum("cdk,qid->cqik", inv, ref_g2)  # (m, nq, 6, 2)
        xq = p0[:, None, :] + np.einsum("ckd,qd->cqk", J, _QBARY[:, 1:])  # (m, nq, 2)
        self.qr = xq[:, :, 0]
        self.qz = xq[:, :, 1]
        self.w = 0.5 * det[:, None] * _QW[None, :] * TWO_PI * self.qr  # (m, nq)
        if mode is ElementMode.TAYLOR_HOOD:
            self.pvals = _p1_values(_QBARY)
            p1g = np.einsum("cdk,id->cik", inv, _P1_REF_GRADS)
            self.gp = np.broadcast_to(p1g[:, None, :, :], (len(det), NQ, 3, 2))
        else:
            self.pvals = self.n2
            self.gp = self.g2
        e01 = np.linalg.norm(p1 - p0, axis=1)
        e12 = np.linalg.norm(p2 - p1, axis=1)
        e20 = np.linalg.norm(p0 - p2, axis=1)
        self.h_cell = np.maximum(np.maximum(e01, e12), e20)


@dataclass
class DofMap:
    """Dof bookkeeping for one mesh and element mode.

    Scalar quadratic dofs are vertices followed by edge midpoints; pressure
    dofs are vertices (Taylor-Hood) or the full quadratic set (LPS mode).
    boundary_nodes maps each BoundaryTag to the sorted quadratic node ids on
    edges with that tag (endpoint vertices plus the midpoint node).
    """

    mesh: AxiMesh
    mode: ElementMode
    n_p2: int
    n_pressure: int
    cell_p2: np.ndarray
    cell_pressure: np.ndarray
    p2_coords: np.ndarray
    boundary_nodes: dict
    _geom_cache: object = field(default=None, repr=False, compare=False)

    @property
    def n_velocity(self) -> int:
        return 2 * self.n_p2

    @property
    def n_total(self) -> int:
        return 2 * self.n_p2 + self.n_pressure

    @property
    def geom(self) -> _Geom:
        if self._geom_cache is None:
            self._geom_cache = _Geom(self.mesh, self.mode)
        return self._geom_cache

    def nodes_of(self, *tags: BoundaryTag) -> np.ndarray:
        parts = [self.boundary_nodes[t] for t in tags if len(self.boundary_nodes[t])]
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(parts))


def build_spaces(mesh: AxiMesh, mode: ElementMode = ElementMode.TAYLOR_HOOD) -> DofMap:
    """Construct the dof map: quadratic velocity, pressure per mode."""
    cells = mesh.cells.astype(np.int64)
    nv = mesh.num_vertices
    raw = np.vstack([cells[:, [1, 2]], cells[:, [2, 0]], cells[:, [0, 1]]])
    raw = np.sort(raw, axis=1)
    key = raw[:, 0] * np.int64(nv) + raw[:, 1]
    uniq_key, inverse = np.unique(key, return_inverse=True)
    ne = len(uniq_key)
    edge_v = np.column_stack([uniq_key // nv, uniq_key % nv])
    m = len(cells)
    cell_p2 = np.column_stack(
        [cells, nv + inverse[0:m], nv + inverse[m : 2 * m], nv + inverse[2 * m : 3 * m]]
    )
    p2_coords = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[edge_v[:, 0]] + mesh.vertices[edge_v[:, 1]])])
    if mode is ElementMode.TAYLOR_HOOD:
        n_pressure, cell_pressure = nv, cells
    else:
        n_pressure, cell_pressure = nv + ne, cell_p2
    boundary_nodes = {t: [] for t in BoundaryTag}
    for (i, j), tag in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags):
        a, b = (i, j) if i < j else (j, i)
        eid = int(np.searchsorted(uniq_key, np.int64(a) * nv + b))
        boundary_nodes[tag].extend((i, j, nv + eid))
    boundary_nodes = {t: np.unique(np.asarray(v, dtype=np.int64)) for t, v in boundary_nodes.items()}
    return DofMap(
        mesh=mesh,
        mode=mode,
        n_p2=nv + ne,
        n_pressure=n_pressure,
        cell_p2=cell_p2,
        cell_pressure=cell_pressure.astype(np.int64),
        p2_coords=p2_coords,
        boundary_nodes=boundary_nodes,
    )


@dataclass
class FieldVP:
    """Velocity-pressure sample at one time instant (coefficient vectors)."""

    u_r: np.ndarray
    u_z: np.ndarray
    p: np.ndarray
    time_tag: float = 0.0

    @classmethod
    def zero(cls, dofmap: DofMap, time_tag: float = 0.0) -> "FieldVP":
        return cls(
            u_r=np.zeros(dofmap.n_p2),
            u_z=np.zeros(dofmap.n_p2),
            p=np.zeros(dofmap.n_pressure),
            time_tag=time_tag,
        )

    @classmethod
    def from_stacked(cls, dofmap: DofMap, x: np.ndarray, time_tag: float = 0.0) -> "FieldVP":
        n = dofmap.n_p2
        return cls(u_r=x[:n].copy(), u_z=x[n : 2 * n].copy(), p=x[2 * n :].copy(), time_tag=time_tag)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.u_r, self.u_z, self.p])

    def velocity(self) -> np.ndarray:
        return np.concatenate([self.u_r, self.u_z])


@dataclass(frozen=True)
class LiftField:
    """Velocity-only extension field: e_z on the body, 0 on outer boundaries,
    supported on the first two cell layers around the body."""

    u_r: np.ndarray
    u_z: np.ndarray

    def velocity(self) -> np.ndarray:
        return np.concatenate([self.u_r, self.u_z])


@dataclass(frozen=True)
class OperatorSet:
    """Assembled constant operators: mass, viscous, divergence, stabilization."""

    M_scalar: sp.csr_matrix
    M: sp.csr_matrix
    A: sp.csr_matrix
    B: sp.csr_matrix
    S: sp.csr_matrix


def _scatter(local: np.ndarray, rows: np.ndarray, cols: np.ndarray, shape) -> sp.csr_matrix:
    """Assemble per-cell dense blocks (m, a, b) into a CSR matrix."""
    m, a, b = local.shape
    r = np.repeat(rows, b, axis=1).ravel()
    c = np.tile(cols, (1, a)).ravel()
    return sp.coo_matrix((local.ravel(), (r, c)), shape=shape).tocsr()


def assemble_operators(mesh: AxiMesh, dofmap: DofMap) -> OperatorSet:
    """Assemble mass, viscous, divergence, and stabilization operators."""
    g = dofmap.geom
    w = g.w
    n = g.n2
    gr = g.g2[..., 0]
    gz = g.g2[..., 1]
    n_over_r = n[None, :, :] / g.qr[:, :, None]
    cp2 = dofmap.cell_p2
    cpr = dofmap.cell_pressure
    np2 = dofmap.n_p2
    npr = dofmap.n_pressure

    m_loc = np.einsum("cq,qi,qj->cij", w, n, n, optimize=True)
    M_scalar = _scatter(m_loc, cp2, cp2, (np2, np2))
    M = sp.block_diag([M_scalar, M_scalar], format="csr")

    nn = np.einsum("cq,qi,qj->cij", w / g.qr**2, n, n, optimize=True)
    a_rr = (
        2.0 * np.einsum("cq,cqi,cqj->cij", w, gr, gr, optimize=True)
        + np.einsum("cq,cqi,cqj->cij", w, gz, gz, optimize=True)
        + 2.0 * nn
    )
    a_zz = 2.0 * np.einsum("cq,cqi,cqj->cij", w, gz, gz, optimize=True) + np.einsum(
        "cq,cqi,cqj->cij", w, gr, gr, optimize=True
    )
    a_rz = np.einsum("cq,cqi,cqj->cij", w, gz, gr, optimize=True)  # row u_r test, col u_z trial
    nvel = 2 * np2
    A = (
        _scatter(a_rr, cp2, cp2, (nvel, nvel))
        + _scatter(a_zz, cp2 + np2, cp2 + np2, (nvel, nvel))
        + _scatter(a_rz, cp2, cp2 + np2, (nvel, nvel))
        + _scatter(np.swapaxes(a_rz, 1, 2), cp2 + np2, cp2, (nvel, nvel))
    )

    pv = g.pvals
    div_r = gr + n_over_r  # dr(N_i) + N_i/r
    b_r = np.einsum("cq,qk,cqi->cki", w, pv, div_r, optimize=True)
    b_z = np.einsum("cq,qk,cqi->cki", w, pv, gz, optimize=True)
    B = _scatter(b_r, cpr, cp2, (npr, nvel)) + _scatter(b_z, cpr, cp2 + np2, (npr, nvel))

    if dofmap.mode is ElementMode.TAYLOR_HOOD:
        S = sp.csr_matrix((npr, npr))
    else:
        kappa = g.gp.copy()  # (m, nq, 6, 2)
        lin = np.einsum("cdk,id->cik", _inv_jacobians(mesh), _P1_REF_GRADS)
        kappa[:, :, :3, :] -= lin[:, None, :, :]
        tau = 0.05 * g.h_cell**2
        s_loc = np.einsum("c,cq,cqik,cqjk->cij", tau, w, kappa, kappa, optimize=True)
        S = _scatter(s_loc, cpr, cpr, (npr, npr))
    return OperatorSet(M_scalar=M_scalar, M=M, A=A.tocsr(), B=B.tocsr(), S=S)


def _inv_jacobians(mesh: AxiMesh) -> np.ndarray:
    v = mesh.vertices
    cells = mesh.cells
    p0, p1, p2 = v[cells[:, 0]], v[cells[:, 1]], v[cells[:, 2]]
    J = np.stack([p1 - p0, p2 - p0], axis=2)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1] / det
    inv[:, 0, 1] = -J[:, 0, 1] / det
    inv[:, 1, 0] = -J[:, 1, 0] / det
    inv[:, 1, 1] = J[:, 0, 0] / det
    return inv


def assemble_load(mesh: AxiMesh, dofmap: DofMap, f) -> np.ndarray:
    """Assemble the body-force load vector for f(r, z) -> (f_r, f_z).

    Verification hook for manufactured solutions; the physical problem has
    no volumetric force.
    """
    g = dofmap.geom
    fr, fz = f(g.qr, g.qz)
    load = np.zeros(dofmap.n_velocity)
    lr = np.einsum("cq,cq,qi->ci", g.w, fr, g.n2, optimize=True)
    lz = np.einsum("cq,cq,qi->ci", g.w, fz, g.n2, optimize=True)
    np.add.at(load, dofmap.cell_p2, lr)
    np.add.at(load, dofmap.cell_p2 + dofmap.n_p2, lz)
    return load


def _field_at_q(dofmap: DofMap, coeff: np.ndarray):
    """Values and gradients of a scalar quadratic field at quadrature points."""
    g = dofmap.geom
    local = coeff[dofmap.cell_p2]
    vals = np.einsum("ci,qi->cq", local, g.n2, optimize=True)
    grads = np.einsum("ci,cqik->cqk", local, g.g2, optimize=True)
    return vals, grads


def assemble_convection(mesh: AxiMesh, dofmap: DofMap, w_field: FieldVP, gamma: float) -> sp.csr_matrix:
    """Matrix of u -> ((w - gamma e_z) . grad) u, block-diagonal over components."""
    g = dofmap.geom
    wr, _ = _field_at_q(dofmap, w_field.u_r)
    wz, _ = _field_at_q(dofmap, w_field.u_z)
    adv_z = wz - gamma
    loc = np.einsum(
        "cq,qi,cqj->cij", g.w, g.n2, wr[:, :, None] * g.g2[..., 0] + adv_z[:, :, None] * g.g2[..., 1], optimize=True
    )
    np2 = dofmap.n_p2
    nvel = 2 * np2
    cp2 = dofmap.cell_p2
    return (_scatter(loc, cp2, cp2, (nvel, nvel)) + _scatter(loc, cp2 + np2, cp2 + np2, (nvel, nvel))).tocsr()


def assemble_convection_jacobian(mesh: AxiMesh, dofmap: DofMap, v: FieldVP, gamma: float) -> sp.csr_matrix:
    """Jacobian of u -> ((u - gamma e_z) . grad) u at u = v.

    Equals N(v, gamma) + C(v), where C(v) u = (u . grad) v contributes four
    mass-like blocks weighted by the velocity gradient components.
    """
    g = dofmap.geom
    _, grad_vr = _field_at_q(dofmap, v.u_r)
    _, grad_vz = _field_at_q(dofmap, v.u_z)
    np2 = dofmap.n_p2
    nvel = 2 * np2
    cp2 = dofmap.cell_p2

    def mass_like(weight):
        return np.einsum("cq,cq,qi,qj->cij", g.w, weight, g.n2, g.n2, optimize=True)

    C = (
        _scatter(mass_like(grad_vr[..., 0]), cp2, cp2, (nvel, nvel))
        + _scatter(mass_like(grad_vr[..., 1]), cp2, cp2 + np2, (nvel, nvel))
        + _scatter(mass_like(grad_vz[..., 0]), cp2 + np2, cp2, (nvel, nvel))
        + _scatter(mass_like(grad_vz[..., 1]), cp2 + np2, cp2 + np2, (nvel, nvel))
    )
    return (assemble_convection(mesh, dofmap, v, gamma) + C).tocsr()


def convection_vector(dofmap: DofMap, v: FieldVP, gamma: float) -> np.ndarray:
    """Nodal vector of ((v - gamma e_z) . grad) v, assembled directly."""
    g = dofmap.geom
    vr, grad_vr = _field_at_q(dofmap, v.u_r)
    vz, grad_vz = _field_at_q(dofmap, v.u_z)
    adv_z = vz - gamma
    conv_r = vr * grad_vr[..., 0] + adv_z * grad_vr[..., 1]
    conv_z = vr * grad_vz[..., 0] + adv_z * grad_vz[..., 1]
    out = np.zeros(dofmap.n_velocity)
    np.add.at(out, dofmap.cell_p2, np.einsum("cq,cq,qi->ci", g.w, conv_r, g.n2, optimize=True))
    np.add.at(out, dofmap.cell_p2 + dofmap.n_p2, np.einsum("cq,cq,qi->ci", g.w, conv_z, g.n2, optimize=True))
    return out


def nonlinear_form_against(mesh: AxiMesh, dofmap: DofMap, V: FieldVP, xi: float, h_test) -> float:
    """Evaluate int ((V - xi e_z) . grad V) . h_test  2 pi r dr dz."""
    g = dofmap.geom
    vr, grad_vr = _field_at_q(dofmap, V.u_r)
    vz, grad_vz = _field_at_q(dofmap, V.u_z)
    hr, _ = _field_at_q(dofmap, h_test.u_r)
    hz, _ = _field_at_q(dofmap, h_test.u_z)
    adv_z = vz - xi
    conv_r = vr * grad_vr[..., 0] + adv_z * grad_vr[..., 1]
    conv_z = vr * grad_vz[..., 0] + adv_z * grad_vz[..., 1]
    return float(np.sum(g.w * (conv_r * hr + conv_z * hz)))


def build_lift(mesh: AxiMesh, dofmap: DofMap) -> LiftField:
    """Extension field z-bar: e_z at Body dofs, 0 beyond two cell layers.

    The z-component is the discrete harmonic extension (meridian Laplacian
    with the axisymmetric measure) on the two-layer band, with value 1 on the
    body and 0 on the band's outer rim; the r-component is identically zero.
    """
    body = dofmap.boundary_nodes[BoundaryTag.BODY]
    in_cell = np.isin(dofmap.cell_p2, body).any(axis=1)
    ring1 = np.unique(dofmap.cell_p2[in_cell])
    layer2 = np.isin(dofmap.cell_p2, ring1).any(axis=1)
    band_cells = np.where(layer2)[0]
    band_nodes = np.unique(dofmap.cell_p2[band_cells])
    outside_nodes = np.unique(dofmap.cell_p2[~layer2])
    rim = np.intersect1d(band_nodes, outside_nodes)

    g = dofmap.geom
    w = g.w[band_cells]
    grads = g.g2[band_cells]
    loc = np.einsum("cq,cqik,cqjk->cij", w, grads, grads, optimize=True)
    cp = dofmap.cell_p2[band_cells]
    K = _scatter(loc, cp, cp, (dofmap.n_p2, dofmap.n_p2))

    zbar = np.zeros(dofmap.n_p2)
    zbar[body] = 1.0
    fixed = np.unique(np.concatenate([body, rim, outside_nodes]))
    free = np.setdiff1d(band_nodes, fixed)
    if len(free):
        rhs = -K[free][:, body] @ np.ones(len(body))
        zbar[free] = spla.spsolve(K[free][:, free].tocsc(), rhs)
    return LiftField(u_r=np.zeros(dofmap.n_p2), u_z=zbar)


# ---------------------------------------------------------------------------
# Dirichlet constraint handling


@dataclass(frozen=True)
class BcSet:
    """Constrained dofs for a regime; the only inhomogeneous data is the body
    velocity gamma applied to body u_z dofs."""

    regime: Regime
    constrained: np.ndarray
    free: np.ndarray
    body_uz: np.ndarray
    pinned_pressure: int | None

    def constrained_values(self, gamma: float) -> np.ndarray:
        vals = np.zeros(len(self.constrained))
        vals[np.isin(self.constrained, self.body_uz)] = gamma
        return vals

    def expand(self, x_free: np.ndarray, gamma: float, n_total: int) -> np.ndarray:
        x = np.zeros(n_total)
        x[self.free] = x_free
        x[self.body_uz] = gamma
        return x


def build_bcset(dofmap: DofMap, regime: Regime) -> BcSet:
    np2 = dofmap.n_p2
    body = dofmap.boundary_nodes[BoundaryTag.BODY]
    axis = dofmap.boundary_nodes[BoundaryTag.AXIS]
    lateral = dofmap.boundary_nodes[BoundaryTag.LATERAL]
    outflow = dofmap.nodes_of(BoundaryTag.OUTTOP, BoundaryTag.OUTBOT)
    constrained = [body, body + np2, axis, lateral, lateral + np2]
    pinned = None
    if regime is Regime.NONLINEAR:
        constrained += [outflow, outflow + np2]
        coords = dofmap.p2_coords[: dofmap.n_pressure] if dofmap.mode is ElementMode.EQUAL_ORDER_LPS else dofmap.mesh.vertices
        score = coords[:, 0] ** 2 + coords[:, 1] ** 2
        order = np.lexsort((coords[:, 1], coords[:, 0], score))
        pinned = 2 * np2 + int(order[-1])
        constrained.append(np.array([pinned], dtype=np.int64))
    constrained = np.unique(np.concatenate(constrained))
    free = np.setdiff1d(np.arange(dofmap.n_total, dtype=np.int64), constrained)
    return BcSet(
        regime=regime,
        constrained=constrained,
        free=free,
        body_uz=body + np2,
        pinned_pressure=pinned,
    )


@dataclass
class ConstrainedSystem:
    """Reduction of a saddle matrix to free dofs with affine Dirichlet data.

    For constrained values x_c = gamma * e_body the reduced right-hand side is
    b[free] - gamma * lift_cols, with lift_cols = (K[:, body_uz] @ 1)[free].
    General inhomogeneous data goes through reduce_rhs_values.
    """

    K_full: sp.csr_matrix
    K_free: sp.csr_matrix
    bcs: BcSet
    lift_cols: np.ndarray
    n_total: int

    def reduce_rhs(self, b: np.ndarray, gamma: float) -> np.ndarray:
        return b[self.bcs.free] - gamma * self.lift_cols

    def reduce_rhs_values(self, b: np.ndarray, x_constrained: np.ndarray) -> np.ndarray:
        """x_constrained: full-length vector, nonzero only at constrained dofs."""
        return b[self.bcs.free] - (self.K_full @ x_constrained)[self.bcs.free]

    def expand(self, x_free: np.ndarray, gamma: float) -> np.ndarray:
        return self.bcs.expand(x_free, gamma, self.n_total)

    def expand_values(self, x_free: np.ndarray, x_constrained: np.ndarray) -> np.ndarray:
        x = x_constrained.copy()
        x[self.bcs.free] = x_free
        return x


def apply_dirichlet(K: sp.spmatrix, bcs: BcSet) -> ConstrainedSystem:
    """Eliminate constrained dofs from the assembled saddle matrix."""
    K = K.tocsr()
    free = bcs.free
    lift = np.asarray(K[:, bcs.body_uz].sum(axis=1)).ravel()[free]
    return ConstrainedSystem(K_full=K, K_free=K[free][:, free].tocsr(), bcs=bcs, lift_cols=lift, n_total=K.shape[0])


def saddle_matrix(ops: OperatorSet, velocity_block: sp.spmatrix) -> sp.csr_matrix:
    """Compose [[V, -B^T], [B, S]] for a given velocity-velocity block."""
    return sp.bmat([[velocity_block, -ops.B.T], [ops.B, ops.S]], format="csr")
