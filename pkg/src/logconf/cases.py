"""Benchmark case definitions and post-processing functionals."""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernel
from .fem import (BoundaryConditionSet, Discretization, FieldState, Inlet, Outlet, SolverParams,
                  Symmetry, Wall, nodal_conformation, p2_dlam, p2_values)
from .geometry import gen_channel, gen_cross_slot, gen_cylinder_half, gen_trislot, trislot_rays
from .kernel import ModelClosure, ModelKind
from .mesh import CYLINDER, SYMMETRY, WALL, Mesh, inlet, outlet
from .solver import RampSpec

EPS_INLET = 1e-12


# ---------------------------------------------------------------------------
# inlet profiles


def inlet_oldroydb(y, We: float, half_width: float = 2.0):
    """Developed Oldroyd-B channel flow with unit mean velocity.

    Returns ``(v, A)`` with v of shape (..., 2) and A = (A11, A12, A22) of shape (..., 3).
    """
    y = np.asarray(y, dtype=float)
    dv = -3.0 * y / half_width**2  # d(v_x)/dy
    v = np.stack([1.5 * (1.0 - (y / half_width) ** 2), np.zeros_like(y)], axis=-1)
    A = np.stack([1.0 + 2.0 * (We * dv) ** 2, We * dv, np.ones_like(y)], axis=-1)
    return v, A


def inlet_fenecr(y, We: float, a_max_sq: float, n_dot_x: float = -1.0, half_width: float = 2.0):
    """Developed FENE-CR channel flow in the channel-aligned frame.

    ``n_dot_x`` is the x-component of the outward inlet normal; the velocity
    is v = -(3/2)(1 - (y/hw)^2) n with n = (n_dot_x, 0).
    """
    if not a_max_sq > 2:
        raise ValueError("invalid extensibility: a_max_sq must exceed 2")
    y = np.asarray(y, dtype=float)
    a2 = float(a_max_sq)
    chi = 3.0 * We * y / half_width**2 * n_dot_x
    chi2 = chi * chi
    small = chi2 < EPS_INLET
    # rationalized root: a2 - sqrt(a2^2 + X) = -X / (a2 + sqrt(a2^2 + X))
    root = np.sqrt(a2 * a2 + 8.0 * chi2 * (a2 - 2.0))
    A11 = np.where(small, 1.0, a2 - 1.0 - 2.0 * a2 * (a2 - 2.0) / (a2 + root))
    A12 = chi * (1.0 - (A11 + 1.0) / a2)
    v = np.stack([-1.5 * (1.0 - (y / half_width) ** 2) * n_dot_x, np.zeros_like(y)], axis=-1)
    return v, np.stack([A11, A12, np.ones_like(y)], axis=-1)


@dataclass(frozen=True)
class InletProfile:
    """Parabolic inlet on a straight segment centred at ``center`` flowing along ``direction``.

    ``conformation`` is "oldroyd-b" (developed Oldroyd-B profile), "fene-cr"
    (developed FENE-CR profile) or "eps" (s = eps I).
    """

    center: tuple
    direction: tuple
    half_width: float
    conformation: str = "eps"
    a_max_sq: float = 100.0

    def _local(self, x):
        d = np.asarray(self.direction, dtype=float)
        d = d / np.linalg.norm(d)
        t = np.array([-d[1], d[0]])
        eta = (np.asarray(x) - np.asarray(self.center)) @ t
        return d, t, np.clip(eta, -self.half_width, self.half_width)

    def velocity(self, x):
        d, _, eta = self._local(x)
        return (1.5 * (1.0 - (eta / self.half_width) ** 2))[:, None] * d[None, :]

    def conformation_tensor(self, x, We: float):
        d, t, eta = self._local(x)
        if self.conformation == "eps":
            return None
        if self.conformation == "oldroyd-b":
            _, Al = inlet_oldroydb(eta, We, self.half_width)
        elif self.conformation == "fene-cr":
            _, Al = inlet_fenecr(eta, We, self.a_max_sq, -1.0, self.half_width)
        else:
            raise ValueError(f"unknown inlet conformation {self.conformation!r}")
        R = np.stack([d, t], axis=1)  # columns: local axes in lab frame
        M = np.stack([np.stack([Al[:, 0], Al[:, 1]], -1), np.stack([Al[:, 1], Al[:, 2]], -1)], -2)
        lab = R[None] @ M @ R.T[None]
        return np.stack([lab[:, 0, 0], lab[:, 0, 1], lab[:, 1, 1]], axis=-1)

    def log_conformation(self, x, We: float):
        A = self.conformation_tensor(x, We)
        if A is None:
            out = np.zeros((len(x), 3))
            out[:, 0] = EPS_INLET
            out[:, 2] = EPS_INLET
            return out
        return kernel.log_from_conformation(kernel.SymTensor2.unstack(A)).stack()

    def bc(self) -> Inlet:
        return Inlet(self.velocity, self.log_conformation)


# ---------------------------------------------------------------------------
# body forces


class ForceKind(str, enum.Enum):
    NONE = "none"
    ROTATING = "rotating"  # clockwise, as printed
    ROTATING_CCW = "rotating-ccw"
    UPWARD = "upward"


FORCE_RADIUS = 0.5 / math.sin(math.pi / 6)


def body_force(kind, x, y, t: float, ramp: RampSpec | None):
    """Artificial seeding force, multiplied by (1 - st(t)) and cut off outside radius 1."""
    kind = ForceKind(kind)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    env = 1.0 if ramp is None else 1.0 - ramp.st(t)
    inside = (x * x + y * y <= FORCE_RADIUS**2).astype(float) * env
    if kind == ForceKind.NONE or env == 0.0:
        fx = np.zeros_like(x)
        fy = np.zeros_like(x)
    elif kind == ForceKind.ROTATING:
        fx, fy = 0.5 * y * inside, -0.5 * x * inside
    elif kind == ForceKind.ROTATING_CCW:
        fx, fy = -0.5 * y * inside, 0.5 * x * inside
    else:
        fx, fy = np.zeros_like(x), (0.25 - x * x) * inside
    return np.stack([fx, fy], axis=-1)


def force_field(kind, ramp: RampSpec | None, amplitude: float = 1.0):
    """Adapter to the assembly's ``force(xq, t)`` signature."""
    if ForceKind(kind) == ForceKind.NONE:
        return None

    def f(xq, t):
        return amplitude * body_force(kind, xq[..., 0], xq[..., 1], t, ramp)
    return f


# ---------------------------------------------------------------------------
# cases


@dataclass
class Case:
    name: str
    mesh: Mesh
    bcs: BoundaryConditionSet
    params: SolverParams
    inlets: dict = field(default_factory=dict)
    region: str | None = None

    def discretize(self) -> Discretization:
        return Discretization(self.mesh, self.bcs)


def cylinder_case(h: float, beta: float = 0.59, L_up: float = 10.0, L_down: float = 10.0,
                  model: ModelClosure | None = None, Re: float = 0.0) -> Case:
    mesh = gen_cylinder_half(h, L_up, L_down)
    prof = InletProfile((-L_up, 0.0), (1.0, 0.0), 2.0, "oldroyd-b")
    bcs = BoundaryConditionSet({inlet(1): prof.bc(), outlet(1): Outlet(), WALL: Wall(),
                                SYMMETRY: Symmetry(), CYLINDER: Wall()})
    params = SolverParams(Re=Re, beta=beta, model=model or ModelClosure(ModelKind.OLDROYD_B))
    return Case("cylinder", mesh, bcs, params, {inlet(1): prof})


def channel_case(h: float, length: float = 10.0, half_width: float = 2.0, beta: float = 0.59,
                 model: ModelClosure | None = None, symmetric: bool = False) -> Case:
    mesh = gen_channel(h, length, half_width, symmetric)
    kind = "oldroyd-b"
    if model is not None and model.kind == ModelKind.FENE_CR:
        kind = "fene-cr"
    prof = InletProfile((0.0, 0.0), (1.0, 0.0), half_width, kind,
                        a_max_sq=model.a_max_sq if model is not None else 100.0)
    bcs = BoundaryConditionSet({inlet(1): prof.bc(), outlet(1): Outlet(), WALL: Wall()})
    if symmetric:
        bcs[SYMMETRY] = Symmetry()
    params = SolverParams(beta=beta, model=model or ModelClosure(ModelKind.OLDROYD_B))
    return Case("channel", mesh, bcs, params, {inlet(1): prof})


def crossslot_case(h: float, L_arm: float = 10.0, beta: float = 0.2, a_max_sq: float = 100.0) -> Case:
    mesh = gen_cross_slot(h, L_arm)
    end = L_arm + 0.5
    p1 = InletProfile((-end, 0.0), (1.0, 0.0), 0.5, "eps")
    p2 = InletProfile((end, 0.0), (-1.0, 0.0), 0.5, "eps")
    bcs = BoundaryConditionSet({inlet(1): p1.bc(), inlet(2): p2.bc(), outlet(1): Outlet(),
                                outlet(2): Outlet(), WALL: Wall()})
    params = SolverParams(beta=beta, model=ModelClosure(ModelKind.FENE_CR, a_max_sq=a_max_sq))
    return Case("crossslot", mesh, bcs, params, {inlet(1): p1, inlet(2): p2}, region="square")


def trislot_case(h: float, theta: float = math.pi / 3, L_in: float = 6.0, L_out: float = 8.0,
                 beta: float = 0.1, a_max_sq: float = 100.0) -> Case:
    mesh = gen_trislot(h, theta, L_in, L_out)
    bcs = BoundaryConditionSet({WALL: Wall()})
    inlets = {}
    for phi, kind, port in trislot_rays(theta):
        if kind == "outlet":
            bcs[outlet(port)] = Outlet()
            continue
        e = mesh.edges_with(lambda t, port=port: t == inlet(port))
        c = mesh.nodes[np.unique(e)].mean(axis=0)
        u = (math.cos(phi), math.sin(phi))
        prof = InletProfile(tuple(c), (-u[0], -u[1]), 0.5, "eps")
        bcs[inlet(port)] = prof.bc()
        inlets[inlet(port)] = prof
    params = SolverParams(beta=beta, model=ModelClosure(ModelKind.FENE_CR, a_max_sq=a_max_sq))
    return Case("trislot", mesh, bcs, params, inlets, region="disk")


def file_case(mesh: Mesh, params: SolverParams) -> Case:
    """Case on a user mesh: parabolic inlets fitted to each straight inlet edge set."""
    bcs = BoundaryConditionSet()
    inlets = {}
    for tag in mesh.tags():
        if tag.kind == "inlet":
            e = mesh.edges_with(lambda t, tag=tag: t == tag)
            pts = mesh.nodes[np.unique(e)]
            n = mesh.edge_outward_normals(e).mean(axis=0)
            n /= np.linalg.norm(n)
            tang = np.array([-n[1], n[0]])
            proj = pts @ tang
            c = pts.mean(axis=0) + tang * (0.5 * (proj.max() + proj.min()) - proj.mean())
            prof = InletProfile(tuple(c), (-n[0], -n[1]), 0.5 * (proj.max() - proj.min()), "eps")
            bcs[tag] = prof.bc()
            inlets[tag] = prof
        elif tag.kind == "outlet":
            bcs[tag] = Outlet()
        elif tag.kind == "symmetry":
            bcs[tag] = Symmetry()
        else:
            bcs[tag] = Wall()
    return Case("file", mesh, bcs, params, inlets)


# ---------------------------------------------------------------------------
# functionals


def _boundary_points(disc: Discretization, tag_pred):
    """Gauss points on boundary edges: element, barycentric coords, weights, normals."""
    mesh = disc.mesh
    e = mesh.edges_with(tag_pred)
    if len(e) == 0:
        return None
    nrm = mesh.edge_outward_normals(e)
    idx = mesh.edge_index(e)
    owner = np.full(len(mesh.edges), -1)
    owner[mesh.tri_edges.ravel()] = np.repeat(np.arange(mesh.n_triangles), 3)
    el = owner[idx]
    tri = mesh.triangles[el]
    g = np.array([0.5 - math.sqrt(15) / 10, 0.5, 0.5 + math.sqrt(15) / 10])
    w = np.array([5.0, 8.0, 5.0]) / 18.0
    L = np.linalg.norm(mesh.nodes[e[:, 1]] - mesh.nodes[e[:, 0]], axis=1)
    els, bary, wts, nrms, pts = [], [], [], [], []
    for gk, wk in zip(g, w):
        b = np.zeros((len(e), 3))
        for loc in range(3):
            b[:, loc] = np.where(tri[:, loc] == e[:, 0], 1 - gk, 0.0) + np.where(tri[:, loc] == e[:, 1], gk, 0.0)
        els.append(el)
        bary.append(b)
        wts.append(wk * L)
        nrms.append(nrm)
        pts.append((1 - gk) * mesh.nodes[e[:, 0]] + gk * mesh.nodes[e[:, 1]])
    return (np.concatenate(els), np.concatenate(bary), np.concatenate(wts),
            np.concatenate(nrms), np.concatenate(pts))


def _nodal_tau(disc: Discretization, state: FieldState, beta: float) -> np.ndarray:
    A = kernel.conformation_from_log(kernel.SymTensor2.unstack(state.s.T)).stack()
    return (1.0 - beta) / state.We * (A - np.array([1.0, 0.0, 1.0]))


def _sym(t3):
    return np.stack([np.stack([t3[..., 0], t3[..., 1]], -1), np.stack([t3[..., 1], t3[..., 2]], -1)], -2)


def drag(disc: Discretization, state: FieldState, beta: float) -> float:
    """-2 times the x-force of the total stress on the (half) cylinder boundary."""
    bp = _boundary_points(disc, lambda t: t == CYLINDER)
    if bp is None:
        raise ValueError("no cylinder boundary")
    el, bary, w, n, _ = bp
    v, gv, p, G, s = disc.evaluate(state.u, el, bary)
    tau_n = _nodal_tau(disc, state, beta)
    tau_e = np.einsum("na,nac->nc", bary, tau_n[disc.mesh.triangles[el]])
    tau = -p[:, None, None] * np.eye(2) + beta * (gv + np.swapaxes(gv, 1, 2)) + _sym(tau_e)
    tn = np.einsum("nij,nj->ni", tau, n)
    return float(-2.0 * np.sum(w * tn[:, 0]))


def drag_volume(disc: Discretization, state: FieldState, params: SolverParams) -> float:
    """Drag from the weak momentum residual tested with the x unit vector on the cylinder."""
    mesh = disc.mesh
    cyl = mesh.edges_with(lambda t: t == CYLINDER)
    if len(cyl) == 0:
        raise ValueError("no cylinder boundary")
    u = state.u
    R, _ = disc.assemble(u, np.zeros_like(u), state.t, state.We, params, jacobian=False)
    nodes = np.unique(np.concatenate([cyl.ravel(), mesh.n_nodes + mesh.edge_index(cyl)]))
    Rx = R[disc.layout.v_dof(0, nodes)]
    # add back the elastic stress, whose divergence the residual carries un-integrated
    beta = params.beta
    tau_n = _nodal_tau(disc, state, beta)
    tri = mesh.triangles
    gt = np.einsum("eac,eaj->ecj", tau_n[tri], disc.dlam)
    divx = gt[:, 0, 0] + gt[:, 1, 1]
    tq = np.einsum("qa,eac->eqc", disc.lam, tau_n[tri])
    w = np.zeros((disc.n_el, 6))
    dm = disc.V.dofmap
    w[np.isin(dm, nodes)] = 1.0
    phi_w = np.einsum("qa,ea->eq", disc.phi, w)
    dphi_w = np.einsum("eqaj,ea->eqj", disc.dphi, w)
    extra = np.einsum("eq,eq,e->", disc.wdet, phi_w, divx)
    extra += np.einsum("eq,eq,eq->", disc.wdet, tq[..., 0], dphi_w[..., 0])
    extra += np.einsum("eq,eq,eq->", disc.wdet, tq[..., 1], dphi_w[..., 1])
    return float(-2.0 * (Rx.sum() + extra))


def _quad_fields(disc: Discretization, state: FieldState):
    Vn, Pn, Gn, Sn = disc.element_fields(state.u)
    vq = np.einsum("qa,eia->eqi", disc.phi, Vn)
    gv = np.einsum("eia,eqaj->eqij", Vn, disc.dphi)
    pq = np.einsum("qa,ea->eq", disc.lam, Pn)
    return vq, gv, pq


def dissipation(disc: Discretization, state: FieldState, beta: float) -> float:
    """Integral of total stress : (grad v + grad v^T)."""
    vq, gv, pq = _quad_fields(disc, state)
    D = gv + np.swapaxes(gv, -1, -2)
    tau_n = _nodal_tau(disc, state, beta)
    te = np.einsum("qa,eac->eqc", disc.lam, tau_n[disc.mesh.triangles])
    tau = -pq[..., None, None] * np.eye(2) + beta * D + _sym(te)
    return float(np.einsum("eq,eqij,eqij->", disc.wdet, tau, D))


def region_mask(disc: Discretization, region: str) -> np.ndarray:
    """Quadrature-point weights (0/1) for the centre square or the centre disk."""
    if region == "square":
        cen = disc.mesh.nodes[disc.mesh.triangles].mean(axis=1)
        inside = np.abs(cen).max(axis=1) < 0.5
        return np.repeat(inside[:, None], disc.xq.shape[1], axis=1).astype(float)
    if region == "disk":
        return (np.hypot(disc.xq[..., 0], disc.xq[..., 1]) < 0.5).astype(float)
    raise ValueError(f"unknown region {region!r}")


def vorticity_integral(disc: Discretization, state: FieldState, region: str) -> float:
    _, gv, _ = _quad_fields(disc, state)
    omega = gv[..., 1, 0] - gv[..., 0, 1]
    return float(np.sum(disc.wdet * region_mask(disc, region) * omega))


def vorticity_asymmetry(disc: Discretization, state: FieldState, region: str) -> float:
    """Squared regional vorticity integral."""
    return vorticity_integral(disc, state, region) ** 2


def max_trace(disc: Discretization, state: FieldState, region: str | None = None) -> float:
    """Largest nodal Tr(A); ``region="wake"`` keeps x >= 1, y <= 0.5 (behind the cylinder)."""
    A = nodal_conformation(disc, state)
    tr = A[:, 0] + A[:, 2]
    if region == "wake":
        x, y = disc.mesh.nodes.T
        tr = tr[(x >= 1.0) & (y <= 0.5)]
    elif region is not None:
        raise ValueError(f"unknown region {region!r}")
    return float(tr.max())


def mirror_map(disc: Discretization, axis: int = 0):
    """Dof map of the reflection x_axis -> -x_axis; needs a mirror-symmetric mesh.

    Returns ``f(u) -> u_mirrored``.
    """
    from scipy.spatial import cKDTree

    L = disc.layout
    flip = np.array([1.0, 1.0])
    flip[axis] = -1.0

    def partner(pts):
        tree = cKDTree(pts)
        dist, idx = tree.query(pts * flip)
        if dist.max() > 1e-9 * (1.0 + np.abs(pts).max()):
            raise ValueError("mesh is not mirror-symmetric")
        return idx

    q2 = partner(disc.p2_points())
    q1 = partner(disc.mesh.nodes)
    n1 = np.arange(L.n_v)
    src = np.empty(L.size, dtype=np.int64)
    sign = np.ones(L.size)
    for c in range(2):
        src[L.v_dof(c, np.arange(L.n_p2))] = L.v_dof(c, q2)
        sign[L.v_dof(c, np.arange(L.n_p2))] = flip[c]
    src[L.p_dof(n1)] = L.p_dof(q1)
    for c, (i, j) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        src[L.G_dof(c, n1)] = L.G_dof(c, q1)
        sign[L.G_dof(c, n1)] = flip[i] * flip[j]
    for c, (i, j) in enumerate(((0, 0), (0, 1), (1, 1))):
        src[L.s_dof(c, n1)] = L.s_dof(c, q1)
        sign[L.s_dof(c, n1)] = flip[i] * flip[j]

    def apply(u):
        return sign * np.asarray(u)[src]
    apply.src, apply.sign = src, sign
    return apply


def reduced_mirror(disc: Discretization, axis: int = 0) -> sp.csr_matrix:
    """The reflection of ``mirror_map`` acting on reduced (unconstrained) dofs."""
    m = mirror_map(disc, axis)
    con = disc.constraints
    keep = np.flatnonzero(con.red >= 0)
    rep = np.empty(con.n_red, dtype=np.int64)
    rep[con.red[keep]] = keep
    img = m.src[rep]
    if np.any(con.red[img] < 0):
        raise ValueError("boundary conditions are not mirror-symmetric")
    vals = m.sign[rep] * con.weight[img] / con.weight[rep]
    return sp.csr_matrix((vals, (np.arange(con.n_red), con.red[img])), shape=(con.n_red, con.n_red))


def symmetry_basis(disc: Discretization, chars: tuple[int, int]) -> sp.csr_matrix:
    """Orthonormal basis of reduced vectors with mirror characters ``chars``.

    ``chars = (cx, cy)``: +1 (symmetric) or -1 (antisymmetric) under the
    reflection of x, respectively y; 0 leaves that reflection unconstrained.
    A Jacobian at a state with the same symmetry leaves each subspace invariant.
    """
    n = disc.constraints.n_red
    I = sp.identity(n, format="csr")
    proj = I
    perms = [np.arange(n)]
    for axis, ch in enumerate(chars):
        if ch == 0:
            continue
        R = reduced_mirror(disc, axis)
        proj = proj @ (I + ch * R) * 0.5
        perms = perms + [R.indices[p] for p in perms]  # signed permutations: one entry per row
    first = np.min(np.vstack(perms), axis=0)
    Q = proj.tocsc()[:, np.flatnonzero(first == np.arange(n))]
    Q.eliminate_zeros()
    nrm = np.sqrt(np.asarray(Q.multiply(Q).sum(axis=0))).ravel()
    keep = nrm > 1e-12
    return (Q[:, np.flatnonzero(keep)] @ sp.diags(1.0 / nrm[keep])).tocsr()


def boundary_fluxes(disc: Discretization, state: FieldState) -> dict:
    """Outward volume flux through each tagged boundary."""
    out = {}
    for tag in disc.mesh.tags():
        bp = _boundary_points(disc, lambda t, tag=tag: t == tag)
        el, bary, w, n, _ = bp
        v = disc.evaluate(state.u, el, bary)[0]
        out[str(tag)] = float(np.sum(w * np.einsum("ni,ni->n", v, n)))
    return out


def flux_balance(disc: Discretization, state: FieldState) -> tuple[float, float]:
    """(|net outward flux|, total inflow)."""
    f = boundary_fluxes(disc, state)
    net = sum(f.values())
    inflow = -sum(v for v in f.values() if v < 0)
    return abs(net), inflow


def continuity_residual(disc: Discretization, state: FieldState) -> np.ndarray:
    """Integral of div(v) q for every P1 basis function q."""
    _, gv, _ = _quad_fields(disc, state)
    divv = gv[..., 0, 0] + gv[..., 1, 1]
    r = np.einsum("eq,eq,qa->ea", disc.wdet, divv, disc.lam)
    return np.bincount(disc.mesh.triangles.ravel(), r.ravel(), disc.mesh.n_nodes)


def _boundary_loop(mesh: Mesh) -> list[np.ndarray]:
    """Boundary edges as closed loops (node sequences), oriented with the domain on the left."""
    nxt = {}
    for i, j in mesh.boundary_edges:
        nxt[int(i)] = int(j)
    loops = []
    seen = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        cur = nxt[start]
        while cur != start:
            loop.append(cur)
            seen.add(cur)
            cur = nxt[cur]
        loops.append(np.array(loop))
    return loops


def stream_function(disc: Discretization, state: FieldState) -> np.ndarray:
    """P1 stream function: Laplace(psi) = -omega with boundary values from cumulative flux."""
    mesh = disc.mesh
    loops = _boundary_loop(mesh)
    # boundary edges from the generators keep the owning triangle's CCW orientation
    bvals = {}
    g = np.array([0.5 - math.sqrt(15) / 10, 0.5, 0.5 + math.sqrt(15) / 10])
    w = np.array([5.0, 8.0, 5.0]) / 18.0
    for loop in loops:
        a = loop
        b = np.roll(loop, -1)
        pa, pb = mesh.nodes[a], mesh.nodes[b]
        # outward normal for CCW traversal: (dy, -dx)
        d = pb - pa
        n_len = np.stack([d[:, 1], -d[:, 0]], axis=1)
        flux = np.zeros(len(a))
        for gk, wk in zip(g, w):
            x = (1 - gk) * pa + gk * pb
            el, bary = disc.locate(x)
            v = disc.evaluate(state.u, el, bary)[0]
            flux += wk * np.einsum("ni,ni->n", v, n_len)
        net = flux.sum()
        if abs(net) > 1e-8:
            raise ValueError(f"inconsistent fluxes: net boundary flux {net:.3e}")
        psi = np.concatenate([[0.0], np.cumsum(flux)[:-1]])
        for node, val in zip(a, psi):
            bvals[int(node)] = val
    # stiffness and load
    dl = disc.dlam
    K = np.einsum("e,eaj,ebj->eab", disc.area, dl, dl)
    _, gv, _ = _quad_fields(disc, state)
    omega = gv[..., 1, 0] - gv[..., 0, 1]
    F = np.einsum("eq,eq,qa->ea", disc.wdet, omega, disc.lam)
    tri = mesh.triangles
    n = mesh.n_nodes
    Kg = sp.csr_matrix((K.ravel(), (np.repeat(tri, 3, axis=1).ravel(), np.tile(tri, (1, 3)).ravel())),
                       shape=(n, n))
    Fg = np.bincount(tri.ravel(), F.ravel(), n)
    fixed = np.array(sorted(bvals))
    psi = np.zeros(n)
    psi[fixed] = [bvals[i] for i in fixed]
    free = np.setdiff1d(np.arange(n), fixed)
    rhs = Fg[free] - Kg[free][:, fixed] @ psi[fixed]
    psi[free] = spla.spsolve(Kg[free][:, free].tocsc(), rhs)
    return psi


def count_closed_streamline_regions(mesh: Mesh, psi: np.ndarray) -> int:
    """Number of interior strict local extrema of a P1 stream function."""
    e = mesh.edges
    n = mesh.n_nodes
    bnd = np.zeros(n, bool)
    bnd[mesh.boundary_edges.ravel()] = True
    hi = np.ones(n, bool)
    lo = np.ones(n, bool)
    for a, b in ((e[:, 0], e[:, 1]), (e[:, 1], e[:, 0])):
        np.logical_and.at(hi, a, psi[a] > psi[b])
        np.logical_and.at(lo, a, psi[a] < psi[b])
    return int(((hi | lo) & ~bnd).sum())


def vorticity_nodal(disc: Discretization, state: FieldState) -> np.ndarray:
    """Lumped L2 projection of the vorticity onto P1."""
    _, gv, _ = _quad_fields(disc, state)
    omega = gv[..., 1, 0] - gv[..., 0, 1]
    tri = disc.mesh.triangles
    num = np.bincount(tri.ravel(), np.einsum("eq,eq,qa->ea", disc.wdet, omega, disc.lam).ravel(),
                      disc.mesh.n_nodes)
    den = np.bincount(tri.ravel(), np.repeat(disc.area / 3.0, 3), disc.mesh.n_nodes)
    return num / den


def stagnation_points(disc: Discretization, state: FieldState, *, wall_clearance: float = 0.05,
                      tol: float = 1e-8, dedup: float = 1e-3, max_seeds: int = 40) -> list[np.ndarray]:
    """Interior zeros of the velocity located by Newton iteration on the interpolant."""
    mesh = disc.mesh
    vq, _, _ = _quad_fields(disc, state)
    speed = np.linalg.norm(vq, axis=-1)
    bnodes = np.unique(mesh.boundary_edges)
    touching = np.isin(mesh.triangles, bnodes).any(axis=1)
    # element-wise minimum, then keep elements that are local minima among their vertex neighbours
    emin = np.where(touching, np.inf, speed.min(axis=1))
    node_min = np.full(mesh.n_nodes, np.inf)
    np.minimum.at(node_min, mesh.triangles.ravel(), np.repeat(emin, 3))
    cand = np.flatnonzero(np.isfinite(emin) & (emin <= node_min[mesh.triangles].min(axis=1)))
    cand = cand[np.argsort(emin[cand])][:max_seeds]
    bpts = mesh.nodes[bnodes]
    from scipy.spatial import cKDTree
    btree = cKDTree(bpts)
    found: list[np.ndarray] = []
    for e in cand:
        x = disc.xq[e, int(np.argmin(speed[e]))].copy()
        ok = False
        for _ in range(30):
            el, bary = disc.locate(x[None])
            if el[0] < 0:
                break
            v, gv, *_ = disc.evaluate(state.u, el, bary)
            if np.linalg.norm(v[0]) < tol:
                ok = True
                break
            try:
                dx = np.linalg.solve(gv[0], -v[0])
            except np.linalg.LinAlgError:
                break
            x = x + dx
        if not ok:
            continue
        if btree.query(x)[0] < wall_clearance:
            continue
        if any(np.linalg.norm(x - f) < dedup for f in found):
            continue
        found.append(x)
    found.sort(key=lambda p: (round(p[1], 9), round(p[0], 9)))
    return found


def interstagnation_flux(disc: Discretization, state: FieldState, p1, p2, n_seg: int = 200) -> float:
    """Flux of v across the straight segment p1 -> p2 (normal rotated clockwise from the tangent)."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    d = p2 - p1
    L = np.linalg.norm(d)
    if L == 0:
        return 0.0
    n = np.array([d[1], -d[0]]) / L
    g = np.array([0.5 - math.sqrt(15) / 10, 0.5, 0.5 + math.sqrt(15) / 10])
    w = np.array([5.0, 8.0, 5.0]) / 18.0
    s = (np.arange(n_seg)[:, None] + g[None, :]) / n_seg
    pts = p1 + s.reshape(-1, 1) * d
    el, bary = disc.locate(pts)
    v = disc.evaluate(state.u, el, bary)[0]
    ww = np.tile(w, n_seg) * L / n_seg
    return float(np.sum(ww * (v @ n)))


def rotation_defect(disc: Discretization, state: FieldState, angle: float, radius: float = 0.7,
                    n: int = 24) -> float:
    """max |v(Rx) - R v(x)| / max |v| over a polar grid of points with |x| <= radius."""
    r = radius * (np.arange(1, n + 1) / n)
    a = 2 * math.pi * np.arange(4 * n) / (4 * n)
    pts = (r[:, None, None] * np.stack([np.cos(a), np.sin(a)], axis=-1)[None]).reshape(-1, 2)
    c, s_ = math.cos(angle), math.sin(angle)
    R = np.array([[c, -s_], [s_, c]])
    el, bary = disc.locate(pts)
    el2, bary2 = disc.locate(pts @ R.T)
    ok = (el >= 0) & (el2 >= 0)
    v = disc.evaluate(state.u, el[ok], bary[ok])[0]
    v2 = disc.evaluate(state.u, el2[ok], bary2[ok])[0]
    scale = np.linalg.norm(v, axis=1).max()
    return float(np.linalg.norm(v2 - v @ R.T, axis=1).max() / scale)


def branch_label(vorticity: float, threshold: float = 1e-3) -> str:
    """Tri-slot branch from the signed centre-disk vorticity integral."""
    if vorticity < -threshold:
        return "clockwise"
    if vorticity > threshold:
        return "counter-clockwise"
    return "straight"


# ---------------------------------------------------------------------------
# export


def _fmt(x: float) -> str:
    return repr(float(x))


def field_export(disc: Discretization, state: FieldState) -> tuple[str, str]:
    """VTK legacy ASCII (vertex mesh) and CSV point cloud of the main fields."""
    mesh = disc.mesh
    n = mesh.n_nodes
    A = kernel.conformation_from_log(kernel.SymTensor2.unstack(state.s.T)).stack()
    trA = A[:, 0] + A[:, 2]
    detA = A[:, 0] * A[:, 2] - A[:, 1] ** 2
    v = state.v[:, :n].T
    p = state.p
    try:
        psi = stream_function(disc, state)
    except ValueError:
        psi = np.full(n, np.nan)
    omega = vorticity_nodal(disc, state)
    scalars = {"trace_A": trA, "log10_trace_A": np.log10(trA), "det_A": detA, "p": p,
               "psi": psi, "omega": omega}
    out = io.StringIO()
    out.write("# vtk DataFile Version 3.0\nlogconf field export\nASCII\nDATASET UNSTRUCTURED_GRID\n")
    out.write(f"POINTS {n} double\n")
    for x, y in mesh.nodes:
        out.write(f"{_fmt(x)} {_fmt(y)} 0\n")
    m = mesh.n_triangles
    out.write(f"CELLS {m} {4 * m}\n")
    for a, b, c in mesh.triangles:
        out.write(f"3 {a} {b} {c}\n")
    out.write(f"CELL_TYPES {m}\n")
    out.write("5\n" * m)
    out.write(f"POINT_DATA {n}\n")
    for name, val in scalars.items():
        out.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        out.write("".join(f"{_fmt(x)}\n" for x in val))
    out.write("VECTORS velocity double\n")
    out.write("".join(f"{_fmt(a)} {_fmt(b)} 0\n" for a, b in v))
    csvout = io.StringIO()
    cols = ["x", "y", "vx", "vy", *scalars.keys()]
    csvout.write(",".join(cols) + "\n")
    data = np.column_stack([mesh.nodes, v, *scalars.values()])
    for row in data:
        csvout.write(",".join(_fmt(x) for x in row) + "\n")
    return out.getvalue(), csvout.getvalue()
