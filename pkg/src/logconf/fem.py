"""Mixed finite-element discretization.

Unknowns: P2 velocity, P1 pressure, P1 projected velocity gradient G (4
components, G[i, j] = dv_i/dx_j) and P1 log-conformation s (3 components).
The global vector is laid out field by field and component by component:

    [vx (nP2), vy (nP2), p (nV), G11, G12, G21, G22 (nV each), s11, s12, s22 (nV each)]

Everything is written as a residual F(u, u_dot, t) = 0, with u_dot used for s
(and for v when Re > 0), so the same assembly serves steady solves, Newton
iterations and implicit time stepping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import kernel
from .kernel import ModelClosure
from .mesh import BoundaryTag, Mesh


class AssemblyError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# quadrature and reference basis

_A1, _B1 = (9 - 2 * math.sqrt(15)) / 21, (6 + math.sqrt(15)) / 21
_A2, _B2 = (9 + 2 * math.sqrt(15)) / 21, (6 - math.sqrt(15)) / 21
_W1, _W2 = (155 + math.sqrt(15)) / 1200, (155 - math.sqrt(15)) / 1200

# barycentric points and weights (sum to 1) of the 7-point degree-5 rule
QUAD_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
QUAD_W = np.array([9 / 40, _W1, _W1, _W1, _W2, _W2, _W2])


def p2_values(lam: np.ndarray) -> np.ndarray:
    """P2 basis at barycentric points: vertices 0..2, then edges 01, 12, 20."""
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    return np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                     4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0], axis=-1)


def p2_dlam(lam: np.ndarray) -> np.ndarray:
    """d(phi_a)/d(lambda_k), shape (..., 6, 3)."""
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    z = np.zeros_like(l0)
    rows = [
        [4 * l0 - 1, z, z],
        [z, 4 * l1 - 1, z],
        [z, z, 4 * l2 - 1],
        [4 * l1, 4 * l0, z],
        [z, 4 * l2, 4 * l1],
        [4 * l2, z, 4 * l0],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


# ---------------------------------------------------------------------------
# spaces and layout


@dataclass(frozen=True)
class FunctionSpace:
    kind: str
    components: int
    dofmap: np.ndarray  # (n_elements, 3 or 6) scalar dof per local node
    n_scalar: int

    @property
    def size(self) -> int:
        return self.components * self.n_scalar


def p1_space(mesh: Mesh, components: int = 1) -> FunctionSpace:
    return FunctionSpace("P1", components, mesh.triangles, mesh.n_nodes)


def p2_space(mesh: Mesh, components: int = 1) -> FunctionSpace:
    te = mesh.tri_edges
    nv = mesh.n_nodes
    # local edge 01 is opposite vertex 2, 12 opposite 0, 20 opposite 1
    dm = np.concatenate([mesh.triangles, nv + te[:, [2, 0, 1]]], axis=1)
    return FunctionSpace("P2", components, dm, nv + len(mesh.edges))


@dataclass(frozen=True)
class SolverParams:
    Re: float = 0.0
    beta: float = 0.59
    model: ModelClosure = field(default_factory=lambda: ModelClosure(kernel.ModelKind.OLDROYD_B))
    supg_coeff: float = 2.0
    brinkman_alpha: float = 0.0
    quad_degree: int = 5

    def __post_init__(self):
        if not self.Re >= 0:
            raise ValueError("Re must be >= 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta out of range [0,1]")
        if not self.supg_coeff > 0:
            raise ValueError("supg_coeff must be > 0")
        if self.brinkman_alpha < 0:
            raise ValueError("brinkman_alpha must be >= 0")
        if self.quad_degree != 5:
            raise ValueError("only the 7-point degree-5 rule is available")


BodyForce = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class Layout:
    n_p2: int
    n_v: int

    @property
    def off_v(self) -> int:
        return 0

    @property
    def off_p(self) -> int:
        return 2 * self.n_p2

    @property
    def off_G(self) -> int:
        return 2 * self.n_p2 + self.n_v

    @property
    def off_s(self) -> int:
        return 2 * self.n_p2 + 5 * self.n_v

    @property
    def size(self) -> int:
        return 2 * self.n_p2 + 8 * self.n_v

    def v_dof(self, comp: int, node) -> np.ndarray:
        return comp * self.n_p2 + np.asarray(node)

    def p_dof(self, node) -> np.ndarray:
        return self.off_p + np.asarray(node)

    def G_dof(self, comp: int, node) -> np.ndarray:
        return self.off_G + comp * self.n_v + np.asarray(node)

    def s_dof(self, comp: int, node) -> np.ndarray:
        return self.off_s + comp * self.n_v + np.asarray(node)

    def differential_mask(self, Re: float) -> np.ndarray:
        m = np.zeros(self.size, dtype=bool)
        m[self.off_s:] = True
        if Re > 0:
            m[: 2 * self.n_p2] = True
        return m


@dataclass
class FieldState:
    """Full dof vector plus time and current Weissenberg number."""

    layout: Layout
    u: np.ndarray
    t: float = 0.0
    We: float = 1.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if self.u.shape != (self.layout.size,):
            raise ValueError(f"state vector has length {self.u.shape}, expected {self.layout.size}")

    @classmethod
    def zeros(cls, layout: Layout, t: float = 0.0, We: float = 1.0) -> "FieldState":
        return cls(layout, np.zeros(layout.size), t, We)

    def copy(self) -> "FieldState":
        return FieldState(self.layout, self.u.copy(), self.t, self.We)

    @property
    def v(self) -> np.ndarray:
        n = self.layout.n_p2
        return self.u[: 2 * n].reshape(2, n)

    @property
    def p(self) -> np.ndarray:
        lo = self.layout.off_p
        return self.u[lo: lo + self.layout.n_v]

    @property
    def G(self) -> np.ndarray:
        lo = self.layout.off_G
        return self.u[lo: lo + 4 * self.layout.n_v].reshape(4, -1)

    @property
    def s(self) -> np.ndarray:
        lo = self.layout.off_s
        return self.u[lo: lo + 3 * self.layout.n_v].reshape(3, -1)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.u).all())


# ---------------------------------------------------------------------------
# boundary conditions


@dataclass(frozen=True)
class Wall:
    pass


@dataclass(frozen=True)
class Symmetry:
    pass


@dataclass(frozen=True)
class Outlet:
    """Velocity normal to the boundary; zero normal traction (natural)."""


@dataclass(frozen=True)
class Inlet:
    """Dirichlet velocity and log-conformation.

    ``velocity(x)`` maps (n, 2) points to (n, 2) velocities and
    ``log_conformation(x, We)`` to (n, 3) values of s.
    """

    velocity: Callable[[np.ndarray], np.ndarray]
    log_conformation: Callable[[np.ndarray, float], np.ndarray]


BCSpec = Wall | Symmetry | Outlet | Inlet


class BoundaryConditionSet(dict):
    """Mapping BoundaryTag -> Wall | Symmetry | Outlet | Inlet."""

    def check(self, mesh: Mesh) -> None:
        missing = [str(t) for t in mesh.tags() if t not in self]
        if missing:
            raise ValueError(f"no boundary condition for tags: {', '.join(missing)}")
        for tag, spec in self.items():
            if not isinstance(spec, (Wall, Symmetry, Outlet, Inlet)):
                raise TypeError(f"bad boundary condition for {tag}: {spec!r}")


@dataclass
class Constraints:
    """Affine map u = P u_red + u_fixed.

    Every full dof maps to at most one reduced dof: ``red[i]`` (or -1 when the
    dof is fixed) with weight ``weight[i]``.
    """

    red: np.ndarray
    weight: np.ndarray
    n_red: int
    fixed: np.ndarray  # bool mask
    inlet_v: list  # (dofs_x, dofs_y, points, spec)
    inlet_s: list  # (dofs (3, n), points, spec)
    counts: dict

    def P(self) -> sp.csr_matrix:
        keep = self.red >= 0
        rows = np.flatnonzero(keep)
        return sp.csr_matrix((self.weight[keep], (rows, self.red[keep])),
                             shape=(len(self.red), self.n_red))

    def restrict(self, r_full: np.ndarray) -> np.ndarray:
        keep = self.red >= 0
        return np.bincount(self.red[keep], weights=self.weight[keep] * r_full[keep],
                           minlength=self.n_red)

    def prolong(self, d_red: np.ndarray) -> np.ndarray:
        out = np.zeros(len(self.red))
        keep = self.red >= 0
        out[keep] = self.weight[keep] * d_red[self.red[keep]]
        return out

    def apply_values(self, u: np.ndarray, We: float) -> None:
        """Write boundary values into the fixed dofs of ``u`` (in place)."""
        for dx, dy, pts, spec in self.inlet_v:
            vel = np.asarray(spec.velocity(pts), dtype=float).reshape(-1, 2)
            u[dx] = vel[:, 0]
            u[dy] = vel[:, 1]
        for dofs, pts, spec in self.inlet_s:
            s = np.asarray(spec.log_conformation(pts, We), dtype=float).reshape(-1, 3)
            for c in range(3):
                u[dofs[c]] = s[:, c]
        # fixed dofs without a value (walls, tangential constraints) stay at zero
        zero = self.fixed.copy()
        for dx, dy, _, _ in self.inlet_v:
            zero[dx] = False
            zero[dy] = False
        for dofs, _, _ in self.inlet_s:
            zero[dofs.ravel()] = False
        u[zero] = 0.0
        # rotated dofs: keep only the free direction
        rot = (self.red >= 0) & (self.weight != 1.0)
        if rot.any():
            idx = np.flatnonzero(rot)
            r = self.red[idx]
            w = self.weight[idx]
            # project (vx, vy) onto the free direction
            proj = np.bincount(r, weights=w * u[idx], minlength=self.n_red)
            u[idx] = w * proj[r]


# ---------------------------------------------------------------------------
# discretization


class Discretization:
    """Mesh, spaces, geometric factors and a fixed sparsity pattern."""

    def __init__(self, mesh: Mesh, bcs: BoundaryConditionSet):
        bcs.check(mesh)
        self.mesh = mesh
        self.bcs = bcs
        self.V = p2_space(mesh)
        self.Q1 = p1_space(mesh)
        self.layout = Layout(self.V.n_scalar, mesh.n_nodes)
        self.n_el = mesh.n_triangles

        p = mesh.nodes[mesh.triangles]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        self.area = 0.5 * det
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1] / det
        inv[:, 1, 1] = J[:, 0, 0] / det
        inv[:, 0, 1] = -J[:, 0, 1] / det
        inv[:, 1, 0] = -J[:, 1, 0] / det
        # grad lambda_1, lambda_2 are rows of J^{-1}; lambda_0 = 1 - l1 - l2
        g12 = inv  # (E, 2, 2): row k -> grad lambda_{k+1}
        self.dlam = np.concatenate([-(g12[:, 0] + g12[:, 1])[:, None, :], g12], axis=1)
        self.h = mesh.h_elem
        self.lam = QUAD_BARY  # (Q, 3)
        self.phi = p2_values(QUAD_BARY)  # (Q, 6)
        dl = p2_dlam(QUAD_BARY)  # (Q, 6, 3)
        self.dphi = np.einsum("qak,ekj->eqaj", dl, self.dlam)  # (E, Q, 6, 2)
        self.wdet = self.area[:, None] * QUAD_W[None, :]  # (E, Q)
        self.xq = np.einsum("qk,ekd->eqd", QUAD_BARY, p)  # (E, Q, 2)

        self.constraints = self._build_constraints()
        self._build_pattern()
        self._locator = None
        self._static_cache = {}

    # -- dof index arrays per element -----------------------------------
    def _local_dofs(self):
        L = self.layout
        v2 = self.V.dofmap
        t = self.mesh.triangles
        vdofs = np.stack([v2, L.n_p2 + v2], axis=1)  # (E, 2, 6)
        pdofs = L.off_p + t  # (E, 3)
        Gdofs = L.off_G + np.arange(4)[None, :, None] * L.n_v + t[:, None, :]  # (E, 4, 3)
        sdofs = L.off_s + np.arange(3)[None, :, None] * L.n_v + t[:, None, :]  # (E, 3, 3)
        return vdofs.reshape(self.n_el, -1), pdofs, Gdofs.reshape(self.n_el, -1), sdofs.reshape(self.n_el, -1)

    _BLOCKS = ("vv", "vp", "vG", "vs", "pv", "Gv", "GG", "sv", "sG", "ss")

    def _build_pattern(self):
        v, p, G, s = self._local_dofs()
        fields = {"v": v, "p": p, "G": G, "s": s}
        self._rdofs = fields
        rows, cols = [], []
        for name in self._BLOCKS:
            r = fields[name[0]]
            c = fields[name[1]]
            rows.append(np.repeat(r, c.shape[1], axis=1).ravel())
            cols.append(np.tile(c, (1, r.shape[1])).ravel())
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        con = self.constraints
        rr, rc = con.red[rows], con.red[cols]
        keep = (rr >= 0) & (rc >= 0)
        w = con.weight[rows] * con.weight[cols]
        keep &= w != 0
        self._coo_keep = np.flatnonzero(keep)
        self._coo_w = w[keep]
        n = con.n_red
        key = rr[keep].astype(np.int64) * n + rc[keep]
        uniq, pos = np.unique(key, return_inverse=True)
        self._coo_pos = pos
        indptr = np.searchsorted(uniq // n, np.arange(n + 1))
        self._csr_indices = (uniq % n).astype(np.int32)
        self._csr_indptr = indptr.astype(np.int32)
        self._nnz = len(uniq)
        # full (unreduced) pattern, used for diagnostics and tests
        self._full_rows = rows
        self._full_cols = cols

    # -- boundary conditions ------------------------------------------------
    def _build_constraints(self) -> Constraints:
        mesh = self.mesh
        L = self.layout
        N = L.size
        red = np.zeros(N, dtype=np.int64)
        weight = np.ones(N)
        fixed = np.zeros(N, dtype=bool)
        nv = mesh.n_nodes
        edge_idx_all = mesh.edge_index(mesh.boundary_edges)

        # per velocity node: kind of constraint
        full_tag: dict[int, BoundaryTag] = {}
        dirs: dict[int, list] = {}
        inlet_nodes: dict[BoundaryTag, set] = {}
        prio = {Wall: 3, Inlet: 2}
        for k, (e, tag) in enumerate(zip(mesh.boundary_edges, mesh.boundary_tags)):
            spec = self.bcs[tag]
            nodes = [int(e[0]), int(e[1]), nv + int(edge_idx_all[k])]
            if isinstance(spec, (Wall, Inlet)):
                for n in nodes:
                    cur = full_tag.get(n)
                    if cur is None or prio[type(spec)] > prio[type(self.bcs[cur])]:
                        full_tag[n] = tag
                if isinstance(spec, Inlet):
                    inlet_nodes.setdefault(tag, set()).update(int(x) for x in e)
            else:
                nrm = mesh.edge_outward_normals(e[None, :])[0]
                if isinstance(spec, Symmetry):
                    d = np.array([-nrm[1], nrm[0]])
                else:
                    d = nrm
                for n in nodes:
                    dirs.setdefault(n, []).append(d)

        counts = {"velocity_fixed": 0, "velocity_rotated": 0, "s_fixed": 0}
        inlet_v: dict[BoundaryTag, list] = {}
        for n, tag in full_tag.items():
            fixed[L.v_dof(0, n)] = True
            fixed[L.v_dof(1, n)] = True
            counts["velocity_fixed"] += 2
            if isinstance(self.bcs[tag], Inlet):
                inlet_v.setdefault(tag, []).append(n)
        for n, ds in dirs.items():
            if n in full_tag:
                continue
            d = ds[0]
            ok = all(abs(d[0] * x[1] - d[1] * x[0]) < 1e-9 for x in ds[1:])
            if not ok:
                fixed[L.v_dof(0, n)] = True
                fixed[L.v_dof(1, n)] = True
                counts["velocity_fixed"] += 2
                continue
            d = d / np.linalg.norm(d)
            ix, iy = L.v_dof(0, n), L.v_dof(1, n)
            if abs(d[1]) < 1e-14:
                fixed[iy] = True
                counts["velocity_fixed"] += 1
            elif abs(d[0]) < 1e-14:
                fixed[ix] = True
                counts["velocity_fixed"] += 1
            else:
                # vx carries the free amplitude; vy follows it
                weight[ix], weight[iy] = d[0], d[1]
                red[iy] = -2  # marker: shares ix's reduced index
                counts["velocity_rotated"] += 1

        inlet_s = []
        s_nodes_all = set()
        for tag, nodes in sorted(inlet_nodes.items()):
            nodes = np.array(sorted(nodes))
            s_nodes_all.update(nodes.tolist())
            dofs = np.stack([L.s_dof(c, nodes) for c in range(3)])
            fixed[dofs.ravel()] = True
            inlet_s.append((dofs, mesh.nodes[nodes], self.bcs[tag]))
        counts["s_fixed"] = 3 * len(s_nodes_all)

        # velocity Dirichlet values per inlet, at P2 node positions
        p2_pts = self.p2_points()
        inlet_vl = []
        for tag, nodes in sorted(inlet_v.items()):
            nodes = np.array(sorted(nodes))
            inlet_vl.append((L.v_dof(0, nodes), L.v_dof(1, nodes), p2_pts[nodes], self.bcs[tag]))

        free = ~fixed & (red != -2)
        red_idx = np.full(N, -1, dtype=np.int64)
        red_idx[free] = np.arange(free.sum())
        shared = np.flatnonzero(red == -2)
        red_idx[shared] = red_idx[shared - L.n_p2]
        w = np.where(fixed, 0.0, weight)
        counts["total_fixed"] = int(fixed.sum()) + len(shared)
        return Constraints(red_idx, w, int(free.sum()), fixed, inlet_vl, inlet_s, counts)

    def p2_points(self) -> np.ndarray:
        m = self.mesh
        mid = 0.5 * (m.nodes[m.edges[:, 0]] + m.nodes[m.edges[:, 1]])
        return np.concatenate([m.nodes, mid])

    # -- state helpers ------------------------------------------------------
    def new_state(self, We: float = 1.0, t: float = 0.0) -> FieldState:
        st = FieldState.zeros(self.layout, t=t, We=We)
        self.constraints.apply_values(st.u, We)
        return st

    def element_fields(self, u: np.ndarray):
        L = self.layout
        v, p, G, s = self._rdofs["v"], self._rdofs["p"], self._rdofs["G"], self._rdofs["s"]
        E = self.n_el
        return (u[v].reshape(E, 2, 6), u[p], u[G].reshape(E, 4, 3), u[s].reshape(E, 3, 3))

    # -- assembly --------------------------------------------------------
    def assemble(self, u: np.ndarray, udot: np.ndarray, t: float, We: float,
                 params: SolverParams, *, sigma: float = 0.0, jacobian: bool = True,
                 force: BodyForce | None = None, freeze_s: bool = False):
        """Full residual and (optionally) the reduced Jacobian dF/du + sigma dF/du_dot.

        With ``freeze_s`` the constitutive rows become s - u_fixed (used for the
        Newtonian stage), i.e. s is held at its current boundary-lifted value 0.
        """
        if not We > 0:
            raise ValueError("We must be positive")
        beta = params.beta
        Re = params.Re
        alpha = params.brinkman_alpha
        E = self.n_el
        Vn, Pn, Gn, Sn = self.element_fields(u)
        Vd, _, _, Sd = self.element_fields(udot)
        phi, lam, dphi, dlam, wd = self.phi, self.lam, self.dphi, self.dlam, self.wdet

        vq = np.einsum("qa,eia->eqi", phi, Vn)
        gv = np.einsum("eia,eqaj->eqij", Vn, dphi)  # dv_i/dx_j
        pq = np.einsum("qa,ea->eq", lam, Pn)
        Gq = np.einsum("qa,eca->eqc", lam, Gn)
        Gm = Gq.reshape(E, -1, 2, 2)
        sq = np.einsum("qa,eca->eqc", lam, Sn)
        gs = np.einsum("eca,eaj->ecj", Sn, dlam)  # (E, 3, 2)

        # elastic stress from nodal values, differentiated through its P1 interpolant
        kel = (1.0 - beta) / We
        s_nodes = u[self.layout.off_s:].reshape(3, -1).T
        try:
            if jacobian:
                A_n, dA_n = kernel.conformation_jacobian(s_nodes)
            else:
                A_n = kernel.conformation_from_log(kernel.SymTensor2.unstack(s_nodes)).stack()
        except kernel.ConformationOverflow:
            bad = np.flatnonzero(np.abs(s_nodes).max(axis=1) > kernel.EXP_LIMIT / 2)
            el = np.flatnonzero(np.isin(self.mesh.triangles, bad).any(axis=1))
            raise AssemblyError(f"conformation overflow in element {int(el[0]) if len(el) else -1}") from None
        tau_n = kel * (A_n - np.array([1.0, 0.0, 1.0]))
        tri = self.mesh.triangles
        gt = np.einsum("eac,eaj->ecj", tau_n[tri], dlam)  # (E, 3, 2)
        divtau = np.stack([gt[:, 0, 0] + gt[:, 1, 1], gt[:, 1, 0] + gt[:, 2, 1]], axis=1)

        # momentum
        T = (gv + np.swapaxes(gv, -1, -2)) - (1.0 - beta) * (Gm + np.swapaxes(Gm, -1, -2))
        T = T - pq[..., None, None] * np.eye(2)
        f = -divtau[:, None, :] + alpha * vq
        if Re > 0:
            vdq = np.einsum("qa,eia->eqi", phi, Vd)
            f = f + Re * (vdq + np.einsum("eqij,eqj->eqi", gv, vq))
        if force is not None:
            f = f - np.asarray(force(self.xq, t), dtype=float).reshape(E, -1, 2)
        Rv = np.einsum("eq,eqij,eqaj->eia", wd, T, dphi) + np.einsum("eq,eqi,qa->eia", wd, f, phi)
        divv = gv[..., 0, 0] + gv[..., 1, 1]
        Rp = np.einsum("eq,eq,qa->ea", wd, divv, lam)
        RG = np.einsum("eq,eqc,qa->eca", wd, Gq - gv.reshape(E, -1, 4), lam)

        if freeze_s:
            Rs = None
        else:
            try:
                if jacobian:
                    Pi, dPs, dPG = kernel.reaction_jacobian(sq, Gq, params.model, We)
                else:
                    Pi = kernel.reaction_array(sq, Gq, params.model, We)
            except kernel.ConformationOverflow:
                lam_max = np.abs(sq).max(axis=2).max(axis=1)
                raise AssemblyError(f"conformation overflow in element {int(np.argmax(lam_max))}") from None
            except kernel.FeneBoundExceeded as exc:
                raise AssemblyError(f"FENE extensibility bound exceeded: {exc}") from None
            sdq = np.einsum("qa,eca->eqc", lam, Sd)
            r = sdq + np.einsum("eqj,ecj->eqc", vq, gs) - Pi
            W = lam[None, :, :] + params.supg_coeff * self.h[:, None, None] * np.einsum("eqj,eaj->eqa", vq, dlam)
            Rs = np.einsum("eq,eqc,eqa->eca", wd, r, W)

        N = self.layout.size
        R = np.bincount(self._rdofs["v"].ravel(), Rv.ravel(), N)
        R += np.bincount(self._rdofs["p"].ravel(), Rp.ravel(), N)
        R += np.bincount(self._rdofs["G"].ravel(), RG.ravel(), N)
        if Rs is not None:
            R += np.bincount(self._rdofs["s"].ravel(), Rs.ravel(), N)
        else:
            lo = self.layout.off_s
            R[lo:] = u[lo:]
        if not np.isfinite(R).all():
            bad = int(np.flatnonzero(~np.isfinite(R))[0])
            raise AssemblyError(f"non-finite residual entry at dof {bad}")
        if not jacobian:
            return R, None

        blocks = dict(self._static_blocks(beta, alpha))
        eye2 = np.eye(2)
        if Re > 0:
            mass = np.einsum("eq,qa,qb->eab", wd, phi, phi)
            adv = np.einsum("eq,qa,eqj,eqbj->eab", wd, phi, vq, dphi, optimize=True)
            vv = blocks["vv"] + np.einsum("ik,eab->eiakb", eye2, Re * sigma * mass + Re * adv)
            vv = vv + Re * np.einsum("eq,qa,qb,eqik->eiakb", wd, phi, phi, gv, optimize=True)
            blocks["vv"] = vv
        # vs: (E, i, a, c, b)
        intphi = blocks.pop("intphi")
        dAe = dA_n[tri]  # (E, b, comp, c)
        ddx = kel * np.stack([
            dAe[:, :, 0, :] * dlam[:, :, 0, None] + dAe[:, :, 1, :] * dlam[:, :, 1, None],
            dAe[:, :, 1, :] * dlam[:, :, 0, None] + dAe[:, :, 2, :] * dlam[:, :, 1, None],
        ], axis=1)  # (E, i, b, c)
        blocks["vs"] = -np.einsum("ea,eibc->eiacb", intphi, ddx)
        if freeze_s:
            blocks["sv"] = np.zeros((E, 3, 3, 2, 6))
            blocks["sG"] = np.zeros((E, 3, 3, 4, 3))
            blocks["ss"] = np.zeros((E, 3, 3, 3, 3))
        else:
            wW = wd[..., None] * W  # (E, Q, a)
            sv = np.einsum("eqa,qb,eck->ecakb", wW, phi, gs, optimize=True)
            sv = sv + params.supg_coeff * np.einsum(
                "e,eq,eqc,eak,qb->ecakb", self.h, wd, r, dlam, phi, optimize=True)
            blocks["sv"] = sv
            blocks["sG"] = -np.einsum("eqa,eqcg,qb->ecagb", wW, dPG, lam, optimize=True)
            adv_s = np.einsum("eqa,eqj,ebj->eab", wW, vq, dlam)
            mass_s = np.einsum("eqa,qb->eab", wW, lam)
            ss = np.einsum("cd,eab->ecadb", np.eye(3), sigma * mass_s + adv_s)
            ss = ss - np.einsum("eqa,eqcd,qb->ecadb", wW, dPs, lam, optimize=True)
            blocks["ss"] = ss
        vals = np.concatenate([blocks[n].reshape(E, -1).ravel() for n in self._BLOCKS])
        Jr = self._reduced_matrix(vals)
        if freeze_s:
            con = self.constraints
            lo = self.layout.off_s
            idx = con.red[lo:]
            idx = idx[idx >= 0]
            Jr = Jr + sp.csr_matrix((np.ones(len(idx)), (idx, idx)), shape=Jr.shape)
        return R, Jr

    def _static_blocks(self, beta: float, alpha: float) -> dict:
        """Jacobian blocks that do not depend on the state (cached per beta, alpha)."""
        key = (beta, alpha)
        if key in self._static_cache:
            return self._static_cache[key]
        E = self.n_el
        phi, lam, dphi, wd = self.phi, self.lam, self.dphi, self.wdet
        eye2 = np.eye(2)
        blocks = {}
        lap = np.einsum("eq,eqaj,eqbj->eab", wd, dphi, dphi)
        vv = np.einsum("ik,eab->eiakb", eye2, lap) + np.einsum("eq,eqak,eqbi->eiakb", wd, dphi, dphi)
        if alpha > 0:
            mass = np.einsum("eq,qa,qb->eab", wd, phi, phi)
            vv = vv + alpha * np.einsum("ik,eab->eiakb", eye2, mass)
        blocks["vv"] = vv
        blocks["vp"] = -np.einsum("eq,eqai,qb->eiab", wd, dphi, lam)
        # vG: (E, i, a, (m, n), b)
        dG = np.zeros((E, 2, 6, 2, 2, 3))
        base = (1.0 - beta) * np.einsum("eq,eqaj,qb->eajb", wd, dphi, lam)  # (E, a, j, b)
        for i in range(2):
            for m_ in range(2):
                for n_ in range(2):
                    if i == m_:
                        dG[:, i, :, m_, n_, :] -= base[:, :, n_, :]
                    if i == n_:
                        dG[:, i, :, m_, n_, :] -= base[:, :, m_, :]
        blocks["vG"] = dG
        blocks["intphi"] = np.einsum("eq,qa->ea", wd, phi)
        blocks["pv"] = np.einsum("eq,qa,eqbk->eakb", wd, lam, dphi)
        # Gv: (E, (m, n), a, k, b) = -lam_a delta_mk dphi_b,n
        gvb = np.einsum("eq,qa,eqbn->eanb", wd, lam, dphi)
        Gv = np.zeros((E, 2, 2, 3, 2, 6))
        for m_ in range(2):
            Gv[:, m_, :, :, m_, :] = -np.swapaxes(gvb, 1, 2)
        blocks["Gv"] = Gv
        m1 = np.einsum("eq,qa,qb->eab", wd, lam, lam)
        blocks["GG"] = np.einsum("cd,eab->ecadb", np.eye(4), m1)
        if len(self._static_cache) > 4:
            self._static_cache.clear()
        self._static_cache[key] = blocks
        return blocks

    def _reduced_matrix(self, vals: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self._coo_pos, weights=vals[self._coo_keep] * self._coo_w,
                           minlength=self._nnz)
        n = self.constraints.n_red
        return sp.csr_matrix((data, self._csr_indices, self._csr_indptr), shape=(n, n))

    def full_matrix(self, vals: np.ndarray) -> sp.csr_matrix:
        N = self.layout.size
        return sp.csr_matrix((vals, (self._full_rows, self._full_cols)), shape=(N, N))

    # -- point location ---------------------------------------------------
    def locate(self, pts: np.ndarray, k: int = 8):
        """Containing element and barycentric coordinates for each point (-1 if outside)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self._locator is None:
            cen = self.mesh.nodes[self.mesh.triangles].mean(axis=1)
            self._locator = cKDTree(cen)
        k = min(k, self.n_el)
        _, cand = self._locator.query(pts, k=k)
        cand = np.atleast_2d(cand).reshape(len(pts), k)
        elem = np.full(len(pts), -1)
        bary = np.zeros((len(pts), 3))
        for j in range(k):
            todo = elem < 0
            if not todo.any():
                break
            e = cand[todo, j]
            b = self._bary(e, pts[todo])
            ok = (b >= -1e-10).all(axis=1)
            ii = np.flatnonzero(todo)[ok]
            elem[ii] = e[ok]
            bary[ii] = b[ok]
        miss = np.flatnonzero(elem < 0)
        for i in miss:
            b = self._bary(np.arange(self.n_el), np.repeat(pts[i:i + 1], self.n_el, axis=0))
            ok = np.flatnonzero((b >= -1e-10).all(axis=1))
            if len(ok):
                elem[i] = ok[0]
                bary[i] = b[ok[0]]
        return elem, bary

    def _bary(self, e, pts):
        p0 = self.mesh.nodes[self.mesh.triangles[e, 0]]
        d = pts - p0
        l12 = np.einsum("nkj,nj->nk", self.dlam[e, 1:], d)
        return np.concatenate([(1 - l12.sum(axis=1))[:, None], l12], axis=1)

    def evaluate(self, u: np.ndarray, elem: np.ndarray, bary: np.ndarray):
        """Fields at points given by (element, barycentric) pairs."""
        Vn, Pn, Gn, Sn = self.element_fields(u)
        phi = p2_values(bary)
        dphi = np.einsum("nak,nkj->naj", p2_dlam(bary), self.dlam[elem])
        v = np.einsum("na,nia->ni", phi, Vn[elem])
        gv = np.einsum("nia,naj->nij", Vn[elem], dphi)
        p = np.einsum("na,na->n", bary, Pn[elem])
        G = np.einsum("na,nca->nc", bary, Gn[elem])
        s = np.einsum("na,nca->nc", bary, Sn[elem])
        return v, gv, p, G, s


@dataclass(frozen=True)
class PointValues:
    v: np.ndarray
    p: np.ndarray
    G: np.ndarray
    s: np.ndarray
    A: np.ndarray
    grad_v: np.ndarray


def interpolate(disc: Discretization, state: FieldState, points) -> PointValues:
    """Finite-element interpolation at points; raises if a point is outside the mesh."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    elem, bary = disc.locate(pts)
    if (elem < 0).any():
        i = int(np.flatnonzero(elem < 0)[0])
        raise ValueError(f"point {pts[i].tolist()} lies outside the mesh")
    v, gv, p, G, s = disc.evaluate(state.u, elem, bary)
    A = kernel.conformation_from_log(kernel.SymTensor2.unstack(s)).stack()
    return PointValues(v, p, G, s, A, gv)


def nodal_conformation(disc: Discretization, state: FieldState) -> np.ndarray:
    """A at mesh vertices, shape (nV, 3)."""
    return kernel.conformation_from_log(kernel.SymTensor2.unstack(state.s.T)).stack()


def with_params(params: SolverParams, **kw) -> SolverParams:
    return replace(params, **kw)
