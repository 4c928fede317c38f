"""Block-structured generators for the cylinder, cross-slot and tri-slot domains.

Each generator fills mapped quadrilateral patches with nodes, splits every
quad into two triangles, merges coincident nodes and tags the boundary from
its geometry.  Output is deterministic for given arguments.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree

from .mesh import CYLINDER, SYMMETRY, WALL, Mesh, inlet, outlet, validate


class GeometryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# 1D distributions


def geometric(n: int, ratio: float) -> np.ndarray:
    """n+1 points on [0, 1]; last spacing / first spacing = ratio."""
    if n < 1:
        raise ValueError("need at least one segment")
    if n == 1 or abs(ratio - 1.0) < 1e-12:
        return np.linspace(0.0, 1.0, n + 1)
    q = ratio ** (1.0 / (n - 1))
    d = q ** np.arange(n)
    t = np.concatenate([[0.0], np.cumsum(d)])
    t /= t[-1]
    t[-1] = 1.0
    return t


def graded_count(length: float, h0: float, h1: float) -> int:
    """Segment count for spacing varying geometrically from h0 to h1."""
    if abs(h1 - h0) < 1e-12 * max(h0, h1):
        return max(1, math.ceil(length / h0 - 1e-9))
    return max(1, math.ceil(length * math.log(h1 / h0) / (h1 - h0) - 1e-9))


def graded(length: float, h0: float, h1: float) -> np.ndarray:
    """Points on [0, 1] with spacing ~h0 at 0 growing to ~h1 at 1."""
    n = graded_count(length, h0, h1)
    return geometric(n, h1 / h0)


def _fractions(pts: np.ndarray) -> np.ndarray:
    d = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    t = np.concatenate([[0.0], np.cumsum(d)])
    return t / t[-1]


# ---------------------------------------------------------------------------
# patches


def tfi(bottom, top, left, right) -> np.ndarray:
    """Transfinite interpolation; returns a (ni+1, nj+1, 2) node grid.

    bottom/top run along i (j = 0 / j = nj), left/right along j (i = 0 / i = ni).
    """
    B, T, L, R = (np.asarray(a, dtype=float) for a in (bottom, top, left, right))
    if len(B) != len(T) or len(L) != len(R):
        raise ValueError("opposite patch edges need equal node counts")
    sB, sT, sL, sR = (_fractions(a) for a in (B, T, L, R))
    xi = np.empty((len(B), len(L)))
    eta = np.empty_like(xi)
    # blend parameters vary linearly between opposite edges
    xi[:] = sB[:, None] * (1 - sL[None, :]) + sT[:, None] * sL[None, :]
    eta[:] = sL[None, :] * (1 - sB[:, None]) + sR[None, :] * sB[:, None]
    p00, p10, p01, p11 = B[0], B[-1], T[0], T[-1]
    X = ((1 - eta)[..., None] * B[:, None, :] + eta[..., None] * T[:, None, :]
         + (1 - xi)[..., None] * L[None, :, :] + xi[..., None] * R[None, :, :]
         - ((1 - xi) * (1 - eta))[..., None] * p00 - (xi * (1 - eta))[..., None] * p10
         - ((1 - xi) * eta)[..., None] * p01 - (xi * eta)[..., None] * p11)
    X[:, 0] = B
    X[:, -1] = T
    X[0, :] = L
    X[-1, :] = R
    return X


def _line(a, b, t) -> np.ndarray:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    t = np.asarray(t, float)[:, None]
    return a + t * (b - a)


class _Builder:
    """Collects quad grids and splits them into triangles."""

    def __init__(self):
        self.points: list[np.ndarray] = []
        self.tris: list[np.ndarray] = []
        self.offset = 0

    def add_grid(self, X: np.ndarray, diag) -> None:
        """diag(ic, jc, centers) -> bool array; True splits along (i,j)-(i+1,j+1)."""
        ni, nj = X.shape[0] - 1, X.shape[1] - 1
        idx = self.offset + np.arange((ni + 1) * (nj + 1)).reshape(ni + 1, nj + 1)
        self.points.append(X.reshape(-1, 2))
        self.offset += (ni + 1) * (nj + 1)
        a = idx[:-1, :-1].ravel()
        b = idx[1:, :-1].ravel()
        c = idx[1:, 1:].ravel()
        d = idx[:-1, 1:].ravel()
        ic, jc = np.meshgrid(np.arange(ni), np.arange(nj), indexing="ij")
        centers = 0.25 * (X[:-1, :-1] + X[1:, :-1] + X[1:, 1:] + X[:-1, 1:]).reshape(-1, 2)
        main = np.asarray(diag(ic.ravel(), jc.ravel(), centers, X), dtype=bool)
        t1 = np.where(main[:, None], np.stack([a, b, c], 1), np.stack([a, b, d], 1))
        t2 = np.where(main[:, None], np.stack([a, c, d], 1), np.stack([b, c, d], 1))
        self.tris.append(t1)
        self.tris.append(t2)

    def finish(self, tol: float):
        pts = np.concatenate(self.points)
        tris = np.concatenate(self.tris)
        tree = cKDTree(pts)
        pairs = tree.query_pairs(tol, output_type="ndarray")
        rep = np.arange(len(pts))
        # union-find with path halving; the smallest index represents a cluster
        def find(i):
            while rep[i] != i:
                rep[i] = rep[rep[i]]
                i = rep[i]
            return i
        for i, j in pairs:
            ri, rj = find(i), find(j)
            if ri != rj:
                rep[max(ri, rj)] = min(ri, rj)
        roots = np.array([find(i) for i in range(len(pts))])
        uniq, new = np.unique(roots, return_inverse=True)
        nodes = pts[uniq]
        tris = new[tris]
        # counter-clockwise orientation
        p = nodes[tris]
        area = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
        neg = area < 0
        tris[neg] = tris[neg][:, [0, 2, 1]]
        return nodes, tris


def shorter_diagonal(ic, jc, centers, X):
    a = X[:-1, :-1].reshape(-1, 2)
    b = X[1:, :-1].reshape(-1, 2)
    c = X[1:, 1:].reshape(-1, 2)
    d = X[:-1, 1:].reshape(-1, 2)
    return np.linalg.norm(c - a, axis=1) <= np.linalg.norm(d - b, axis=1) * (1 + 1e-9)


def _boundary_edges(nodes, tris):
    loc = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(loc, axis=1)
    _, first, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
    # keep the CCW orientation of the owning triangle
    return loc[np.sort(first[counts == 1])]


def _assemble(builder: _Builder, classify, tol: float, meta: dict) -> Mesh:
    nodes, tris = builder.finish(tol)
    bed = _boundary_edges(nodes, tris)
    tags = [classify(nodes[i], nodes[j]) for i, j in bed]
    return validate(Mesh(nodes, tris, bed, tags, meta=meta))


# ---------------------------------------------------------------------------
# cylinder in a channel (half domain)


def gen_cylinder_half(h_target: float, L_up: float = 10.0, L_down: float = 10.0) -> Mesh:
    """Upper half of a unit-radius cylinder centred in a channel of half-height 2."""
    if not h_target > 0:
        raise GeometryError("h_target must be positive")
    if L_up < 2.0 or L_down < 2.0:
        raise GeometryError("degenerate geometry: L_up and L_down must be >= 2 cylinder radii")
    h = float(h_target)
    H = 2.0
    # arc cells roughly square with diagonal <= h/2
    a = h / (2.0 * math.sqrt(2.0))
    ns = max(2, math.ceil((math.pi / 4) / a))
    outer = H / ns
    eta = graded(2 * math.sqrt(2.0) - 1.0, a, outer)
    # lateral distribution on x = +-2: refined toward y = 0 downstream
    y_down = H * geometric(ns, 2.0)
    y_up = np.linspace(0.0, H, ns + 1)
    far = 1.3 * h

    b = _Builder()

    def arc(t0, t1, n):
        t = np.linspace(t0, t1, n + 1)
        return np.stack([np.cos(t), np.sin(t)], axis=1)

    def annulus(arc_pts, outer_pts):
        left = _line(arc_pts[0], outer_pts[0], eta)
        right = _line(arc_pts[-1], outer_pts[-1], eta)
        b.add_grid(tfi(arc_pts, outer_pts, left, right), shorter_diagonal)

    annulus(arc(math.pi, 0.75 * math.pi, ns), np.stack([np.full(ns + 1, -H), y_up], 1))
    annulus(arc(0.75 * math.pi, 0.25 * math.pi, 2 * ns),
            np.stack([np.linspace(-H, H, 2 * ns + 1), np.full(2 * ns + 1, H)], 1))
    annulus(arc(0.25 * math.pi, 0.0, ns), np.stack([np.full(ns + 1, H), y_down[::-1]], 1))

    def block(x, y):
        X = np.stack(np.meshgrid(x, y, indexing="ij"), axis=-1)
        b.add_grid(X, shorter_diagonal)

    if L_up > H:
        length = L_up - H
        xs = -H - length * graded(length, outer, far)
        block(xs[::-1], y_up)
    if L_down > H:
        length = L_down - H
        xs = H + length * graded(length, y_down[1] - y_down[0], far)
        block(xs, y_down)

    tol = 1e-9

    def classify(p, q):
        m = 0.5 * (p + q)
        if abs(m[0] + L_up) < tol:
            return inlet(1)
        if abs(m[0] - L_down) < tol:
            return outlet(1)
        if abs(m[1] - H) < tol:
            return WALL
        if abs(m[1]) < tol:
            return SYMMETRY
        if abs(np.hypot(*p) - 1) < tol and abs(np.hypot(*q) - 1) < tol:
            return CYLINDER
        raise GeometryError(f"unclassified boundary edge at {m}")

    meta = {"geometry": "cylinder", "h_target": h, "L_up": L_up, "L_down": L_down}
    return _assemble(b, classify, tol * 1e-2, meta)


# ---------------------------------------------------------------------------
# cross-slot


def _mirror_diag(ic, jc, centers, X):
    # "/" in quadrants I and III, "\" in II and IV: symmetric under both mirrors
    s = centers[:, 0] * centers[:, 1]
    return s > 0


def gen_cross_slot(h_target: float, L_arm: float = 10.0) -> Mesh:
    """Plus-shaped cross-slot: unit-width arms of length L_arm around a unit square."""
    if not h_target > 0:
        raise GeometryError("h_target must be positive")
    if L_arm < 1.0:
        raise GeometryError("degenerate geometry: L_arm must be >= 1")
    h = float(h_target)
    hc = 0.5 * h
    nc = 2 * max(1, math.ceil(0.5 / hc - 1e-9))  # even: no cell straddles an axis
    centre = np.linspace(-0.5, 0.5, nc + 1)
    arm = 0.5 + L_arm * graded(L_arm, 1.0 / nc, 1.5 * h)
    coords = np.concatenate([-arm[::-1], centre[1:-1], arm])

    b = _Builder()
    cx = 0.5 * (coords[1:] + coords[:-1])
    inner = np.abs(cx) < 0.5
    # centre column, centre row (without the square), assembled from tensor blocks
    icore = np.flatnonzero(inner)
    lo, hi = icore[0], icore[-1] + 1
    n = len(coords) - 1

    def grid(i0, i1, j0, j1):
        X = np.stack(np.meshgrid(coords[i0:i1 + 1], coords[j0:j1 + 1], indexing="ij"), axis=-1)
        b.add_grid(X, _mirror_diag)

    grid(0, n, lo, hi)          # horizontal bar including the square
    grid(lo, hi, 0, lo)         # bottom arm
    grid(lo, hi, hi, n)         # top arm

    end = L_arm + 0.5
    tol = 1e-9

    def classify(p, q):
        m = 0.5 * (p + q)
        if abs(m[0] + end) < tol:
            return inlet(1)
        if abs(m[0] - end) < tol:
            return inlet(2)
        if abs(m[1] - end) < tol:
            return outlet(1)
        if abs(m[1] + end) < tol:
            return outlet(2)
        return WALL

    meta = {"geometry": "crossslot", "h_target": h, "L_arm": L_arm}
    return _assemble(b, classify, tol * 1e-2, meta)


# ---------------------------------------------------------------------------
# tri-slot


def trislot_rays(theta: float) -> list[tuple[float, str, int]]:
    """Channel directions (angle, 'inlet'|'outlet', port) in counter-clockwise order."""
    rays = [
        (math.pi / 2, "outlet", 1),
        (math.pi / 2 + theta, "inlet", 3),
        (3 * math.pi / 2 - theta, "outlet", 3),
        (3 * math.pi / 2, "inlet", 1),
        (3 * math.pi / 2 + theta, "outlet", 2),
        (math.pi / 2 - theta + 2 * math.pi, "inlet", 2),
    ]
    return rays


def gen_trislot(h_target: float, theta: float = math.pi / 3, L_in: float = 6.0,
                L_out: float = 8.0) -> Mesh:
    """Hexagonal core with alternating inlet and outlet channels of unit width.

    Outlets point along 90, theta-90 and 270-theta degrees, inlets along
    90-theta, 90+theta and 270 degrees.  The core is split into six kites
    (centre, mouth midpoint, corner, next mouth midpoint).
    """
    if not h_target > 0:
        raise GeometryError("h_target must be positive")
    if not (math.pi / 6 < theta < math.pi / 2):
        raise GeometryError("self-intersecting geometry: theta must lie in (pi/6, pi/2)")
    if L_in <= 0 or L_out <= 0:
        raise GeometryError("degenerate geometry: channel lengths must be positive")
    h = float(h_target)
    hc = 0.5 * h
    n = max(1, math.ceil(0.5 / hc - 1e-9))  # cells per half mouth

    rays = trislot_rays(theta)
    phis = [r[0] for r in rays]
    m = len(rays)

    def unit(phi):
        return np.array([math.cos(phi), math.sin(phi)])

    def perp(phi):
        return np.array([-math.sin(phi), math.cos(phi)])

    # corner between ray k and ray k+1 lies on the bisector
    corners = []
    for k in range(m):
        gap = (phis[(k + 1) % m] - phis[k]) % (2 * math.pi)
        bis = phis[k] + 0.5 * gap
        corners.append(0.5 / math.sin(0.5 * gap) * unit(bis))
    mouths = []  # (right corner, left corner) seen looking outward along ray k
    for k in range(m):
        mouths.append((corners[k - 1], corners[k]))
    mids = [0.5 * (a + c) for a, c in mouths]

    b = _Builder()
    origin = np.zeros(2)
    t_half = np.linspace(0.0, 1.0, n + 1)

    for k in range(m):
        # kite k: origin, mid_k, corner_k, mid_{k+1}; diagonal along origin -> corner
        k1 = (k + 1) % m
        bottom = _line(origin, mids[k], t_half)
        top = _line(mids[k1], corners[k], t_half)
        left = _line(origin, mids[k1], t_half)
        right = _line(mids[k], corners[k], t_half)
        b.add_grid(tfi(bottom, top, left, right), lambda ic, jc, c, X: np.ones(len(ic), bool))

    h_far = 1.5 * h
    ends = {}
    for k, (phi, kind, port) in enumerate(rays):
        L = L_in if kind == "inlet" else L_out
        u, w = unit(phi), perp(phi)
        right_c, left_c = mouths[k]
        mouth = _line(right_c, left_c, np.linspace(0.0, 1.0, 2 * n + 1))
        depth = float(mids[k] @ u) + L
        lat = mouth @ w
        outer = depth * u[None, :] + lat[:, None] * w[None, :]
        t = graded(L, 1.0 / (2 * n), h_far)
        X = mouth[None, :, :] + t[:, None, None] * (outer - mouth)[None, :, :]

        def diag(ic, jc, c, X, w=w, mid=mids[k], u=u):
            lat_c = (c - mid) @ w
            return lat_c > 0

        b.add_grid(X, diag)
        ends[k] = (u, depth, kind, port)

    tol = 1e-9

    def classify(p, q):
        for u, depth, kind, port in ends.values():
            if abs(p @ u - depth) < 1e-7 and abs(q @ u - depth) < 1e-7:
                return inlet(port) if kind == "inlet" else outlet(port)
        return WALL

    meta = {"geometry": "trislot", "h_target": h, "theta": theta, "L_in": L_in, "L_out": L_out}
    return _assemble(b, classify, tol * 1e-2, meta)


# ---------------------------------------------------------------------------
# straight channel


def gen_channel(h_target: float, length: float = 10.0, half_width: float = 2.0,
                symmetric: bool = False) -> Mesh:
    """Rectangle [0, length] x [-half_width, half_width] (or [0, half_width] with a
    symmetry line at y = 0 when ``symmetric``); inlet left, outlet right."""
    if not h_target > 0 or length <= 0 or half_width <= 0:
        raise GeometryError("degenerate geometry: sizes must be positive")
    y0 = 0.0 if symmetric else -half_width
    nx = max(1, math.ceil(length / h_target - 1e-9))
    ny = max(1, math.ceil((half_width - y0) / (0.7 * h_target) - 1e-9))
    if not symmetric and ny % 2:
        ny += 1
    x = np.linspace(0.0, length, nx + 1)
    y = np.linspace(y0, half_width, ny + 1)
    b = _Builder()
    X = np.stack(np.meshgrid(x, y, indexing="ij"), axis=-1)
    b.add_grid(X, lambda ic, jc, c, X: c[:, 1] > 0)
    tol = 1e-9

    def classify(p, q):
        m = 0.5 * (p + q)
        if abs(m[0]) < tol:
            return inlet(1)
        if abs(m[0] - length) < tol:
            return outlet(1)
        if symmetric and abs(m[1]) < tol:
            return SYMMETRY
        return WALL

    meta = {"geometry": "channel", "h_target": h_target, "length": length,
            "half_width": half_width, "symmetric": symmetric}
    return _assemble(b, classify, tol * 1e-2, meta)
