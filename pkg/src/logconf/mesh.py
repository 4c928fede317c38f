"""Triangle meshes with tagged boundary edges and a plain-text exchange format."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

TAG_KINDS = ("wall", "inlet", "outlet", "symmetry", "cylinder")


class MeshError(ValueError):
    pass


class MeshFormatError(MeshError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True, order=True)
class BoundaryTag:
    kind: str
    index: int = 0

    def __post_init__(self):
        if self.kind not in TAG_KINDS:
            raise ValueError(f"unknown boundary tag kind {self.kind!r}")
        if (self.kind in ("inlet", "outlet")) != (self.index > 0):
            raise ValueError("inlet/outlet tags need a positive port index, others none")

    def __str__(self) -> str:
        return f"{self.kind}:{self.index}" if self.index else self.kind

    @classmethod
    def parse(cls, text: str) -> "BoundaryTag":
        kind, _, idx = text.strip().partition(":")
        try:
            return cls(kind, int(idx) if idx else 0)
        except ValueError as exc:
            raise ValueError(f"bad boundary tag {text!r}: {exc}") from None


WALL = BoundaryTag("wall")
SYMMETRY = BoundaryTag("symmetry")
CYLINDER = BoundaryTag("cylinder")


def inlet(k: int) -> BoundaryTag:
    return BoundaryTag("inlet", k)


def outlet(k: int) -> BoundaryTag:
    return BoundaryTag("outlet", k)


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: tuple[BoundaryTag, ...]
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float).reshape(-1, 2)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        bed = np.ascontiguousarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        for a in (nodes, tris, bed):
            a.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "boundary_edges", bed)
        object.__setattr__(self, "boundary_tags", tuple(self.boundary_tags))
        if len(self.boundary_tags) != len(bed):
            raise MeshError("one tag per boundary edge required")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def signed_area(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def h_elem(self) -> np.ndarray:
        """Longest edge of each triangle."""
        p = self.nodes[self.triangles]
        lens = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
        return lens.max(axis=1)

    @cached_property
    def _edge_table(self):
        t = self.triangles
        # local edge k is opposite vertex k: (1,2), (2,0), (0,1)
        loc = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1).reshape(-1, 2)
        key = np.sort(loc, axis=1)
        edges, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        return edges, inv.reshape(-1, 3), counts

    @property
    def edges(self) -> np.ndarray:
        """Unique edges (sorted node pairs)."""
        return self._edge_table[0]

    @property
    def tri_edges(self) -> np.ndarray:
        """Edge index of each triangle's local edge k (opposite vertex k)."""
        return self._edge_table[1]

    @property
    def edge_counts(self) -> np.ndarray:
        return self._edge_table[2]

    def edge_index(self, pairs: np.ndarray) -> np.ndarray:
        """Indices into :attr:`edges` for node pairs (any order); -1 if absent."""
        edges = self.edges
        key = np.sort(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=1)
        n = max(self.n_nodes, 1)
        codes = edges[:, 0] * n + edges[:, 1]
        q = key[:, 0] * n + key[:, 1]
        pos = np.searchsorted(codes, q)
        pos = np.clip(pos, 0, len(codes) - 1)
        return np.where(codes[pos] == q, pos, -1)

    def edges_with(self, predicate) -> np.ndarray:
        """Boundary edge rows whose tag satisfies ``predicate(tag)``."""
        sel = [i for i, t in enumerate(self.boundary_tags) if predicate(t)]
        return self.boundary_edges[sel]

    def tags(self) -> list[BoundaryTag]:
        return sorted(set(self.boundary_tags))

    def boundary_length(self, tag: BoundaryTag) -> float:
        e = self.edges_with(lambda t: t == tag)
        if len(e) == 0:
            return 0.0
        return float(np.linalg.norm(self.nodes[e[:, 1]] - self.nodes[e[:, 0]], axis=1).sum())

    def edge_outward_normals(self, bedges: np.ndarray) -> np.ndarray:
        """Unit outward normals of boundary edges (given as node pairs)."""
        bedges = np.asarray(bedges).reshape(-1, 2)
        idx = self.edge_index(bedges)
        # owning triangle and its third vertex
        tri_of_edge = np.full(len(self.edges), -1)
        flat = self.tri_edges.ravel()
        tri_of_edge[flat] = np.repeat(np.arange(self.n_triangles), 3)
        tri = tri_of_edge[idx]
        third = self.triangles[tri].sum(axis=1) - bedges.sum(axis=1)
        a, b, c = self.nodes[bedges[:, 0]], self.nodes[bedges[:, 1]], self.nodes[third]
        t = b - a
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        n /= np.linalg.norm(n, axis=1)[:, None]
        flip = np.einsum("ij,ij->i", n, c - a) > 0
        n[flip] *= -1
        return n

    def boundary_nodes(self, predicate=lambda t: True) -> np.ndarray:
        return np.unique(self.edges_with(predicate).ravel())

    def euler_characteristic(self) -> int:
        return self.n_nodes - len(self.edges) + self.n_triangles


def check_mesh(mesh: Mesh) -> list[str]:
    """Return a list of invariant violations (empty when the mesh is valid)."""
    bad: list[str] = []
    n = mesh.n_nodes
    t = mesh.triangles
    if t.size and (t.min() < 0 or t.max() >= n):
        bad.append("triangle references a node index out of range")
        return bad
    if mesh.boundary_edges.size and (mesh.boundary_edges.min() < 0 or mesh.boundary_edges.max() >= n):
        bad.append("boundary edge references a node index out of range")
        return bad
    for i in np.flatnonzero(mesh.signed_area <= 0):
        bad.append(f"triangle {i} has non-positive signed area {mesh.signed_area[i]:.3e}")
    counts = mesh.edge_counts
    for i in np.flatnonzero(counts > 2):
        bad.append(f"edge {tuple(mesh.edges[i])} shared by {counts[i]} triangles")
    boundary = {tuple(e) for e in mesh.edges[counts == 1]}
    tagged: dict[tuple, BoundaryTag] = {}
    for e, tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        key = tuple(sorted(int(x) for x in e))
        if key in tagged:
            bad.append(f"boundary edge {key} tagged twice")
        tagged[key] = tag
        if key not in boundary:
            bad.append(f"tagged edge {key} is not a boundary edge")
    for key in sorted(boundary - tagged.keys()):
        bad.append(f"boundary edge {key} has no tag")
    return bad


def validate(mesh: Mesh) -> Mesh:
    problems = check_mesh(mesh)
    if problems:
        head = "; ".join(problems[:5])
        more = f" (+{len(problems) - 5} more)" if len(problems) > 5 else ""
        raise MeshError(f"invalid mesh: {head}{more}")
    return mesh


def save_mesh(mesh: Mesh) -> str:
    out = io.StringIO()
    out.write("vmesh 1\n")
    out.write(f"nodes {mesh.n_nodes}\n")
    for x, y in mesh.nodes:
        out.write(f"{float(x)!r} {float(y)!r}\n")
    out.write(f"tris {mesh.n_triangles}\n")
    for i, j, k in mesh.triangles:
        out.write(f"{i} {j} {k}\n")
    out.write(f"bedges {len(mesh.boundary_edges)}\n")
    for (i, j), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        out.write(f"{i} {j} {tag}\n")
    return out.getvalue()


def _lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def load_mesh(text: str, *, check: bool = True) -> Mesh:
    it = _lines(text)

    def take(expect: str | None = None):
        try:
            lineno, line = next(it)
        except StopIteration:
            raise MeshFormatError(len(text.splitlines()) + 1, "unexpected end of file") from None
        if expect is not None:
            parts = line.split()
            if len(parts) != 2 or parts[0] != expect:
                raise MeshFormatError(lineno, f"expected '{expect} <count>', got {line!r}")
            try:
                count = int(parts[1])
            except ValueError:
                raise MeshFormatError(lineno, f"bad count {parts[1]!r}") from None
            if count < 0:
                raise MeshFormatError(lineno, "negative count")
            return lineno, count
        return lineno, line

    lineno, header = take()
    if header.split() != ["vmesh", "1"]:
        raise MeshFormatError(lineno, f"expected 'vmesh 1', got {header!r}")

    def rows(count, ncol, conv, name):
        out = []
        for _ in range(count):
            ln, line = take()
            parts = line.split()
            if len(parts) != ncol:
                raise MeshFormatError(ln, f"{name} line needs {ncol} fields")
            try:
                out.append([conv(p) for p in parts])
            except ValueError:
                raise MeshFormatError(ln, f"cannot parse {name} line {line!r}") from None
        return out

    _, nn = take("nodes")
    nodes = rows(nn, 2, float, "node")
    _, nt = take("tris")
    tris = rows(nt, 3, int, "triangle")
    _, nb = take("bedges")
    edges, tags = [], []
    for _ in range(nb):
        ln, line = take()
        parts = line.split()
        if len(parts) != 3:
            raise MeshFormatError(ln, "boundary edge line needs 'i j TAG'")
        try:
            edges.append([int(parts[0]), int(parts[1])])
            tags.append(BoundaryTag.parse(parts[2]))
        except ValueError as exc:
            raise MeshFormatError(ln, str(exc)) from None
    extra = next(it, None)
    if extra is not None:
        raise MeshFormatError(extra[0], "trailing content after boundary edges")
    mesh = Mesh(np.array(nodes).reshape(-1, 2), np.array(tris).reshape(-1, 3),
                np.array(edges).reshape(-1, 2), tags)
    if check:
        validate(mesh)
    return mesh


def quality_report(mesh: Mesh, bins: int = 10) -> dict:
    p = mesh.nodes[mesh.triangles]
    angles = []
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        angles.append(np.degrees(np.arccos(np.clip(cos, -1, 1))))
    angles = np.stack(angles, axis=1)
    lo, hi = float(mesh.h_elem.min()), float(mesh.h_elem.max())
    if hi - lo <= 1e-9 * hi:  # uniform mesh
        lo, hi = lo * (1 - 1e-6), hi * (1 + 1e-6)
    hist, edges = np.histogram(mesh.h_elem, bins=bins, range=(lo, hi))
    return {
        "nodes": mesh.n_nodes,
        "triangles": mesh.n_triangles,
        "min_angle_deg": float(angles.min()),
        "max_angle_deg": float(angles.max()),
        "h_min": float(mesh.h_elem.min()),
        "h_max": float(mesh.h_elem.max()),
        "h_histogram": {"counts": hist.tolist(), "edges": edges.tolist()},
        "boundary_lengths": {str(t): mesh.boundary_length(t) for t in mesh.tags()},
    }
