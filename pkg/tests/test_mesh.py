import math

import numpy as np
import pytest

from logconf.geometry import GeometryError, gen_cross_slot, gen_cylinder_half, gen_trislot
from logconf.mesh import (CYLINDER, WALL, BoundaryTag, Mesh, MeshError, MeshFormatError,
                          check_mesh, inlet, load_mesh, outlet, save_mesh)

UNIT_SQUARE = """vmesh 1
# two triangles
nodes 4
0 0
1 0
1 1
0 1
tris 2
0 1 2
0 2 3
bedges 4
0 1 wall
1 2 outlet:1
2 3 wall
3 0 inlet:1
"""


@pytest.fixture(scope="module")
def cyl():
    return gen_cylinder_half(0.14)


@pytest.fixture(scope="module")
def cross():
    return gen_cross_slot(0.2, L_arm=3.0)


@pytest.fixture(scope="module")
def tri():
    return gen_trislot(0.2, math.pi / 3, 3.0, 4.0)


def test_unit_square_fixture():
    m = load_mesh(UNIT_SQUARE)
    assert (m.n_nodes, m.n_triangles, len(m.boundary_edges)) == (4, 2, 4)
    assert m.boundary_tags[1] == outlet(1)
    assert check_mesh(m) == []


def test_round_trip_identical(cyl):
    text = save_mesh(cyl)
    back = load_mesh(text)
    assert np.array_equal(back.nodes, cyl.nodes)
    assert np.array_equal(back.triangles, cyl.triangles)
    assert np.array_equal(back.boundary_edges, cyl.boundary_edges)
    assert back.boundary_tags == cyl.boundary_tags
    assert save_mesh(back) == text


def test_negative_area_names_triangle():
    bad = UNIT_SQUARE.replace("0 2 3\n", "0 3 2\n")
    with pytest.raises(MeshError, match="triangle 1"):
        load_mesh(bad)
    m = load_mesh(bad, check=False)
    assert any("triangle 1" in v for v in check_mesh(m))


@pytest.mark.parametrize("text,line", [
    ("vmesh 2\n", 1),
    ("vmesh 1\nnodes 1\n0 zero\n", 3),
    ("vmesh 1\nnodes 0\ntris 0\nbedges 1\n0 1 door\n", 5),
    ("vmesh 1\nnodes 0\ntris\n", 3),
])
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(MeshFormatError) as exc:
        load_mesh(text)
    assert exc.value.lineno == line
    assert f"line {line}" in str(exc.value)


def test_untagged_boundary_reported():
    text = UNIT_SQUARE.replace("bedges 4", "bedges 3").replace("3 0 inlet:1\n", "")
    m = load_mesh(text, check=False)
    assert any("no tag" in v for v in check_mesh(m))


def test_tag_parsing():
    assert BoundaryTag.parse("inlet:3") == inlet(3)
    assert str(outlet(2)) == "outlet:2"
    with pytest.raises(ValueError):
        BoundaryTag.parse("inlet")
    with pytest.raises(ValueError):
        BoundaryTag.parse("wall:1")


@pytest.mark.parametrize("name", ["cyl", "cross", "tri"])
def test_generators_valid(name, request):
    m = request.getfixturevalue(name)
    assert check_mesh(m) == []
    assert m.euler_characteristic() == 1
    h = m.meta["h_target"]
    assert m.h_elem.max() <= 2 * h
    assert m.h_elem.min() >= h / 8


def test_cylinder_tags_and_lengths(cyl):
    assert cyl.tags() == sorted([BoundaryTag("cylinder"), inlet(1), outlet(1),
                                 BoundaryTag("symmetry"), WALL])
    assert cyl.boundary_length(inlet(1)) == pytest.approx(2.0, abs=1e-9)
    assert cyl.boundary_length(outlet(1)) == pytest.approx(2.0, abs=1e-9)
    assert cyl.boundary_length(WALL) == pytest.approx(20.0, abs=1e-9)
    assert cyl.boundary_length(BoundaryTag("symmetry")) == pytest.approx(18.0, abs=1e-9)
    # chord error of the polygonal half circle is O(h^2)
    h_arc = np.linalg.norm(np.diff(cyl.nodes[cyl.edges_with(lambda t: t == CYLINDER)], axis=1),
                           axis=2).max()
    assert 0 < math.pi - cyl.boundary_length(CYLINDER) <= math.pi * h_arc**2 / 24 * 1.01
    r = np.hypot(*cyl.nodes[cyl.boundary_nodes(lambda t: t == CYLINDER)].T)
    np.testing.assert_allclose(r, 1.0, atol=1e-14)


def test_cylinder_grading(cyl):
    near = cyl.boundary_nodes(lambda t: t == CYLINDER)
    touching = np.isin(cyl.triangles, near).any(axis=1)
    assert cyl.h_elem[touching].max() <= 0.14 / 2 + 1e-12
    assert np.argmin(cyl.h_elem) in np.flatnonzero(touching)


def test_cylinder_degenerate():
    with pytest.raises(GeometryError, match="degenerate geometry"):
        gen_cylinder_half(0.2, L_up=1.5)


def test_cylinder_refinement_quadruples():
    n1 = gen_cylinder_half(0.28).n_triangles
    n2 = gen_cylinder_half(0.14).n_triangles
    assert 4 * 0.7 <= n2 / n1 <= 4 * 1.3


def test_cross_slot_geometry(cross):
    lo, hi = cross.nodes.min(axis=0), cross.nodes.max(axis=0)
    np.testing.assert_allclose(lo, [-3.5, -3.5])
    np.testing.assert_allclose(hi, [3.5, 3.5])
    for tag in (inlet(1), inlet(2), outlet(1), outlet(2)):
        assert cross.boundary_length(tag) == pytest.approx(1.0, abs=1e-12)
    assert cross.boundary_length(WALL) == pytest.approx(8 * 3.0, abs=1e-9)
    assert inlet(1) in cross.tags() and CYLINDER not in cross.tags()


def test_cross_slot_centre_exactly_triangulated(cross):
    c = cross.nodes[cross.triangles].mean(axis=1)
    inside = np.abs(c).max(axis=1) < 0.5
    assert cross.signed_area[inside].sum() == pytest.approx(1.0, abs=1e-12)
    p = cross.nodes[cross.triangles[inside]]
    assert np.abs(p).max() <= 0.5 + 1e-14


def test_cross_slot_refinement_and_errors():
    a = gen_cross_slot(0.4, 3.0).n_triangles
    b = gen_cross_slot(0.2, 3.0).n_triangles
    assert 4 * 0.7 <= b / a <= 4 * 1.3
    with pytest.raises(GeometryError, match="degenerate geometry"):
        gen_cross_slot(0.2, 0.5)


def _node_set_match(a, b, tol=1e-9):
    from scipy.spatial import cKDTree
    d, _ = cKDTree(a).query(b)
    return d.max() < tol


def test_trislot_rotational_symmetry(tri):
    c, s = math.cos(2 * math.pi / 3), math.sin(2 * math.pi / 3)
    rot = tri.nodes @ np.array([[c, s], [-s, c]])
    assert _node_set_match(tri.nodes, rot)


@pytest.mark.parametrize("theta", [math.pi / 3, math.pi / 4, math.pi / 3.5])
def test_trislot_mirror_symmetry_and_tags(theta):
    m = gen_trislot(0.25, theta, 3.0, 4.0)
    assert check_mesh(m) == []
    mirrored = m.nodes * np.array([-1.0, 1.0])
    assert _node_set_match(m.nodes, mirrored)
    ports = [t for t in m.tags() if t.kind in ("inlet", "outlet")]
    assert ports == sorted([inlet(1), inlet(2), inlet(3), outlet(1), outlet(2), outlet(3)])
    for t in ports:
        assert m.boundary_length(t) == pytest.approx(1.0, abs=1e-9)
    core = 0.5 / math.sin(min(theta, math.pi - 2 * theta) / 2)
    assert np.hypot(*m.nodes.T).max() >= 4.0 + 0.5


def test_trislot_invalid_angle():
    with pytest.raises(GeometryError, match="self-intersecting geometry"):
        gen_trislot(0.2, math.pi / 2)
    with pytest.raises(GeometryError, match="self-intersecting geometry"):
        gen_trislot(0.2, 0.5)


def test_deterministic_output():
    assert save_mesh(gen_trislot(0.3, math.pi / 4, 2.0, 2.0)) == \
        save_mesh(gen_trislot(0.3, math.pi / 4, 2.0, 2.0))


def test_outward_normals(cyl):
    e = cyl.edges_with(lambda t: t == outlet(1))
    np.testing.assert_allclose(cyl.edge_outward_normals(e), [[1.0, 0.0]] * len(e), atol=1e-12)
    e = cyl.edges_with(lambda t: t == CYLINDER)
    n = cyl.edge_outward_normals(e)
    mid = cyl.nodes[e].mean(axis=1)
    # outward from the fluid means pointing into the cylinder
    assert (np.einsum("ij,ij->i", n, mid) < 0).all()


def test_mesh_immutable(cyl):
    with pytest.raises(ValueError):
        cyl.nodes[0, 0] = 1.0
    assert isinstance(cyl, Mesh)
