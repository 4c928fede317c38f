import math

import numpy as np
import pytest

from logconf import cases
from logconf.cases import (FORCE_RADIUS, InletProfile, body_force, branch_label, channel_case,
                           crossslot_case, field_export, force_field, inlet_fenecr, inlet_oldroydb,
                           interstagnation_flux, region_mask, stagnation_points, stream_function,
                           trislot_case, vorticity_integral)
from logconf.fem import FieldState
from logconf.kernel import ModelClosure, ModelKind, reaction_array
from logconf.solver import RampSpec

from . import oracles


def _logm(A):
    lam, Q = np.linalg.eigh(oracles.sym(A))
    return oracles.unsym(Q @ (np.log(lam)[..., :, None] * np.swapaxes(Q, -1, -2)))


def test_oldroydb_inlet_printed_values():
    v, A = inlet_oldroydb(0.0, 0.8)
    np.testing.assert_allclose(v, [1.5, 0.0])
    np.testing.assert_allclose(A, [1.0, 0.0, 1.0])
    v, A = inlet_oldroydb(2.0, 0.5)
    np.testing.assert_allclose(v, [0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(A, [2.125, -0.75, 1.0], rtol=1e-15)


@pytest.mark.parametrize("We", [0.1, 0.6, 1.3])
def test_oldroydb_inlet_is_steady_shear_solution(We):
    y = np.linspace(-2, 2, 20)
    _, A = inlet_oldroydb(y, We)
    g = np.zeros((20, 4))
    g[:, 1] = -0.75 * y  # dv_x/dy
    s = _logm(A)
    ref = oracles.pi_daleckii_krein(s, g, We, "oldroyd-b")
    assert np.abs(ref).max() <= 1e-12
    got = reaction_array(s, g, ModelClosure(ModelKind.OLDROYD_B), We)
    assert np.abs(got).max() <= 1e-12


def test_fenecr_inlet_centreline_and_errors():
    _, A = inlet_fenecr(0.0, 0.7, 100.0)
    np.testing.assert_array_equal(A, [1.0, 0.0, 1.0])
    with pytest.raises(ValueError, match="invalid extensibility"):
        inlet_fenecr(1.0, 0.5, 2.0)


def test_fenecr_inlet_oldroydb_limit():
    y = np.linspace(-2, 2, 11)
    We = 0.6
    _, A = inlet_fenecr(y, We, 1e8)
    chi = -3 * We * y / 4
    np.testing.assert_allclose(A[:, 0], 1 + 2 * chi**2, rtol=1e-5)
    np.testing.assert_allclose(A[:, 1], chi, rtol=1e-5, atol=1e-12)


@pytest.mark.parametrize("We", [0.2, 0.66, 2.0])
def test_fenecr_inlet_is_steady_shear_solution(We):
    a2 = 100.0
    y = np.linspace(-2, 2, 20)
    _, A = inlet_fenecr(y, We, a2)
    assert (A[:, 0] + A[:, 2] < a2).all()
    g = np.zeros((20, 4))
    g[:, 1] = -0.75 * y
    s = _logm(A)
    ref = oracles.pi_daleckii_krein(s, g, We, "fene-cr", a_max_sq=a2)
    assert np.abs(ref).max() <= 1e-10
    got = reaction_array(s, g, ModelClosure(ModelKind.FENE_CR, a_max_sq=a2), We)
    assert np.abs(got).max() <= 1e-10


@pytest.mark.parametrize("kind", ["oldroyd-b", "fene-cr", "eps"])
def test_inlet_profile_flow_rate_and_frame(kind):
    # a right-hand inlet of half width 0.5 discharging towards -x
    prof = InletProfile((3.0, 1.0), (-1.0, 0.0), 0.5, kind)
    eta = np.linspace(-0.5, 0.5, 2001)
    x = np.stack([np.full_like(eta, 3.0), 1.0 + eta], axis=1)
    v = prof.velocity(x)
    assert np.abs(v[:, 1]).max() == 0.0
    mean = np.trapezoid(v[:, 0], eta)
    assert mean == pytest.approx(-1.0, rel=1e-6)
    s = prof.log_conformation(x, 0.5)
    if kind == "eps":
        np.testing.assert_array_equal(s[0], [1e-12, 0.0, 1e-12])
        return
    A = prof.conformation_tensor(x, 0.5)
    det = A[:, 0] * A[:, 2] - A[:, 1] ** 2
    assert (A[:, 0] > 0).all() and (det > 0).all()
    # rotation by pi leaves a symmetric tensor unchanged: compare with the local profile
    _, Al = (inlet_oldroydb(-eta, 0.5, 0.5) if kind == "oldroyd-b"
             else inlet_fenecr(-eta, 0.5, 100.0, -1.0, 0.5))
    np.testing.assert_allclose(A, Al, rtol=1e-12, atol=1e-14)


def test_body_force_values():
    assert FORCE_RADIUS == pytest.approx(1.0)
    np.testing.assert_allclose(body_force("rotating", 0.0, 0.0, 0.0, None), [0.0, 0.0])
    np.testing.assert_allclose(body_force("upward", 0.0, 0.0, 0.0, None), [0.0, 0.25])
    # clockwise as printed: at the top of the circle the force points along +x
    np.testing.assert_allclose(body_force("rotating", 0.0, 0.5, 0.0, None), [0.25, 0.0])
    np.testing.assert_allclose(body_force("rotating-ccw", 0.0, 0.5, 0.0, None), [-0.25, 0.0])
    for kind in ("rotating", "rotating-ccw", "upward"):
        np.testing.assert_array_equal(body_force(kind, 1.2 / math.sqrt(2), 1.2 / math.sqrt(2), 0.0, None), 0.0)
    ramp = RampSpec(1.0, 1.0, 0.0, 5.0)
    x = np.linspace(-0.9, 0.9, 7)
    for kind in ("rotating", "upward"):
        assert np.abs(body_force(kind, x, x[::-1], 5.0, ramp)).max() == 0.0
        assert np.abs(body_force(kind, x, x[::-1], 7.5, ramp)).max() == 0.0
        half = body_force(kind, x, x[::-1], 2.5, ramp)
        np.testing.assert_allclose(half, 0.5 * body_force(kind, x, x[::-1], 0.0, None), rtol=1e-14)
    assert force_field("none", None) is None
    f = force_field("upward", None, 0.1)
    np.testing.assert_allclose(f(np.zeros((2, 3, 2)), 0.0)[..., 1], 0.025)


def test_region_areas():
    d = crossslot_case(0.2).discretize()
    assert np.sum(d.wdet * region_mask(d, "square")) == pytest.approx(1.0, rel=1e-12)
    d = trislot_case(0.2).discretize()
    assert np.sum(d.wdet * region_mask(d, "disk")) == pytest.approx(math.pi / 4, rel=0.02)
    with pytest.raises(ValueError):
        region_mask(d, "ring")


def _set_velocity(d, fn):
    st = d.new_state(0.5)
    x2 = d.p2_points()
    v = fn(x2)
    st.u[: d.layout.n_p2] = v[:, 0]
    st.u[d.layout.n_p2: 2 * d.layout.n_p2] = v[:, 1]
    return st


def test_stream_function_poiseuille():
    d = channel_case(0.25, length=3.0, half_width=1.0).discretize()
    st = _set_velocity(d, lambda x: np.stack([1.5 * (1 - x[:, 1] ** 2), 0 * x[:, 0]], 1))
    psi = stream_function(d, st)
    y = d.mesh.nodes[:, 1]
    exact = 1.5 * (y + 1) - 0.5 * (y**3 + 1)  # zero on the lower wall, 2 on the upper
    lower = psi[np.argmin(y)]
    diff = np.abs(np.abs(psi - lower) - exact)
    assert diff.max() < 5e-3
    walls = d.mesh.boundary_nodes(lambda t: t.kind == "wall")
    assert np.abs(psi[walls] - lower).max() == pytest.approx(2.0, abs=1e-6)
    assert cases.count_closed_streamline_regions(d.mesh, psi) == 0


def test_stream_function_rejects_unbalanced_flux():
    d = channel_case(0.5, length=2.0, half_width=1.0).discretize()
    st = _set_velocity(d, lambda x: np.stack([1.0 + x[:, 0], 0 * x[:, 0]], 1))
    with pytest.raises(ValueError, match="inconsistent fluxes"):
        stream_function(d, st)


@pytest.fixture(scope="module")
def cross():
    return crossslot_case(0.2).discretize()


def test_stagnation_points_of_analytic_fields(cross):
    d = cross
    st = _set_velocity(d, lambda x: np.stack([-x[:, 0], x[:, 1]], 1))
    pts = stagnation_points(d, st)
    assert len(pts) == 1
    np.testing.assert_allclose(pts[0], [0.0, 0.0], atol=1e-10)
    # v = (x^2 - 1/4, -2xy) is solenoidal with zeros at (+-1/2, 0)
    st = _set_velocity(d, lambda x: np.stack([x[:, 0] ** 2 - 0.25, -2 * x[:, 0] * x[:, 1]], 1))
    pts = stagnation_points(d, st)
    assert len(pts) == 2
    np.testing.assert_allclose(pts[0], [-0.5, 0.0], atol=1e-9)
    np.testing.assert_allclose(pts[1], [0.5, 0.0], atol=1e-9)


def test_interstagnation_flux_and_vorticity(cross):
    d = cross
    st = _set_velocity(d, lambda x: np.stack([0 * x[:, 0], 1.0 + x[:, 0]], 1))
    # normal of the segment (-0.3,0) -> (0.3,0) is -y
    assert interstagnation_flux(d, st, [-0.3, 0.0], [0.3, 0.0]) == pytest.approx(-0.6, rel=1e-12)
    # omega = dv_y/dx - dv_x/dy = 1 on the unit square
    assert vorticity_integral(d, st, "square") == pytest.approx(1.0, rel=1e-12)


def test_mirrored_field_has_opposite_vorticity(cross):
    d = cross

    def field(x):
        return np.stack([np.sin(x[:, 1]) * np.cos(x[:, 0]), x[:, 0] ** 2 + np.cos(x[:, 1])], 1)

    def mirror(x):  # reflect about x = 0: (vx, vy)(x, y) -> (-vx, vy)(-x, y)
        xm = x * [-1.0, 1.0]
        return field(xm) * [-1.0, 1.0]

    a = vorticity_integral(d, _set_velocity(d, field), "square")
    b = vorticity_integral(d, _set_velocity(d, mirror), "square")
    assert abs(a) > 0.1
    assert abs(a + b) < 1e-10


def test_branch_labels():
    assert branch_label(-0.01) == "clockwise"
    assert branch_label(0.01) == "counter-clockwise"
    assert branch_label(1e-7) == "straight"


def test_field_export_is_deterministic():
    d = channel_case(0.5, length=2.0, half_width=1.0).discretize()
    st = d.new_state(0.3)
    x2 = d.p2_points()
    st.u[: d.layout.n_p2] = 1.5 * (1 - x2[:, 1] ** 2)
    a = field_export(d, st)
    b = field_export(d, FieldState(d.layout, st.u.copy(), 0.0, 0.3))
    assert a == b
    vtk, csv = a
    assert f"POINTS {d.mesh.n_nodes} double" in vtk
    assert f"CELLS {d.mesh.n_triangles} {4 * d.mesh.n_triangles}" in vtk
    for name in ("trace_A", "log10_trace_A", "det_A", "p", "psi", "omega"):
        assert f"SCALARS {name} double 1" in vtk
    assert csv.splitlines()[0] == "x,y,vx,vy,trace_A,log10_trace_A,det_A,p,psi,omega"
    assert len(csv.splitlines()) == d.mesh.n_nodes + 1


def test_mirror_map_reflects_solution_exactly(cross):
    d = cross
    mirror = cases.mirror_map(d, axis=0)
    rng = np.random.default_rng(5)
    u = rng.normal(size=d.layout.size)
    np.testing.assert_array_equal(mirror(mirror(u)), u)
    st = FieldState(d.layout, u, 0.0, 0.5)
    a = vorticity_integral(d, st, "square")
    b = vorticity_integral(d, FieldState(d.layout, mirror(u), 0.0, 0.5), "square")
    assert abs(a + b) < 1e-10
    # the mirrored field of a smooth velocity equals the pointwise reflection
    def field(x):
        return np.stack([np.sin(x[:, 1]) * np.cos(x[:, 0]) + x[:, 0], x[:, 0] ** 2 + np.cos(x[:, 1])], 1)
    st = _set_velocity(d, field)
    ref = _set_velocity(d, lambda x: field(x * [-1.0, 1.0]) * [-1.0, 1.0])
    n = 2 * d.layout.n_p2
    np.testing.assert_allclose(mirror(st.u)[:n], ref.u[:n], atol=1e-14)
    with pytest.raises(ValueError, match="mirror-symmetric"):
        cases.mirror_map(cases.cylinder_case(0.5).discretize(), axis=1)
