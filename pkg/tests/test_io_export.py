import json
import math
import struct
import xml.etree.ElementTree as ET

import numpy as np
import pytest
import shapely
from hypothesis import given, settings

from invisible_mirror.billiard import trace2d, trace2d_batch
from invisible_mirror.construction import (ArcKind, Body2D, Membership, body3d_contains, build_body2d,
                                           build_body3d, derive_params)
from invisible_mirror.geom2d import Ray2
from invisible_mirror.io_export import (MAX_ARC_POINTS, PlotSpec, TriangleMesh, adaptive_sample,
                                        azimuthal_chord_error, read_obj, read_report, read_stl,
                                        render_svg, revolve_mesh, svg_coordinates, write_obj,
                                        write_report, write_stl)
from invisible_mirror.verify import cone_directions, verify_invisibility

from helpers import DEFAULT, valid_tuples


@pytest.fixture(scope="module")
def params():
    return derive_params(**DEFAULT)


@pytest.fixture(scope="module")
def body(params):
    return build_body2d(params)


@pytest.fixture(scope="module")
def g1_mesh(params):
    return revolve_mesh(build_body3d(params, "g1"), 64)


@pytest.fixture(scope="module")
def g2_mesh(params):
    return revolve_mesh(build_body3d(params, "g2"), 64)


def _chord_dist(p0, p1, q):
    e = p1 - p0
    w = q - p0
    return np.abs(e[:, 0] * w[:, 1] - e[:, 1] * w[:, 0]) / np.linalg.norm(e, axis=1)


# --------------------------------------------------------------------------
# sampling


@pytest.mark.parametrize("tol", [1e-2, 1e-4, 1e-6])
def test_adaptive_sampling_chord_error(body, tol):
    for arc in body.arcs:
        if arc.kind is ArcKind.SEGMENT:
            continue
        u, pts = adaptive_sample(arc.point, tol)
        mid = arc.point(0.5 * (u[:-1] + u[1:]))
        assert np.all(_chord_dist(pts[:-1], pts[1:], mid) < tol)
        assert len(u) <= MAX_ARC_POINTS


def test_adaptive_sampling_cap():
    circle = lambda u: np.column_stack([np.cos(2 * np.pi * u), np.sin(2 * np.pi * u)])
    u, _ = adaptive_sample(circle, 1e-15)
    assert len(u) == MAX_ARC_POINTS
    assert np.all(np.diff(u) > 0)


# --------------------------------------------------------------------------
# meshes


def test_g1_mesh_topology(g1_mesh):
    assert g1_mesh.is_watertight()
    assert g1_mesh.euler_characteristic() == 0
    assert g1_mesh.component_count() == 1
    assert g1_mesh.signed_volume() > 0
    assert np.all(g1_mesh.faces >= 0) and np.all(g1_mesh.faces < len(g1_mesh.vertices))


def test_g2_mesh_topology(g2_mesh):
    assert g2_mesh.is_watertight()
    assert g2_mesh.component_count() == 2
    assert [g[0] for g in g2_mesh.groups] == ["G2_upper", "G2_lower"]
    for _, lo, hi in g2_mesh.groups:
        part = TriangleMesh(g2_mesh.vertices, g2_mesh.faces[lo:hi], g2_mesh.normals)
        assert part.is_watertight()
        assert part.signed_volume() > 0
    assert np.all(g2_mesh.vertices[g2_mesh.faces[: g2_mesh.groups[0][2]]][..., 2] > 0)


@pytest.mark.parametrize("kind", ["g1", "g2"])
def test_mesh_vertices_on_boundary(params, kind):
    chord_tol = 1e-3
    b = build_body3d(params, kind)
    mesh = revolve_mesh(b, 32, chord_tol)
    q = b.meridian_coords(mesh.vertices)
    cls = b.section.classify(q, 2 * chord_tol * params.c)
    assert np.all(cls == Membership.BOUNDARY)


@pytest.mark.parametrize("kind", ["g1", "g2"])
def test_mesh_outward_normals(params, kind):
    b = build_body3d(params, kind)
    mesh = revolve_mesh(b, 256, 1e-4)
    cen = mesh.vertices[mesh.faces].mean(axis=1)
    n = mesh.face_normals()
    # step past the azimuthal sag of the centroids (about 2e-4 c here)
    h = 1e-3 * params.c
    assert azimuthal_chord_error(mesh, b.axis) < 0.5 * h
    assert not body3d_contains(b, cen + h * n).any()
    assert body3d_contains(b, cen - h * n).all()
    assert np.allclose(np.linalg.norm(mesh.normals, axis=1), 1)


def test_mesh_rejects_few_segments(params):
    with pytest.raises(ValueError):
        revolve_mesh(build_body3d(params, "g1"), 15)


def test_chord_error_convergence(params):
    b = build_body3d(params, "g1")
    errs = [azimuthal_chord_error(revolve_mesh(b, s), (1, 0, 0)) for s in (32, 64, 128)]
    # second order in the segment count: doubling gives a factor near 1/4
    assert errs[1] <= 0.5 * errs[0] and errs[2] <= 0.5 * errs[1]
    assert errs[1] / errs[0] == pytest.approx(0.25, abs=0.01)


# --------------------------------------------------------------------------
# OBJ / STL


def _one_triangle():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    return TriangleMesh(v, np.array([[0, 1, 2]]), np.tile([0.0, 0, 1], (3, 1)))


def test_stl_single_triangle():
    data = write_stl(_one_triangle())
    assert len(data) == 80 + 4 + 50 == 134
    assert struct.unpack_from("<I", data, 80)[0] == 1
    normals, tris = read_stl(data)
    assert np.allclose(normals, [[0, 0, 1]])
    assert np.allclose(tris[0], _one_triangle().vertices)


def test_stl_byte_count(g1_mesh, g2_mesh):
    for m in (g1_mesh, g2_mesh):
        data = write_stl(m)
        n = len(m.faces)
        assert len(data) == 84 + 50 * n
        assert struct.unpack_from("<I", data, 80)[0] == n
        normals, tris = read_stl(data)
        assert np.all(np.isfinite(tris)) and np.all(np.isfinite(normals))
        assert np.allclose(tris, m.vertices[m.faces], atol=1e-6)


def test_obj_roundtrip(g2_mesh):
    data = write_obj(g2_mesh)
    text = data.decode("ascii")
    assert text.startswith("# G2")
    v, f, names = read_obj(data)
    assert names == ["G2_upper", "G2_lower"]
    assert np.array_equal(f, g2_mesh.faces)
    rel = np.abs(v - g2_mesh.vertices) / np.maximum(np.abs(g2_mesh.vertices), 1e-300)
    assert np.all((rel < 1e-9) | (np.abs(v - g2_mesh.vertices) < 1e-12))
    assert text.count("\nvn ") == len(g2_mesh.vertices)
    # 1-based indices
    faces = [l for l in text.splitlines() if l.startswith("f ")]
    assert min(int(t.split("//")[0]) for l in faces for t in l.split()[1:]) == 1


def test_empty_mesh_rejected():
    empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int), np.zeros((0, 3)))
    with pytest.raises(ValueError):
        write_obj(empty)
    with pytest.raises(ValueError):
        write_stl(empty)


def test_exports_bit_stable(params):
    b = build_body3d(params, "g1")
    assert write_stl(revolve_mesh(b, 32)) == write_stl(revolve_mesh(b, 32))
    assert write_obj(revolve_mesh(b, 32)) == write_obj(revolve_mesh(b, 32))


@settings(max_examples=10, deadline=None)
@given(valid_tuples())
def test_g1_mesh_random_tuples(tup):
    m = revolve_mesh(build_body3d(derive_params(*tup), "g1"), 16)
    assert m.is_watertight() and m.euler_characteristic() == 0


# --------------------------------------------------------------------------
# reports


def test_report_roundtrip(body):
    rep = verify_invisibility(body, n=2000, config={"note": "x"})
    data = write_report(rep)
    back = read_report(data)
    assert back.counts == rep.counts
    assert back.bounce_histogram == rep.bounce_histogram
    assert back.config == {"note": "x"}
    assert back.max_angle_deviation == rep.max_angle_deviation
    assert list(json.loads(data)) == list(rep.to_dict())
    assert write_report(read_report(data)) == data


def test_report_nan_is_null(body):
    rep = verify_invisibility(body, n=1)
    data = write_report(rep)
    assert json.loads(data)["delay_min"] is None
    assert math.isnan(read_report(data).delay_min)


# --------------------------------------------------------------------------
# SVG


def test_svg_body_only(body):
    svg = render_svg(body)
    root = ET.fromstring(svg)
    assert root.attrib["version"] == "1.1"
    parsed = svg_coordinates(svg)
    assert len(parsed["arcs"]) == 8
    assert parsed["rays"] == []


def test_svg_trajectory(params, body):
    th = math.atan(0.8) - params.gamma
    tr = trace2d(body, Ray2.from_angle((0, 0), th))
    svg = render_svg(body, [tr])
    parsed = svg_coordinates(svg)
    assert len(parsed["rays"]) == 1
    ray = parsed["rays"][0]
    assert ray.shape == (5, 2)
    assert np.allclose(ray[1], tr.hits[0].point * [1, -1], atol=1e-6)
    assert "marker-end" in svg


def test_svg_coordinates_in_view_box(params, body):
    d = cone_directions(params, 20, seed=3)
    d = np.concatenate([d, d * [1, -1], [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.3]]])
    batch = trace2d_batch(body, np.zeros_like(d), d)
    svg = render_svg(body, [batch.trajectory(i) for i in range(len(d))])
    parsed = svg_coordinates(svg)
    x, y, w, h = parsed["view_box"]
    pts = np.concatenate(parsed["arcs"] + parsed["rays"] + [parsed["marks"]])
    assert np.all(np.isfinite(pts))
    assert np.all((pts[:, 0] >= x) & (pts[:, 0] <= x + w) & (pts[:, 1] >= y) & (pts[:, 1] <= y + h))


def test_svg_arc_chord_tolerance(body):
    svg = render_svg(body)
    parsed = svg_coordinates(svg)
    _, _, w, h = parsed["view_box"]
    tol = 1e-3 * max(w, h)
    for arc, pts in zip(body.arcs, parsed["arcs"]):
        if arc.kind is ArcKind.SEGMENT:
            assert len(pts) == 2
            continue
        # dense true curve against the written polyline, in unflipped coordinates
        line = shapely.LineString(pts * [1, -1])
        true = shapely.points(arc.point(np.linspace(0, 1, 20001)))
        # written coordinates carry 6 decimals
        assert shapely.distance(line, true).max() < tol + 1e-6


def test_svg_empty_body(params):
    with pytest.raises(ValueError):
        render_svg(Body2D((), params))


def test_svg_view_box_contains_body(body):
    parsed = svg_coordinates(render_svg(body, spec=PlotSpec(margin=0.1)))
    x, y, w, h = parsed["view_box"]
    pts = np.concatenate(parsed["arcs"])
    assert pts[:, 0].min() > x and pts[:, 0].max() < x + w
    assert pts[:, 1].min() > y and pts[:, 1].max() < y + h
