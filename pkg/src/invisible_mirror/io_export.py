"""Export: SVG cross-sections with ray overlays, revolved triangle meshes
(OBJ / binary STL), and verification reports as JSON text.

Axis conventions for meshes: G1 revolves the section about the xi-axis,
which becomes mesh +X; G2 revolves it about the eta-axis, which becomes
mesh +Z. The same note is written into every file header.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .billiard import Trajectory
from .construction import ArcKind, BoundaryArc, Body2D, Body3D, BodyKind, intersection_point_C
from .verify import InvisibilityReport

MAX_ARC_POINTS = 2 ** 12

AXIS_NOTE = {
    BodyKind.G1: "G1: section revolved about the xi-axis = mesh +X; (xi, eta) -> (x, eta cos phi, eta sin phi)",
    BodyKind.G2: "G2: section revolved about the eta-axis = mesh +Z; (xi, eta) -> (xi cos phi, xi sin phi, +-eta)",
}


# --------------------------------------------------------------------------
# adaptive sampling


def adaptive_sample(curve: Callable[[np.ndarray], np.ndarray], tol: float,
                    max_points: int = MAX_ARC_POINTS, initial: int = 9) -> tuple[np.ndarray, np.ndarray]:
    """Parameters in [0, 1] and points of a polyline within ``tol`` of ``curve``.

    Intervals are halved while the curve midpoint sits farther than ``tol``
    from the chord, up to ``max_points`` points in total.
    """
    u = np.linspace(0.0, 1.0, initial)
    pts = curve(u)
    while len(u) < max_points:
        um = 0.5 * (u[:-1] + u[1:])
        pm = curve(um)
        err = _chord_distance(pts[:-1], pts[1:], pm)
        split = err > tol
        if not split.any():
            break
        budget = max_points - len(u)
        if split.sum() > budget:
            keep = np.argsort(-err)[:budget]
            split = np.zeros_like(split)
            split[keep] = True
        u = np.sort(np.concatenate([u, um[split]]))
        pts = curve(u)
    return u, pts


def _chord_distance(p0, p1, q) -> np.ndarray:
    e = p1 - p0
    L = np.linalg.norm(e, axis=1)
    w = q - p0
    cross = np.abs(e[:, 0] * w[:, 1] - e[:, 1] * w[:, 0])
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.where(L > 0, cross / L, np.linalg.norm(w, axis=1))
    return d


def sample_arc(arc: BoundaryArc, tol: float) -> np.ndarray:
    if arc.kind is ArcKind.SEGMENT:
        return arc.endpoints()
    return adaptive_sample(arc.point, tol)[1]


def section_profile(section: Body2D, prefix: str = "F", tol: float = 1e-3) -> np.ndarray:
    """Closed boundary loop of one copy, adaptively sampled (last point not repeated)."""
    ell = section.arcs[section.arc_index(f"{prefix}:ellipse")]
    hyp = section.arcs[section.arc_index(f"{prefix}:hyperbola")]
    e = sample_arc(ell, tol)
    h = sample_arc(hyp, tol)[::-1]
    return np.concatenate([e, h])


# --------------------------------------------------------------------------
# meshes


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray
    groups: list = field(default_factory=list)   # (name, first_face, stop_face)
    header: str = ""

    def edges(self) -> dict:
        e = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        keys, counts = np.unique(e, axis=0, return_counts=True)
        return {tuple(k): int(n) for k, n in zip(keys, counts)}

    def is_watertight(self) -> bool:
        return all(n == 2 for n in self.edges().values())

    def euler_characteristic(self) -> int:
        return len(self.vertices) - len(self.edges()) + len(self.faces)

    def component_count(self) -> int:
        f = self.faces
        rows = np.concatenate([f[:, 0], f[:, 1], f[:, 2]])
        cols = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
        adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(self.vertices),) * 2)
        return int(connected_components(adj, directed=False)[0])

    def face_normals(self) -> np.ndarray:
        v = self.vertices[self.faces]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def signed_volume(self, faces: Optional[np.ndarray] = None) -> float:
        v = self.vertices[self.faces if faces is None else faces]
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)


def _revolve_loop(profile: np.ndarray, segments: int, embed) -> tuple[np.ndarray, np.ndarray]:
    m = len(profile)
    phi = 2 * np.pi * np.arange(segments) / segments
    verts = embed(profile[:, None, 0], profile[:, None, 1], np.cos(phi)[None], np.sin(phi)[None])
    verts = verts.reshape(-1, 3)
    i = np.arange(m)[:, None]
    j = np.arange(segments)[None, :]
    a = i * segments + j
    b = ((i + 1) % m) * segments + j
    c = ((i + 1) % m) * segments + (j + 1) % segments
    d = i * segments + (j + 1) % segments
    faces = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3),
                            np.stack([a, c, d], -1).reshape(-1, 3)])
    # outward winding: positive enclosed volume
    v = verts[faces]
    if np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() < 0:
        faces = faces[:, ::-1]
    return verts, faces


def _vertex_normals(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    v = verts[faces]
    fn = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])   # area weighted
    acc = np.zeros_like(verts)
    for k in range(3):
        np.add.at(acc, faces[:, k], fn)
    return acc / np.linalg.norm(acc, axis=1, keepdims=True)


def revolve_mesh(body: Body3D, segments: int = 64, chord_tol: float = 1e-3) -> TriangleMesh:
    """Triangulated boundary of G1 (one closed torus) or G2 (two closed tori)."""
    if segments < 16:
        raise ValueError("segments must be at least 16")
    c = body.params.c
    profile = section_profile(body.section, "F", chord_tol * c)
    if body.kind is BodyKind.G1:
        parts = [("G1", lambda xi, eta, cp, sp: np.stack(np.broadcast_arrays(xi, eta * cp, eta * sp), -1))]
    else:
        parts = [("G2_upper", lambda xi, eta, cp, sp: np.stack(np.broadcast_arrays(xi * cp, xi * sp, eta), -1)),
                 ("G2_lower", lambda xi, eta, cp, sp: np.stack(np.broadcast_arrays(xi * cp, xi * sp, -eta), -1))]
    verts, faces, groups = [], [], []
    offset = nf = 0
    for name, embed in parts:
        v, f = _revolve_loop(profile, segments, embed)
        verts.append(v)
        faces.append(f + offset)
        groups.append((name, nf, nf + len(f)))
        offset += len(v)
        nf += len(f)
    V = np.concatenate(verts)
    F = np.concatenate(faces)
    mesh = TriangleMesh(V, F, _vertex_normals(V, F), groups, AXIS_NOTE[body.kind])
    if np.any(mesh.triangle_areas() <= 1e-12 * c * c):
        raise ValueError("degenerate triangles in revolved mesh")
    return mesh


def azimuthal_chord_error(mesh: TriangleMesh, axis: Sequence[float]) -> float:
    """Largest gap between an azimuthal edge midpoint and its circle of revolution."""
    axis = np.asarray(axis, dtype=float)
    e = np.array(list(mesh.edges().keys()))
    p, q = mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]]
    rp = np.linalg.norm(p - np.outer(p @ axis, axis), axis=1)
    rq = np.linalg.norm(q - np.outer(q @ axis, axis), axis=1)
    same = np.isclose(rp, rq, rtol=0, atol=1e-12) & np.isclose(p @ axis, q @ axis, rtol=0, atol=1e-12)
    m = 0.5 * (p[same] + q[same])
    rm = np.linalg.norm(m - np.outer(m @ axis, axis), axis=1)
    return float(np.max(rp[same] - rm))


# --------------------------------------------------------------------------
# OBJ / STL


def write_obj(mesh: TriangleMesh) -> bytes:
    if len(mesh.faces) == 0:
        raise ValueError("empty mesh")
    out = io.StringIO()
    for line in mesh.header.splitlines():
        out.write(f"# {line}\n")
    for x, y, z in mesh.vertices:
        out.write(f"v {x:.12g} {y:.12g} {z:.12g}\n")
    for x, y, z in mesh.normals:
        out.write(f"vn {x:.12g} {y:.12g} {z:.12g}\n")
    groups = mesh.groups or [("mesh", 0, len(mesh.faces))]
    for name, lo, hi in groups:
        out.write(f"o {name}\n")
        for a, b, c in mesh.faces[lo:hi] + 1:
            out.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")
    return out.getvalue().encode("ascii")


def read_obj(data: bytes) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Vertices, 0-based faces and object names from an OBJ written by write_obj."""
    verts, faces, names = [], [], []
    for line in data.decode("ascii").splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
        elif parts[0] == "o":
            names.append(parts[1])
    return np.array(verts), np.array(faces, dtype=int), names


_STL_DTYPE = np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])


def write_stl(mesh: TriangleMesh) -> bytes:
    if len(mesh.faces) == 0:
        raise ValueError("empty mesh")
    header = (mesh.header.splitlines()[0] if mesh.header else "invisible_mirror mesh").encode("ascii")
    header = header[:80].ljust(80, b" ")
    rec = np.zeros(len(mesh.faces), dtype=_STL_DTYPE)
    rec["normal"] = mesh.face_normals()
    rec["v"] = mesh.vertices[mesh.faces]
    return header + struct.pack("<I", len(mesh.faces)) + rec.tobytes()


def read_stl(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Face normals (n, 3) and triangle corners (n, 3, 3) of a binary STL."""
    (count,) = struct.unpack_from("<I", data, 80)
    rec = np.frombuffer(data, dtype=_STL_DTYPE, count=count, offset=84)
    return rec["normal"].astype(float), rec["v"].astype(float)


# --------------------------------------------------------------------------
# reports


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def write_report(report: InvisibilityReport) -> bytes:
    return (json.dumps(_jsonable(report.to_dict()), indent=2) + "\n").encode("utf-8")


def read_report(data: bytes) -> InvisibilityReport:
    d = json.loads(data.decode("utf-8"))
    for key in ("delay_min", "delay_max", "expected_delay"):
        if d.get(key) is None:
            d[key] = math.nan
    return InvisibilityReport.from_dict(d)


# --------------------------------------------------------------------------
# SVG


@dataclass
class PlotSpec:
    view_box: Optional[tuple[float, float, float, float]] = None   # (x, y, w, h) in SVG units
    margin: float = 0.06
    width_px: int = 900
    styles: dict = field(default_factory=lambda: {
        "ellipse": "stroke:#1f4e9c;stroke-width:{w};fill:none",
        "hyperbola": "stroke:#9c1f4e;stroke-width:{w};fill:none",
        "segment": "stroke:#222222;stroke-width:{w};fill:none",
        "ray": "stroke:#d62728;stroke-width:{w};fill:none;stroke-linejoin:round",
    })
    show_foci: bool = True
    show_points: bool = True


def _body_extent(body: Body2D) -> tuple[np.ndarray, np.ndarray]:
    pts = np.concatenate([arc.point(np.linspace(0, 1, 129)) for arc in body.arcs] + [np.zeros((1, 2))])
    return pts.min(axis=0), pts.max(axis=0)


def _exit_point(p: np.ndarray, d: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Point where the ray p + s d leaves the box [lo, hi], pulled slightly inside."""
    ts = []
    for k in range(2):
        if d[k] > 0:
            ts.append((hi[k] - p[k]) / d[k])
        elif d[k] < 0:
            ts.append((lo[k] - p[k]) / d[k])
    s = max(min(ts), 0.0)
    return p + 0.999 * s * d


def _fmt(points: np.ndarray) -> list[tuple[float, float]]:
    # SVG y grows downward
    return [(float(x), float(-y)) for x, y in points]


def render_svg(body: Body2D, rays: Sequence[Trajectory] = (), spec: Optional[PlotSpec] = None) -> str:
    if not body.arcs:
        raise ValueError("empty body")
    spec = spec or PlotSpec()
    lo, hi = _body_extent(body)
    size = hi - lo
    pad = spec.margin * float(size.max())
    lo, hi = lo - pad, hi + pad
    if spec.view_box is None:
        vb = (float(lo[0]), float(-hi[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1]))
    else:
        vb = spec.view_box
        lo = np.array([vb[0], -(vb[1] + vb[3])])
        hi = np.array([vb[0] + vb[2], -vb[1]])
    view = max(vb[2], vb[3])
    tol = 1e-3 * view
    w = 0.003 * view
    height_px = int(round(spec.width_px * vb[3] / vb[2]))

    out = io.StringIO()
    out.write('<?xml version="1.0" encoding="UTF-8"?>\n')
    out.write(f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{spec.width_px}" '
              f'height="{height_px}" viewBox="{vb[0]:.6f} {vb[1]:.6f} {vb[2]:.6f} {vb[3]:.6f}">\n')
    out.write(f'<defs><marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" markerWidth="6" '
              f'markerHeight="6" orient="auto-start-reverse"><path d="M 0 0 L 10 5 L 0 10 z" '
              f'fill="#d62728"/></marker></defs>\n')
    out.write('<g id="body">\n')
    for arc in body.arcs:
        pts = _fmt(sample_arc(arc, tol))
        d = "M " + " L ".join(f"{x:.6f} {y:.6f}" for x, y in pts)
        style = spec.styles[arc.kind.value].format(w=f"{w:.6g}")
        out.write(f'<path class="arc {arc.kind.value}" data-arc="{escape(arc.label)}" '
                  f'style="{style}" d="{d}"/>\n')
    out.write('</g>\n')

    if rays:
        out.write('<g id="rays">\n')
        style = spec.styles["ray"].format(w=f"{0.6 * w:.6g}")
        for traj in rays:
            verts = traj.vertices()
            end = _exit_point(traj.exit_origin, traj.exit_direction, lo, hi)
            pts = _fmt(np.vstack([verts, end]))
            txt = " ".join(f"{x:.6f},{y:.6f}" for x, y in pts)
            out.write(f'<polyline class="ray" style="{style}" marker-end="url(#arrow)" points="{txt}"/>\n')
        out.write('</g>\n')

    if spec.show_foci or spec.show_points:
        out.write('<g id="annotations" font-size="{:.4g}" font-family="sans-serif">\n'.format(4 * w * 3))
        marks = []
        if spec.show_foci:
            marks.append(("O", np.zeros(2)))
            for arc in body.arcs[:8]:
                if arc.label in ("F:ellipse", "F~:ellipse"):
                    marks.append(("F2" if not arc.frame.mirror else "F2~",
                                  arc.frame.forward(body.params.F2)))
        if spec.show_points:
            for arc in body.arcs[:8]:
                if arc.kind is ArcKind.SEGMENT:
                    a, b = arc.endpoints()
                    tag = arc.label.split(":")[1]
                    marks += [(f"A_{tag}", a), (f"B_{tag}", b)]
            C = body.arcs[0].frame.forward(intersection_point_C(body.params))
            marks.append(("C", C))
        for name, p in marks:
            (x, y), = _fmt(p[None])
            out.write(f'<circle cx="{x:.6f}" cy="{y:.6f}" r="{1.5 * w:.6g}" fill="#000"/>'
                      f'<text x="{x + 2 * w:.6f}" y="{y - 2 * w:.6f}">{escape(name)}</text>\n')
        out.write('</g>\n')
    out.write('</svg>\n')
    return out.getvalue()


def svg_coordinates(svg: str) -> dict:
    """Parse an SVG written by render_svg back into coordinate arrays."""
    import xml.etree.ElementTree as ET
    ns = {"s": "http://www.w3.org/2000/svg"}
    root = ET.fromstring(svg)
    vb = tuple(float(v) for v in root.attrib["viewBox"].split())
    arcs = []
    for p in root.iterfind(".//s:g[@id='body']/s:path", ns):
        nums = [float(t) for t in p.attrib["d"].replace("M", " ").replace("L", " ").split()]
        arcs.append(np.array(nums).reshape(-1, 2))
    rays = []
    for p in root.iterfind(".//s:polyline", ns):
        rays.append(np.array([[float(v) for v in pair.split(",")] for pair in p.attrib["points"].split()]))
    marks = [(float(c.attrib["cx"]), float(c.attrib["cy"])) for c in root.iterfind(".//s:circle", ns)]
    return {"view_box": vb, "arcs": arcs, "rays": rays, "marks": np.array(marks).reshape(-1, 2)}
