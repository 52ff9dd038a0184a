"""Numerical checks of the invisibility construction.

The main entry point is :func:`verify_invisibility`, which traces a set of
directions from the origin, classifies every trajectory and aggregates the
result into an :class:`InvisibilityReport`. The remaining functions check
the two geometric facts the construction rests on (the bisector identity
and the equal-angle property at the right focus), build deliberately
broken bodies as negative controls, and count connected components of the
rasterized body.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Union

import numpy as np
import shapely
from scipy import ndimage
from scipy.optimize import brentq

from .billiard import (DEFAULT_MAX_BOUNCES, Tolerances, TraceBatch, Trajectory,
                       trace2d_batch, trace3d_batch)
from .construction import (ArcKind, Body2D, Body3D, BodyKind, ConstructionParams,
                           body3d_contains, build_body2d, ellipse_point, hyperbola_point,
                           intersection_point_C)

Body = Union[Body2D, Body3D]

SAMPLINGS = ("uniform-grid-angles", "uniform-sphere", "stratified")
PERTURBATIONS = ("alpha", "shift", "rotate")
OUTLINE_SAMPLES = 256


class RayClass(enum.Enum):
    MISS = "miss"
    INVISIBLE = "invisible"
    DEVIATED = "deviated"
    STUCK = "stuck"
    GRAZING = "grazing"


class InconclusiveProbe(RuntimeError):
    pass


# --------------------------------------------------------------------------
# classification


def _angle_between(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    dot = np.einsum("ij,ij->i", u, v)
    if u.shape[1] == 2:
        cross = np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])
    else:
        cross = np.linalg.norm(np.cross(u, v), axis=1)
    return np.arctan2(cross, dot)


def _line_offset(points: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Distance of the origin from the lines ``points + s dirs``."""
    along = np.einsum("ij,ij->i", points, dirs)
    perp = points - along[:, None] * dirs
    return np.linalg.norm(perp, axis=1)


def classify_batch(batch: TraceBatch, tol: Tolerances, c: float):
    """Ray classes plus per-ray angular deviation and exit-line offset."""
    dev = _angle_between(batch.directions, batch.exit_directions)
    off = _line_offset(batch.exit_origins - batch.origins, batch.exit_directions)
    good = (dev <= tol.angle) & (off <= tol.offset * c)
    classes = np.where(
        batch.stuck, RayClass.STUCK.value,
        np.where(batch.grazing, RayClass.GRAZING.value,
                 np.where(batch.bounces == 0, RayClass.MISS.value,
                          np.where(good, RayClass.INVISIBLE.value, RayClass.DEVIATED.value))))
    return classes, dev, off


def classify_ray(traj: Trajectory, tol: Tolerances = Tolerances(), c: float = 1.0) -> RayClass:
    if traj.status.value == "stuck":
        return RayClass.STUCK
    if traj.grazing:
        return RayClass.GRAZING
    if traj.bounce_count == 0:
        return RayClass.MISS
    u, v = traj.direction[None], traj.exit_direction[None]
    dev = float(_angle_between(u, v)[0])
    off = float(_line_offset((traj.exit_origin - traj.origin)[None], v)[0])
    if dev <= tol.angle and off <= tol.offset * c:
        return RayClass.INVISIBLE
    return RayClass.DEVIATED


# --------------------------------------------------------------------------
# direction sampling


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def sample_directions(dim: int, sampling: str, n: int, seed: int = 0) -> np.ndarray:
    """Unit directions in 2D or 3D.

    ``uniform-grid-angles`` is deterministic (equally spaced angles from 0,
    or a Fibonacci lattice on the sphere); ``uniform-sphere`` draws i.i.d.
    uniform directions; ``stratified`` jitters one direction per
    equal-measure stratum. The random modes are fixed by ``seed``.
    """
    if sampling not in SAMPLINGS:
        raise ValueError(f"unknown sampling {sampling!r}; expected one of {SAMPLINGS}")
    if n < 1:
        raise ValueError("need at least one direction")
    rng = np.random.default_rng(seed)
    if dim == 2:
        if sampling == "uniform-grid-angles":
            th = 2 * np.pi * np.arange(n) / n
        elif sampling == "uniform-sphere":
            th = rng.uniform(0, 2 * np.pi, n)
        else:
            th = 2 * np.pi * (np.arange(n) + rng.uniform(size=n)) / n
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    if sampling == "uniform-grid-angles":
        return _fibonacci_sphere(n)
    if sampling == "uniform-sphere":
        d = rng.normal(size=(n, 3))
        return d / np.linalg.norm(d, axis=1, keepdims=True)
    z = 1.0 - 2.0 * (np.arange(n) + rng.uniform(size=n)) / n
    phi = rng.uniform(0, 2 * np.pi, n)
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


# --------------------------------------------------------------------------
# report


@dataclass
class InvisibilityReport:
    params: dict
    body: str
    sampling: str
    seed: int
    n: int
    counts: dict
    bounce_histogram: dict
    max_angle_deviation: float = 0.0
    max_line_offset: float = 0.0
    max_second_hit_error: float = 0.0
    delay_min: float = math.nan
    delay_max: float = math.nan
    expected_delay: float = math.nan
    wall_time: float = 0.0
    tolerances: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def delay_spread(self) -> float:
        if math.isnan(self.delay_min):
            return math.nan
        return self.delay_max - self.delay_min

    @property
    def passed(self) -> bool:
        return self.counts[RayClass.DEVIATED.value] == 0 and self.counts[RayClass.STUCK.value] == 0

    def summary(self) -> str:
        k = self.counts
        return (f"invisible: {k['invisible']}, miss: {k['miss']}, deviated: {k['deviated']}, "
                f"stuck: {k['stuck']}, grazing: {k['grazing']} (n={self.n})")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["delay_spread"] = self.delay_spread
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InvisibilityReport":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def _partial_stats(batch: TraceBatch, tol: Tolerances, c: float) -> dict:
    classes, dev, off = classify_batch(batch, tol, c)
    counts = {rc.value: int(np.sum(classes == rc.value)) for rc in RayClass}
    hist: dict[int, int] = {}
    for b, k in zip(*np.unique(batch.bounces, return_counts=True)):
        hist[int(b)] = int(k)
    bouncing = (batch.bounces > 0) & ~batch.grazing & ~batch.stuck
    three = (batch.bounces == 3) & ~batch.grazing
    out = {
        "counts": counts,
        "hist": hist,
        "max_dev": float(dev[bouncing].max()) if bouncing.any() else 0.0,
        "max_off": float(off[bouncing].max()) if bouncing.any() else 0.0,
        "max_second": 0.0,
        "delay_min": math.inf,
        "delay_max": -math.inf,
    }
    if three.any():
        h = batch.hit_points[three]
        o = batch.origins[three]
        second = np.linalg.norm(h[:, 1] - o, axis=1)
        out["max_second"] = float(np.max(np.abs(second - 2 * c)))
        path = (np.linalg.norm(h[:, 0] - o, axis=1) + np.linalg.norm(h[:, 1] - h[:, 0], axis=1)
                + np.linalg.norm(h[:, 2] - h[:, 1], axis=1))
        delay = path - np.linalg.norm(h[:, 2] - o, axis=1)
        out["delay_min"] = float(delay.min())
        out["delay_max"] = float(delay.max())
    return out


def _merge(parts: list[dict]) -> dict:
    acc = {"counts": {rc.value: 0 for rc in RayClass}, "hist": {}, "max_dev": 0.0, "max_off": 0.0,
           "max_second": 0.0, "delay_min": math.inf, "delay_max": -math.inf}
    for p in parts:
        for k, v in p["counts"].items():
            acc["counts"][k] += v
        for k, v in p["hist"].items():
            acc["hist"][k] = acc["hist"].get(k, 0) + v
        acc["max_dev"] = max(acc["max_dev"], p["max_dev"])
        acc["max_off"] = max(acc["max_off"], p["max_off"])
        acc["max_second"] = max(acc["max_second"], p["max_second"])
        acc["delay_min"] = min(acc["delay_min"], p["delay_min"])
        acc["delay_max"] = max(acc["delay_max"], p["delay_max"])
    return acc


def trace_directions(body: Body, dirs: np.ndarray, max_bounces: int = DEFAULT_MAX_BOUNCES,
                     tol: Tolerances = Tolerances()) -> TraceBatch:
    if isinstance(body, Body3D):
        return trace3d_batch(body, dirs, max_bounces, tol)
    return trace2d_batch(body, np.zeros_like(dirs), dirs, max_bounces, tol)


def _trace_chunk(body: Body, dirs: np.ndarray, max_bounces: int, tol: Tolerances) -> dict:
    return _partial_stats(trace_directions(body, dirs, max_bounces, tol), tol, body.params.c)


def body_name(body: Body) -> str:
    return body.kind.value if isinstance(body, Body3D) else "planar"


def verify_invisibility(body: Body, sampling: str = "uniform-grid-angles", n: int = 100_000,
                        tol: Tolerances = Tolerances(), seed: int = 0,
                        max_bounces: int = DEFAULT_MAX_BOUNCES, workers: int = 1,
                        chunk: int = 50_000, directions: np.ndarray | None = None,
                        config: dict | None = None) -> InvisibilityReport:
    """Trace ``n`` directions from the origin and aggregate their classes.

    ``directions`` overrides the sampler. With ``workers > 1`` chunks are
    traced in worker processes; the merged statistics do not depend on the
    schedule.
    """
    start = time.perf_counter()
    dim = 3 if isinstance(body, Body3D) else 2
    dirs = sample_directions(dim, sampling, n, seed) if directions is None else np.asarray(directions, float)
    chunks = [dirs[i:i + chunk] for i in range(0, len(dirs), chunk)]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_trace_chunk, [body] * len(chunks), chunks,
                                  [max_bounces] * len(chunks), [tol] * len(chunks)))
    else:
        parts = [_trace_chunk(body, ch, max_bounces, tol) for ch in chunks]
    acc = _merge(parts)
    has_delay = math.isfinite(acc["delay_min"])
    return InvisibilityReport(
        params=body.params.as_dict(),
        body=body_name(body),
        sampling=sampling if directions is None else "explicit",
        seed=seed,
        n=len(dirs),
        counts=acc["counts"],
        bounce_histogram={str(k): v for k, v in sorted(acc["hist"].items())},
        max_angle_deviation=acc["max_dev"],
        max_line_offset=acc["max_off"],
        max_second_hit_error=acc["max_second"],
        delay_min=acc["delay_min"] if has_delay else math.nan,
        delay_max=acc["delay_max"] if has_delay else math.nan,
        expected_delay=body.params.delay,
        wall_time=time.perf_counter() - start,
        tolerances=dataclasses.asdict(tol),
        config=dict(config or {}),
    )


def cone_directions(params: ConstructionParams, n: int, seed: int = 0, dim: int = 2) -> np.ndarray:
    """Directions from the origin whose canonical inclination is uniform in (k1, k2).

    In 3D the meridian-plane direction is spun to a uniform azimuth about
    the G1 axis.
    """
    rng = np.random.default_rng(seed)
    k = rng.uniform(params.k1, params.k2, n)
    th = np.arctan(k) - params.gamma
    if dim == 2:
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    phi = rng.uniform(0, 2 * np.pi, n)
    return np.stack([np.cos(th), np.sin(th) * np.cos(phi), np.sin(th) * np.sin(phi)], axis=-1)


# --------------------------------------------------------------------------
# bisector property and equal angles


def check_bisector_identity(a1: float, a2: float, b1: float, b2: float, f: float) -> float:
    """Residual (a1 + b1)(a2 - b2) - f^2 of the angle-bisector identity.

    ``a1, a2`` are the sides from the apex, ``b1, b2`` the two parts of the
    opposite side cut by the cevian of length ``f``.
    """
    lengths = (a1, a2, b1, b2, f)
    if min(lengths) <= 0:
        raise ValueError("all lengths must be positive")
    base = b1 + b2
    scale = max(lengths)
    if a1 + a2 - base <= 1e-12 * scale or abs(a1 - a2) >= base - 1e-12 * scale:
        raise ValueError("degenerate triangle: vertices are collinear")
    return (a1 + b1) * (a2 - b2) - f * f


def bisector_configuration(V, P, Q):
    """Lengths (a1, a2, b1, b2, f) for the true angle bisector from apex V onto PQ."""
    V, P, Q = (np.asarray(x, float) for x in (V, P, Q))
    a1, a2 = np.linalg.norm(P - V), np.linalg.norm(Q - V)
    D = P + a1 / (a1 + a2) * (Q - P)
    return a1, a2, float(np.linalg.norm(D - P)), float(np.linalg.norm(Q - D)), float(np.linalg.norm(D - V))


def cevian_from_identity(V, P, Q) -> np.ndarray:
    """Foot D on PQ at which (a1 + b1)(a2 - b2) = f^2, found by root bracketing.

    Side labels are chosen so that a1 <= a2. Raises if the identity has no
    unique root on the open segment.
    """
    V, P, Q = (np.asarray(x, float) for x in (V, P, Q))
    if np.linalg.norm(P - V) > np.linalg.norm(Q - V):
        P, Q = Q, P
    a1, a2 = np.linalg.norm(P - V), np.linalg.norm(Q - V)
    L = np.linalg.norm(Q - P)

    def phi(s):
        D = P + s * (Q - P)
        return (a1 + s * L) * (a2 - (1 - s) * L) - float(np.sum((D - V) ** 2))

    grid = np.linspace(0.0, 1.0, 2001)
    vals = np.array([phi(s) for s in grid])
    changes = np.flatnonzero(np.signbit(vals[:-1]) != np.signbit(vals[1:]))
    if changes.size != 1:
        raise ValueError(f"expected a single cevian root, found {changes.size}")
    j = changes[0]
    s = brentq(phi, grid[j], grid[j + 1], xtol=1e-15, rtol=1e-15)
    return P + s * (Q - P)


def _angle_at(vertex, p, q) -> float:
    u = np.asarray(p, float) - vertex
    v = np.asarray(q, float) - vertex
    return math.atan2(abs(u[0] * v[1] - u[1] * v[0]), float(u @ v))


def check_angle_equality(params: ConstructionParams, k: float) -> float:
    """|angle A F2 C - angle B F2 C| for the focal ray of inclination k."""
    if not (params.k_min < k < params.k_max):
        raise ValueError(f"k={k!r} outside (k_min, k_max) = ({params.k_min}, {params.k_max})")
    A = ellipse_point(params, k)
    B = hyperbola_point(params, k)
    C = intersection_point_C(params)
    F2 = params.F2
    return abs(_angle_at(F2, A, C) - _angle_at(F2, B, C))


# --------------------------------------------------------------------------
# negative controls


def perturbed_body(params: ConstructionParams, perturbation: str, magnitude: float) -> Body2D:
    """A deliberately broken copy of the planar body.

    ``alpha``: hyperbola arcs use alpha * (1 + magnitude);
    ``shift``: both k1-edges move ``magnitude * c`` along their normal, away
    from the gap between the two copies;
    ``rotate``: both hyperbola arcs turn by ``magnitude`` radians about the
    origin (mirror-symmetrically).
    """
    if perturbation not in PERTURBATIONS:
        raise ValueError(f"unknown perturbation {perturbation!r}; expected one of {PERTURBATIONS}")
    body = build_body2d(params)
    if magnitude == 0:
        return body
    arcs = []
    for arc in body.arcs:
        mirrored = arc.frame.mirror
        if perturbation == "alpha" and arc.kind is ArcKind.HYPERBOLA:
            arc = dataclasses.replace(arc, p=arc.p * (1.0 + magnitude))
        elif perturbation == "shift" and arc.label.endswith(":k1"):
            g = params.gamma
            nrm = np.array([-math.sin(g), math.cos(g)]) * magnitude * params.c
            if mirrored:
                nrm[1] = -nrm[1]
            arc = dataclasses.replace(arc, frame=dataclasses.replace(arc.frame, offset=tuple(nrm)))
        elif perturbation == "rotate" and arc.kind is ArcKind.HYPERBOLA:
            arc = dataclasses.replace(arc, frame=dataclasses.replace(arc.frame, gamma=arc.frame.gamma - magnitude))
        arcs.append(arc)
    return Body2D(tuple(arcs), params)


def negative_control(params: ConstructionParams, perturbation: str, magnitude: float,
                     n: int = 20_000, tol: Tolerances = Tolerances(), seed: int = 0) -> InvisibilityReport:
    """Verify a broken body on directions aimed into the mirror cones."""
    body = perturbed_body(params, perturbation, magnitude)
    d = cone_directions(params, n // 2, seed)
    dirs = np.concatenate([d, d * np.array([1.0, -1.0])])
    rep = verify_invisibility(body, n=len(dirs), tol=tol, seed=seed, directions=dirs,
                              config={"perturbation": perturbation, "magnitude": magnitude})
    return rep


# --------------------------------------------------------------------------
# connectivity


def _grid_edges(body: Body, resolution: int):
    """Cell boundaries along each axis of a padded bounding box."""
    section = body.section if isinstance(body, Body3D) else body
    pts = np.concatenate([arc.point(np.linspace(0, 1, 257)) for arc in section.arcs])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = 0.02 * float(np.max(hi - lo))
    lo, hi = lo - pad, hi + pad
    if isinstance(body, Body2D):
        ranges = [(lo[0], hi[0]), (lo[1], hi[1])]
    else:
        xi_max, eta_max = max(abs(lo[0]), abs(hi[0])), max(abs(lo[1]), abs(hi[1]))
        if body.kind is BodyKind.G1:
            ranges = [(lo[0], hi[0]), (-eta_max, eta_max), (-eta_max, eta_max)]
        else:
            ranges = [(-xi_max, xi_max), (-xi_max, xi_max), (-eta_max, eta_max)]
    return [np.linspace(a, b, resolution + 1) for a, b in ranges]


def _radial_range(lo_a, hi_a, lo_b, hi_b):
    """Min and max of hypot(a, b) over the rectangle [lo_a, hi_a] x [lo_b, hi_b]."""
    near_a = np.clip(0.0, lo_a, hi_a)
    near_b = np.clip(0.0, lo_b, hi_b)
    far_a = np.maximum(np.abs(lo_a), np.abs(hi_a))
    far_b = np.maximum(np.abs(lo_b), np.abs(hi_b))
    return np.hypot(near_a, near_b), np.hypot(far_a, far_b)


def rasterize(body: Body, resolution: int, mode: str = "occupancy") -> np.ndarray:
    """Boolean grid over a padded bounding box of the body.

    ``occupancy`` marks every cell that meets the body. Under the revolution
    map a box cell covers exactly an axis-aligned rectangle of the (xi, eta)
    section, so the test reduces to rectangle / section-polygon overlap.
    ``center`` marks cells whose centre is inside; it fragments acute
    corners into isolated cells and is kept for comparison only.
    """
    if resolution < 32:
        raise ValueError("resolution must be at least 32")
    edges = _grid_edges(body, resolution)
    if mode == "center":
        centres = [0.5 * (e[:-1] + e[1:]) for e in edges]
        mesh = np.stack(np.meshgrid(*centres, indexing="ij"), axis=-1)
        if isinstance(body, Body2D):
            return np.asarray(body.contains(mesh))
        return np.asarray(body3d_contains(body, mesh))
    if mode != "occupancy":
        raise ValueError(f"unknown raster mode {mode!r}")

    lo = [e[:-1] for e in edges]
    hi = [e[1:] for e in edges]
    if isinstance(body, Body2D):
        section = shapely.MultiPolygon([shapely.Polygon(body.outline(p, OUTLINE_SAMPLES)) for p in ("F", "F~")])
        shapely.prepare(section)
        L = np.meshgrid(*lo, indexing="ij")
        H = np.meshgrid(*hi, indexing="ij")
        return _overlaps(section, L[0], L[1], H[0], H[1])

    section = shapely.Polygon(body.section.outline("F", OUTLINE_SAMPLES))
    shapely.prepare(section)
    # the radial extent depends on two of the three cell indices only
    if body.kind is BodyKind.G1:
        A = np.meshgrid(lo[1], lo[2], indexing="ij"), np.meshgrid(hi[1], hi[2], indexing="ij")
        axial = (lo[0], hi[0])
    else:
        A = np.meshgrid(lo[0], lo[1], indexing="ij"), np.meshgrid(hi[0], hi[1], indexing="ij")
        axial = _radial_range(lo[2], hi[2], 0.0, 0.0)
    r_lo, r_hi = _radial_range(A[0][0], A[1][0], A[0][1], A[1][1])
    pairs, inv = np.unique(np.stack([r_lo.ravel(), r_hi.ravel()], axis=-1), axis=0, return_inverse=True)
    inv = inv.reshape(r_lo.shape)
    if body.kind is BodyKind.G1:
        XL, RL = np.meshgrid(axial[0], pairs[:, 0], indexing="ij")
        XH, RH = np.meshgrid(axial[1], pairs[:, 1], indexing="ij")
        table = _overlaps(section, XL, RL, XH, RH)          # (n_u, n_pairs)
        return table[:, inv]
    RL, WL = np.meshgrid(pairs[:, 0], axial[0], indexing="ij")
    RH, WH = np.meshgrid(pairs[:, 1], axial[1], indexing="ij")
    table = _overlaps(section, RL, WL, RH, WH)              # (n_pairs, n_w)
    return table[inv, :]


def _overlaps(section, xmin, ymin, xmax, ymax) -> np.ndarray:
    """Whether each rectangle shares interior area with the section."""
    bx0, by0, bx1, by1 = section.bounds
    cand = (xmax > bx0) & (xmin < bx1) & (ymax > by0) & (ymin < by1) & (xmax > xmin) & (ymax > ymin)
    out = np.zeros(cand.shape, dtype=bool)
    boxes = shapely.box(xmin[cand], ymin[cand], xmax[cand], ymax[cand])
    out[cand] = shapely.relate_pattern(section, boxes, "T********")
    return out


def connectivity_probe(body: Body, resolution: int = 128, mode: str = "occupancy") -> int:
    """Number of face-connected components of the rasterized body.

    For the planar section and G2 the two copies of F are separated by a
    slab of half-width min(eta) over F; once a cell is taller than that the
    raster can merge them, and the probe refuses to answer.
    """
    grid = rasterize(body, resolution, mode)
    if not grid.any():
        raise InconclusiveProbe("no interior cells at this resolution")
    if not (isinstance(body, Body3D) and body.kind is BodyKind.G1):
        section = body.section if isinstance(body, Body3D) else body
        half_gap = float(section.outline("F", OUTLINE_SAMPLES)[:, 1].min())
        eta_edges = _grid_edges(body, resolution)[-1 if isinstance(body, Body3D) else 1]
        cell = float(eta_edges[1] - eta_edges[0])
        if half_gap <= cell:
            raise InconclusiveProbe(
                f"cell height {cell:.3g} does not resolve the gap 2*{half_gap:.3g} between the copies")
    _, count = ndimage.label(grid)
    return int(count)
