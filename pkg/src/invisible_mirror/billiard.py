"""Billiard tracing in the exterior of the mirror body.

``trace2d_batch`` is the workhorse: it advances many rays at once, one
reflection per sweep over the boundary arcs. ``trace3d_batch`` reduces a
ray from the origin of a solid of revolution to its meridian plane (the
origin lies on the axis, so the ray never leaves that plane) and lifts the
planar result back. ``trace3d_oracle`` is an unrelated slow path that
root-brackets the implicit boundary functions of the solid along the ray;
it exists to check the reduction.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .construction import Body2D, Body3D, BodyKind
from .geom2d import Ray2, reflect_many

DEFAULT_MAX_BOUNCES = 8


@dataclass(frozen=True)
class Tolerances:
    """Numerical slack for tracing and classification.

    Lengths are relative to the body scale ``c``.
    """

    eps: float = 1e-9           # minimum advance after a reflection
    angle: float = 1e-9         # exit vs entry direction, radians
    offset: float = 1e-9        # distance of the origin from the exit line
    band: float = 1e-12         # arc-end / membership band
    tie: float = 1e-12          # two arcs hit at the same t

    def __post_init__(self):
        for name in ("eps", "angle", "offset", "band", "tie"):
            if not getattr(self, name) > 0:
                raise ValueError(f"tolerance {name} must be positive")


class Status(enum.Enum):
    EXITED = "exited"
    STUCK = "stuck"


@dataclass(frozen=True)
class HitRecord:
    arc: str
    point: np.ndarray
    normal: np.ndarray
    t: float
    grazing: bool = False


@dataclass(frozen=True)
class Trajectory:
    origin: np.ndarray
    direction: np.ndarray
    hits: tuple[HitRecord, ...]
    exit_origin: np.ndarray
    exit_direction: np.ndarray
    status: Status

    @property
    def bounce_count(self) -> int:
        return len(self.hits)

    @property
    def grazing(self) -> bool:
        return any(h.grazing for h in self.hits)

    def vertices(self) -> np.ndarray:
        return np.array([self.origin] + [h.point for h in self.hits])


@dataclass
class TraceBatch:
    """Traced rays in array form; hit slots past ``bounces`` are NaN / -1."""

    origins: np.ndarray
    directions: np.ndarray
    bounces: np.ndarray
    hit_points: np.ndarray
    hit_normals: np.ndarray
    hit_arcs: np.ndarray
    hit_t: np.ndarray
    grazing: np.ndarray
    stuck: np.ndarray
    exit_origins: np.ndarray
    exit_directions: np.ndarray
    arc_labels: tuple[str, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.bounces)

    def trajectory(self, i: int) -> Trajectory:
        hits = tuple(
            HitRecord(self.arc_labels[self.hit_arcs[i, j]], self.hit_points[i, j].copy(),
                      self.hit_normals[i, j].copy(), float(self.hit_t[i, j]),
                      bool(self.grazing[i]) and j == self.bounces[i] - 1)
            for j in range(self.bounces[i]))
        status = Status.STUCK if self.stuck[i] else Status.EXITED
        return Trajectory(self.origins[i].copy(), self.directions[i].copy(), hits,
                          self.exit_origins[i].copy(), self.exit_directions[i].copy(), status)


def trace2d_batch(body: Body2D, origins, directions, max_bounces: int = DEFAULT_MAX_BOUNCES,
                  tol: Tolerances = Tolerances()) -> TraceBatch:
    origins = np.array(origins, dtype=float).reshape(-1, 2)
    dirs = np.array(directions, dtype=float).reshape(-1, 2)
    if max_bounces < 1:
        raise ValueError("max_bounces must be at least 1")
    n = len(origins)
    c = body.params.c
    eps, band, tie = tol.eps * c, tol.band, tol.tie * c

    pos = origins.copy()
    cur = dirs.copy()
    bounces = np.zeros(n, dtype=int)
    hit_points = np.full((n, max_bounces, 2), np.nan)
    hit_normals = np.full((n, max_bounces, 2), np.nan)
    hit_t = np.full((n, max_bounces), np.nan)
    hit_arcs = np.full((n, max_bounces), -1, dtype=int)
    grazing = np.zeros(n, dtype=bool)
    stuck = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)

    for step in range(max_bounces + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        o, d = pos[idx], cur[idx]
        best_t = np.full(idx.size, np.inf)
        second_t = np.full(idx.size, np.inf)
        best_arc = np.full(idx.size, -1)
        best_p = np.zeros((idx.size, 2))
        best_n = np.zeros((idx.size, 2))
        best_g = np.zeros(idx.size, dtype=bool)
        for j, arc in enumerate(body.arcs):
            t, p, nrm, g = arc.intersect(o, d, eps, band)
            closer = t < best_t
            second_t = np.where(closer, best_t, np.minimum(second_t, t))
            best_t = np.where(closer, t, best_t)
            best_arc = np.where(closer, j, best_arc)
            best_p[closer] = p[closer]
            best_n[closer] = nrm[closer]
            best_g = np.where(closer, g, best_g)

        hit = np.isfinite(best_t)
        active[idx[~hit]] = False
        if step == max_bounces:
            stuck[idx[hit]] = True
            active[idx[hit]] = False
            break
        h = idx[hit]
        corner = (second_t[hit] - best_t[hit]) < tie
        grazing[h] |= best_g[hit] | corner
        hit_points[h, step] = best_p[hit]
        hit_normals[h, step] = best_n[hit]
        hit_t[h, step] = best_t[hit]
        hit_arcs[h, step] = best_arc[hit]
        bounces[h] += 1
        pos[h] = best_p[hit]
        cur[h] = reflect_many(d[hit], best_n[hit])

    return TraceBatch(origins, dirs, bounces, hit_points, hit_normals, hit_arcs, hit_t,
                      grazing, stuck, pos, cur, tuple(a.label for a in body.arcs))


def trace2d(body: Body2D, ray: Ray2, max_bounces: int = DEFAULT_MAX_BOUNCES,
            tol: Tolerances = Tolerances()) -> Trajectory:
    """Trace one ray; the origin must lie outside the closed body."""
    o = np.asarray(ray.origin)
    if body.classify(o, tol.band * body.params.c) >= 0:
        raise ValueError(f"ray origin {tuple(o)} is not outside the body")
    return trace2d_batch(body, o[None], np.asarray(ray.direction)[None], max_bounces, tol).trajectory(0)


# --------------------------------------------------------------------------
# 3D by meridian reduction


def _meridian_frames(body: Body3D, dirs: np.ndarray):
    """Axis-parallel part and unit in-plane radial vector for each direction."""
    axis = body.axis
    along = dirs @ axis
    perp = dirs - along[:, None] * axis
    rho = np.linalg.norm(perp, axis=1)
    fallback = np.array([0.0, 1.0, 0.0]) if body.kind is BodyKind.G1 else np.array([1.0, 0.0, 0.0])
    safe = rho > 1e-15
    e = np.where(safe[:, None], perp / np.where(safe, rho, 1.0)[:, None], fallback)
    return along, rho, e


def _lift(body: Body3D, q: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Map meridian-plane vectors (..., 2) back to 3D using radial unit ``e``."""
    axis = body.axis
    if body.kind is BodyKind.G1:
        ax, rad = q[..., 0], q[..., 1]
    else:
        rad, ax = q[..., 0], q[..., 1]
    e = e.reshape(e.shape[:1] + (1,) * (q.ndim - 2) + (3,))
    return ax[..., None] * axis + rad[..., None] * e


def trace3d_batch(body: Body3D, directions, max_bounces: int = DEFAULT_MAX_BOUNCES,
                  tol: Tolerances = Tolerances()) -> TraceBatch:
    dirs = np.array(directions, dtype=float).reshape(-1, 3)
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero direction")
    dirs = dirs / norms[:, None]
    along, rho, e = _meridian_frames(body, dirs)
    d2 = np.stack([along, rho], axis=-1) if body.kind is BodyKind.G1 else np.stack([rho, along], axis=-1)
    section = body.meridian_section()
    r = trace2d_batch(section, np.zeros_like(d2), d2, max_bounces, tol)
    return TraceBatch(
        np.zeros_like(dirs), dirs, r.bounces,
        _lift(body, r.hit_points, e), _lift(body, r.hit_normals, e), r.hit_arcs, r.hit_t,
        r.grazing, r.stuck, _lift(body, r.exit_origins, e), _lift(body, r.exit_directions, e),
        r.arc_labels)


def trace3d(body: Body3D, direction, max_bounces: int = DEFAULT_MAX_BOUNCES,
            tol: Tolerances = Tolerances()) -> Trajectory:
    return trace3d_batch(body, np.asarray(direction, dtype=float)[None], max_bounces, tol).trajectory(0)


# --------------------------------------------------------------------------
# 3D implicit-surface oracle

FACES = ("hyperbola", "ellipse", "k1", "k2")


def _face_values(params, xi, eta, grad=True):
    """Face functions of F in (xi, eta) and their partial derivatives.

    Each function is negative inside F; F is where all four are negative.
    """
    t = params.t
    s = math.sqrt(1.0 + t * t)
    x = (xi - t * eta) / s - params.c
    X = x + params.c
    y = (t * xi + eta) / s
    a2, b2, al2, be2 = params.a**2, params.b**2, params.alpha**2, params.beta**2
    vals = np.stack([
        x * x / al2 - y * y / be2 - 1.0,
        1.0 - x * x / a2 - y * y / b2,
        params.k1 * X - y,
        y - params.k2 * X,
    ])
    if not grad:
        return vals, None, None
    one = np.ones_like(x)
    fx = np.stack([2 * x / al2, -2 * x / a2, params.k1 * one, -params.k2 * one])
    fy = np.stack([-2 * y / be2, -2 * y / b2, -one, one])
    dxi = (fx + t * fy) / s
    deta = (-t * fx + fy) / s
    return vals, dxi, deta


def _oracle_eval(body: Body3D, p: np.ndarray, grad: bool = True):
    """Face values and 3D gradients at points p (..., 3)."""
    m = body.meridian_coords(p)
    vals, dxi, deta = _face_values(body.params, m[..., 0], m[..., 1], grad)
    if not grad:
        return vals, None
    u, v, w = p[..., 0], p[..., 1], p[..., 2]
    with np.errstate(invalid="ignore", divide="ignore"):
        if body.kind is BodyKind.G1:
            r = m[..., 1]
            g_xi = np.stack([np.ones_like(u), np.zeros_like(u), np.zeros_like(u)], axis=-1)
            g_eta = np.stack([np.zeros_like(u), v / r, w / r], axis=-1)
        else:
            r = m[..., 0]
            g_xi = np.stack([u / r, v / r, np.zeros_like(u)], axis=-1)
            g_eta = np.stack([np.zeros_like(u), np.zeros_like(u), np.sign(w)], axis=-1)
    grads = dxi[..., None] * g_xi + deta[..., None] * g_eta
    return vals, grads


def trace3d_oracle(body: Body3D, direction, max_bounces: int = DEFAULT_MAX_BOUNCES,
                   tol: Tolerances = Tolerances(), step: float = 1e-3,
                   corner_tol: float = 1e-9) -> Trajectory:
    """Trace by sampling each face function along the ray and bisecting sign changes.

    A root of one face counts as a hit when the other three faces are
    non-positive there (distance slack ``corner_tol * c``); hits within that
    slack of another face are flagged grazing.
    """
    d = np.asarray(direction, dtype=float)
    if not np.linalg.norm(d) > 0:
        raise ValueError("zero direction")
    d = d / np.linalg.norm(d)
    params = body.params
    c = params.c
    R = body.section.bounding_radius() * 1.01 + c
    h = step * c
    origin = np.zeros(3)
    pos, cur = origin.copy(), d.copy()
    hits: list[HitRecord] = []

    for bounce in range(max_bounces + 1):
        pd = float(pos @ cur)
        disc = pd * pd - float(pos @ pos) + R * R
        if disc <= 0:
            break
        t_end = -pd + math.sqrt(disc)
        t0 = 1e-7 * c if hits else 0.0
        if t_end <= t0:
            break
        n = int(math.ceil((t_end - t0) / h)) + 1
        ts = np.linspace(t0, t_end, n)
        vals, _ = _oracle_eval(body, pos + ts[:, None] * cur, grad=False)
        face, j = np.nonzero(np.signbit(vals[:, :-1]) != np.signbit(vals[:, 1:]))
        best = None
        if face.size:
            lo, hi = ts[j], ts[j + 1]
            neg_lo = np.signbit(vals[face, j])
            cols = np.arange(face.size)
            while np.max(hi - lo) > 1e-12 * c:
                mid = 0.5 * (lo + hi)
                fm = _oracle_eval(body, pos + mid[:, None] * cur, grad=False)[0][face, cols]
                same = np.signbit(fm) == neg_lo
                lo = np.where(same, mid, lo)
                hi = np.where(same, hi, mid)
            roots = 0.5 * (lo + hi)
            pts = pos + roots[:, None] * cur
            v, g = _oracle_eval(body, pts)
            gn = np.linalg.norm(g, axis=-1)
            dist = v / gn
            others = dist.copy()
            others[face, cols] = -np.inf
            ok = np.all(others <= corner_tol * c, axis=0)
            if np.any(ok):
                k = np.flatnonzero(ok)[np.argmin(roots[ok])]
                i = int(face[k])
                near = np.abs(np.delete(dist[:, k], i)) < corner_tol * c
                best = (float(roots[k]), i, pts[k], g[i, k] / gn[i, k], bool(np.any(near)))
        if best is None:
            break
        if bounce == max_bounces:
            return Trajectory(origin, d, tuple(hits), pos, cur, Status.STUCK)
        troot, i, p, nrm, graz = best
        if nrm @ cur > 0:
            nrm = -nrm
        hits.append(HitRecord(FACES[i], p, nrm, troot, graz))
        pos = p
        cur = cur - 2.0 * (cur @ nrm) * nrm
    return Trajectory(origin, d, tuple(hits), pos, cur, Status.EXITED)
