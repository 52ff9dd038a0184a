"""Planar geometry kernel: rays, specular reflection, ray/conic and
ray/segment intersection, and the rigid frame map between the canonical
conic frame (x, y) and the body frame (xi, eta).

The root solvers work on numpy arrays so the batched billiard tracer can
use them directly; the scalar helpers (``intersect_ray_ellipse`` and
friends) are thin wrappers for single rays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

UNIT_TOL = 1e-12
GRAZING_DISC = 1e-14
SEGMENT_END_TOL = 1e-12


def _as_vec(p) -> np.ndarray:
    v = np.asarray(p, dtype=float)
    if v.shape != (2,):
        raise ValueError(f"expected a 2-vector, got shape {v.shape}")
    return v


def _check_unit(v: np.ndarray, name: str, tol: float = UNIT_TOL) -> None:
    norm = math.hypot(v[0], v[1])
    if abs(norm - 1.0) > tol:
        raise ValueError(f"{name} must be a unit vector (|{name}| = {norm!r})")


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("cannot normalize a zero vector")
    return v / n


def direction_at(theta: float) -> np.ndarray:
    """Unit vector at polar angle ``theta``."""
    return np.array([math.cos(theta), math.sin(theta)])


@dataclass(frozen=True)
class Ray2:
    origin: tuple[float, float]
    direction: tuple[float, float]

    def __post_init__(self):
        o = _as_vec(self.origin)
        d = _as_vec(self.direction)
        _check_unit(d, "direction")
        object.__setattr__(self, "origin", (float(o[0]), float(o[1])))
        object.__setattr__(self, "direction", (float(d[0]), float(d[1])))

    @classmethod
    def from_angle(cls, origin, theta: float) -> "Ray2":
        return cls(tuple(origin), tuple(direction_at(theta)))

    def at(self, t: float) -> np.ndarray:
        return np.asarray(self.origin) + t * np.asarray(self.direction)


@dataclass(frozen=True)
class Hit:
    t: float
    point: np.ndarray
    outward_normal: np.ndarray
    grazing: bool = False


# --------------------------------------------------------------------------
# reflection


def reflect_direction(d, n) -> np.ndarray:
    """Specular reflection d' = d - 2 (d.n) n of a unit direction about a unit normal."""
    d = _as_vec(d)
    n = _as_vec(n)
    _check_unit(d, "d", 1e-9)
    _check_unit(n, "n", 1e-9)
    return d - 2.0 * np.dot(d, n) * n


def reflect_many(d: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Row-wise reflection for (N, k) arrays; no validation."""
    dots = np.einsum("ij,ij->i", d, n)
    return d - 2.0 * dots[:, None] * n


# --------------------------------------------------------------------------
# conic root solvers (vectorized)


def conic_roots(ox, oy, dx, dy, inv_p2: float, inv_q2: float):
    """Roots of ``x^2 inv_p2 + y^2 inv_q2 = 1`` along ``o + t d``.

    ``inv_q2`` is negative for a hyperbola. Returns ``(t_lo, t_hi, disc)``
    where missing roots are NaN and ``disc`` is the discriminant normalized
    by its leading scale (near zero means tangency).
    """
    ox, oy, dx, dy = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (ox, oy, dx, dy)))
    A = inv_p2 * dx * dx + inv_q2 * dy * dy
    B = inv_p2 * ox * dx + inv_q2 * oy * dy
    C = inv_p2 * ox * ox + inv_q2 * oy * oy - 1.0
    D = B * B - A * C
    scale = np.maximum(B * B, np.abs(A * C))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        disc = np.where(scale > 0, D / scale, 0.0)
        sq = np.sqrt(np.maximum(D, 0.0))
        qv = -(B + np.copysign(sq, B))
        r1 = qv / A
        r2 = C / qv
        # A ~ 0: ray parallel to a hyperbola asymptote, single root
        lin = np.abs(A) <= 1e-15 * (np.abs(inv_p2) * dx * dx + np.abs(inv_q2) * dy * dy)
        r_lin = np.where(B != 0, -C / (2.0 * B), np.nan)
    t_lo = np.fmin(r1, r2)
    t_hi = np.fmax(r1, r2)
    t_lo = np.where(lin, r_lin, t_lo)
    t_hi = np.where(lin, np.nan, t_hi)
    none = (D < 0) & ~lin
    t_lo = np.where(none, np.nan, t_lo)
    t_hi = np.where(none, np.nan, t_hi)
    return t_lo, t_hi, disc


def _first_hit(ray: Ray2, p: float, q: float, sign: float, eps: float, accept) -> Optional[Hit]:
    o = np.asarray(ray.origin)
    d = np.asarray(ray.direction)
    t_lo, t_hi, disc = conic_roots(o[0], o[1], d[0], d[1], 1.0 / p**2, sign / q**2)
    for t in (float(t_lo), float(t_hi)):
        if not math.isfinite(t) or t <= eps:
            continue
        pt = o + t * d
        if not accept(pt):
            continue
        g = np.array([pt[0] / p**2, sign * pt[1] / q**2])
        n = g / np.linalg.norm(g)
        if np.dot(n, d) > 0:
            n = -n
        return Hit(t, pt, n, bool(abs(float(disc)) < GRAZING_DISC))
    return None


def intersect_ray_ellipse(ray: Ray2, a: float, b: float, eps: float = 1e-9) -> Optional[Hit]:
    """First crossing of ``ray`` with the ellipse x^2/a^2 + y^2/b^2 = 1."""
    if not (a > 0 and b > 0):
        raise ValueError("ellipse semi-axes must be positive")
    return _first_hit(ray, a, b, 1.0, eps, lambda pt: True)


def intersect_ray_hyperbola_right(ray: Ray2, alpha: float, beta: float, eps: float = 1e-9) -> Optional[Hit]:
    """First crossing of ``ray`` with the right branch of x^2/alpha^2 - y^2/beta^2 = 1."""
    if not (alpha > 0 and beta > 0):
        raise ValueError("hyperbola parameters must be positive")
    return _first_hit(ray, alpha, beta, -1.0, eps, lambda pt: pt[0] > 0)


def segment_params(ox, oy, dx, dy, p0, p1):
    """Ray parameter t and segment barycentric s for ``o + t d = p0 + s (p1 - p0)``.

    Parallel rays give NaN for both.
    """
    ex, ey = p1[0] - p0[0], p1[1] - p0[1]
    denom = dx * ey - dy * ex
    wx, wy = p0[0] - ox, p0[1] - oy
    parallel = np.abs(denom) <= 1e-14 * math.hypot(ex, ey)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (wx * ey - wy * ex) / denom
        s = (wx * dy - wy * dx) / denom
    t = np.where(parallel, np.nan, t)
    s = np.where(parallel, np.nan, s)
    return t, s


def intersect_ray_segment(ray: Ray2, p0, p1, eps: float = 1e-9) -> Optional[Hit]:
    p0 = _as_vec(p0)
    p1 = _as_vec(p1)
    if np.allclose(p0, p1, rtol=0, atol=0):
        raise ValueError("segment endpoints must differ")
    o = np.asarray(ray.origin)
    d = np.asarray(ray.direction)
    t, s = segment_params(o[0], o[1], d[0], d[1], p0, p1)
    t, s = float(t), float(s)
    if not math.isfinite(t) or t <= eps:
        return None
    if s < -SEGMENT_END_TOL or s > 1 + SEGMENT_END_TOL:
        return None
    e = p1 - p0
    n = np.array([-e[1], e[0]]) / np.linalg.norm(e)
    if np.dot(n, d) > 0:
        n = -n
    grazing = s < SEGMENT_END_TOL or s > 1 - SEGMENT_END_TOL
    return Hit(t, o + t * d, n, grazing)


# --------------------------------------------------------------------------
# frame map


@dataclass(frozen=True)
class FrameMap:
    """Rigid map from canonical (x, y) to body (xi, eta) coordinates.

    forward(p) = flip(R(-gamma) (p + translation)) + offset, where ``flip``
    negates eta when ``mirror`` is set and xi when ``flip_xi`` is set.
    """

    gamma: float
    translation: tuple[float, float] = (0.0, 0.0)
    mirror: bool = False
    flip_xi: bool = False
    offset: tuple[float, float] = (0.0, 0.0)

    def _flip(self, v: np.ndarray) -> np.ndarray:
        sx = -1.0 if self.flip_xi else 1.0
        sy = -1.0 if self.mirror else 1.0
        return v * np.array([sx, sy])

    def forward_vec(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        cg, sg = math.cos(self.gamma), math.sin(self.gamma)
        x, y = v[..., 0], v[..., 1]
        out = np.stack([cg * x + sg * y, -sg * x + cg * y], axis=-1)
        return self._flip(out)

    def inverse_vec(self, v) -> np.ndarray:
        v = self._flip(np.asarray(v, dtype=float))
        cg, sg = math.cos(self.gamma), math.sin(self.gamma)
        x, y = v[..., 0], v[..., 1]
        return np.stack([cg * x - sg * y, sg * x + cg * y], axis=-1)

    def forward(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return self.forward_vec(p + np.asarray(self.translation)) + np.asarray(self.offset)

    def inverse(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return self.inverse_vec(q - np.asarray(self.offset)) - np.asarray(self.translation)


def frame_forward(f: FrameMap, p) -> np.ndarray:
    return f.forward(p)


def frame_inverse(f: FrameMap, q) -> np.ndarray:
    return f.inverse(q)
