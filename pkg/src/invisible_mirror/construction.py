"""Parameters, admissibility checks and assembly of the mirror body.

A body instance is fixed by four numbers: the scale ``c`` (half the focal
distance), the shape parameter ``kappa = a/c = c/alpha`` and the two
inclinations ``k1 < k2`` of the generating rays from the left focus.
The planar piece F lies outside the ellipse, on the concave side of the
right hyperbola branch, and inside the cone ``k1 < y/(x+c) < k2``.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geom2d import FrameMap, conic_roots, segment_params

DEGENERACY_MARGIN = 1e-9


class ConstructionError(ValueError):
    pass


class InvalidScale(ConstructionError):
    pass


class InvalidEccentricity(ConstructionError):
    pass


class InvalidInclinations(ConstructionError):
    pass


class DegenerateParameters(InvalidInclinations):
    """Parameters are admissible only by a margin below DEGENERACY_MARGIN."""


# --------------------------------------------------------------------------
# scalar parameters


def _check_kappa(kappa: float) -> None:
    if not (1.0 < kappa < 2.0):
        raise InvalidEccentricity(f"kappa must satisfy 1 < kappa < 2, got {kappa!r}")


def k_max_of(kappa: float) -> float:
    return math.sqrt(kappa * kappa - 1.0)


def k_min_of(kappa: float) -> float:
    m = kappa - 1.0
    return m * math.sqrt(4.0 - m * m) / (2.0 - m * m)


def k_min_alt(kappa: float) -> float:
    """The same lower bound written via sqrt(kappa^2-1) sqrt(1-(2-kappa)^2)."""
    return (math.sqrt(kappa * kappa - 1.0) * math.sqrt(1.0 - (2.0 - kappa) ** 2)
            / (1.0 + 2.0 * kappa - kappa * kappa))


def k_bounds(kappa: float) -> tuple[float, float]:
    """Admissible open interval (k_min, k_max) of ray inclinations."""
    _check_kappa(kappa)
    return k_min_of(kappa), k_max_of(kappa)


@dataclass(frozen=True)
class ConstructionParams:
    c: float
    kappa: float
    a: float
    b: float
    alpha: float
    beta: float
    k1: float
    k2: float
    k_min: float
    k_max: float
    t: float
    gamma: float

    @property
    def F1(self) -> np.ndarray:
        return np.array([-self.c, 0.0])

    @property
    def F2(self) -> np.ndarray:
        return np.array([self.c, 0.0])

    @property
    def delay(self) -> float:
        """Excess optical path of a three-bounce ray, 2(a - alpha)."""
        return 2.0 * (self.a - self.alpha)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def derive_params(c: float, kappa: float, k1: float, k2: float) -> ConstructionParams:
    if not (c > 0 and math.isfinite(c)):
        raise InvalidScale(f"scale c must be positive, got {c!r}")
    k_min, k_max = k_bounds(kappa)
    if not (k_min < k1 < k2 < k_max):
        raise InvalidInclinations(
            f"need k_min < k1 < k2 < k_max with k_min={k_min:.10g}, k_max={k_max:.10g}; "
            f"got k1={k1!r}, k2={k2!r}")
    if min(k1 - k_min, k2 - k1, k_max - k2) < DEGENERACY_MARGIN:
        raise DegenerateParameters(
            f"inclinations within {DEGENERACY_MARGIN:g} of a bound "
            f"(k_min={k_min:.10g}, k1={k1!r}, k2={k2!r}, k_max={k_max:.10g})")
    a = kappa * c
    b = math.sqrt(kappa * kappa - 1.0) * c
    alpha = c / kappa
    beta = math.sqrt(1.0 - 1.0 / (kappa * kappa)) * c
    # (sqrt(k^2+1) - 1)/k without the cancellation for small k
    t = k1 / (math.sqrt(k1 * k1 + 1.0) + 1.0)
    return ConstructionParams(c=c, kappa=kappa, a=a, b=b, alpha=alpha, beta=beta,
                              k1=k1, k2=k2, k_min=k_min, k_max=k_max, t=t,
                              gamma=math.atan(t))


def focal_distance_ellipse(params: ConstructionParams, x_A: float) -> float:
    """|F1 A| for the ellipse point with abscissa x_A."""
    if not (-params.a <= x_A <= params.a):
        raise ValueError(f"x_A={x_A!r} outside [-a, a]")
    return params.c / params.a * x_A + params.a


def focal_distance_hyperbola(params: ConstructionParams, x_B: float) -> float:
    """|F1 B| for the right-branch point with abscissa x_B."""
    if x_B < params.alpha:
        raise ValueError(f"x_B={x_B!r} below the branch vertex alpha={params.alpha!r}")
    return params.c / params.alpha * x_B + params.alpha


def intersection_point_C(params: ConstructionParams) -> np.ndarray:
    return np.array([params.c, params.b ** 2 / params.a])


def _focal_ray_root(params, k, p, q_sign, q):
    d = np.array([1.0, k]) / math.hypot(1.0, k)
    lo, hi, _ = conic_roots(-params.c, 0.0, d[0], d[1], 1.0 / p**2, q_sign / q**2)
    for t in (float(lo), float(hi)):
        if math.isfinite(t) and t > 0:
            pt = params.F1 + t * d
            if q_sign > 0 or pt[0] > 0:
                return pt
    raise ValueError(f"ray of inclination {k!r} from F1 misses the conic")


def ellipse_point(params: ConstructionParams, k: float) -> np.ndarray:
    """Point A where the ray y = k (x + c), x >= -c meets the ellipse."""
    return _focal_ray_root(params, k, params.a, 1.0, params.b)


def hyperbola_point(params: ConstructionParams, k: float) -> np.ndarray:
    """Point B where the ray y = k (x + c), x >= -c meets the right branch."""
    if not (0 <= k < params.k_max):
        raise ValueError(f"inclination {k!r} does not reach the right branch")
    return _focal_ray_root(params, k, params.alpha, -1.0, params.beta)


# --------------------------------------------------------------------------
# boundary arcs


class ArcKind(enum.Enum):
    ELLIPSE = "ellipse"
    HYPERBOLA = "hyperbola"
    SEGMENT = "segment"


@dataclass(frozen=True)
class BoundaryArc:
    """One mirror piece, stored in the canonical frame plus its placement.

    Conic arcs accept the points whose inclination ``y/(x+c)`` from F1 lies
    in ``[k_lo, k_hi]`` (with ``y > 0``); segments run from ``p0`` to ``p1``.
    """

    kind: ArcKind
    label: str
    c: float
    k_lo: float
    k_hi: float
    frame: FrameMap
    p: float = 0.0
    q: float = 0.0
    p0: Optional[tuple[float, float]] = None
    p1: Optional[tuple[float, float]] = None

    @property
    def is_conic(self) -> bool:
        return self.kind is not ArcKind.SEGMENT

    @property
    def _q_sign(self) -> float:
        return 1.0 if self.kind is ArcKind.ELLIPSE else -1.0

    def canonical_point(self, u) -> np.ndarray:
        """Canonical point at fraction ``u`` in [0, 1] along the arc."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if self.kind is ArcKind.SEGMENT:
            p0, p1 = np.asarray(self.p0), np.asarray(self.p1)
            return p0 + u[:, None] * (p1 - p0)
        k = self.k_lo + u * (self.k_hi - self.k_lo)
        norm = np.hypot(1.0, k)
        dx, dy = 1.0 / norm, k / norm
        lo, hi, _ = conic_roots(-self.c, 0.0, dx, dy, 1.0 / self.p**2, self._q_sign / self.q**2)
        # the focal ray meets either conic once for t > 0 on the relevant side
        t = np.where(hi > 0, hi, lo) if self.kind is ArcKind.ELLIPSE else \
            np.where((lo > 0) & (-self.c + lo * dx > 0), lo, hi)
        return np.stack([-self.c + t * dx, t * dy], axis=-1)

    def point(self, u) -> np.ndarray:
        """Body-frame point(s) at fraction ``u`` along the arc."""
        return self.frame.forward(self.canonical_point(u))

    def endpoints(self) -> np.ndarray:
        return self.point([0.0, 1.0])

    def canonical_residual(self, pts) -> np.ndarray:
        """Implicit-equation residual of canonical points (line distance for segments)."""
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        if self.kind is ArcKind.SEGMENT:
            p0, p1 = np.asarray(self.p0), np.asarray(self.p1)
            e = (p1 - p0) / np.linalg.norm(p1 - p0)
            return (x - p0[0]) * e[1] - (y - p0[1]) * e[0]
        return x * x / self.p**2 + self._q_sign * y * y / self.q**2 - 1.0

    def residual(self, q) -> np.ndarray:
        return self.canonical_residual(self.frame.inverse(q))

    def intersect(self, origins: np.ndarray, dirs: np.ndarray, eps: float, band: float):
        """Nearest admissible crossing for a batch of body-frame rays.

        Returns ``(t, points, normals, grazing)``; rays that miss get
        ``t = inf``. Hits within ``band`` of an arc end (in inclination or
        segment fraction) are accepted but flagged grazing. Normals face
        the incoming ray.
        """
        n = len(origins)
        t_best = np.full(n, np.inf)
        graz = np.zeros(n, dtype=bool)
        if n == 0:
            return t_best, np.zeros((0, 2)), np.zeros((0, 2)), graz
        o = self.frame.inverse(origins)
        d = self.frame.inverse_vec(dirs)
        if self.kind is ArcKind.SEGMENT:
            t, s = segment_params(o[:, 0], o[:, 1], d[:, 0], d[:, 1], self.p0, self.p1)
            ok = np.isfinite(t) & (t > eps) & (s >= -band) & (s <= 1 + band)
            t_best = np.where(ok, t, np.inf)
            graz = ok & ((s < band) | (s > 1 - band))
        else:
            lo, hi, disc = conic_roots(o[:, 0], o[:, 1], d[:, 0], d[:, 1],
                                       1.0 / self.p**2, self._q_sign / self.q**2)
            tangent = np.abs(disc) < 1e-14
            # tried in order so the far root is used only when the near one is rejected
            for root in (hi, lo):
                with np.errstate(invalid="ignore"):
                    px = o[:, 0] + root * d[:, 0]
                    py = o[:, 1] + root * d[:, 1]
                    xc = px + self.c
                    k = py / xc
                    ok = (np.isfinite(root) & (root > eps) & (py > 0) & (xc > 0)
                          & (k >= self.k_lo - band) & (k <= self.k_hi + band))
                if self.kind is ArcKind.HYPERBOLA:
                    ok &= px > 0
                take = ok & (root < t_best)
                t_best = np.where(take, root, t_best)
                edge = (k < self.k_lo + band) | (k > self.k_hi - band)
                graz = np.where(take, edge | tangent, graz)
        hit = np.isfinite(t_best)
        tt = np.where(hit, t_best, 0.0)
        pts_c = o + tt[:, None] * d
        if self.kind is ArcKind.SEGMENT:
            e = np.asarray(self.p1) - np.asarray(self.p0)
            nrm_c = np.broadcast_to(np.array([-e[1], e[0]]), pts_c.shape).copy()
        else:
            nrm_c = np.stack([pts_c[:, 0] / self.p**2,
                              self._q_sign * pts_c[:, 1] / self.q**2], axis=-1)
        nrm = self.frame.forward_vec(nrm_c)
        with np.errstate(invalid="ignore", divide="ignore"):
            nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
        flip = np.einsum("ij,ij->i", nrm, dirs) > 0
        nrm[flip] *= -1.0
        pts = origins + tt[:, None] * dirs
        return t_best, pts, nrm, graz


def _check_edge_inequalities(params: ConstructionParams) -> None:
    for k in (params.k1, params.k2):
        dA = float(np.linalg.norm(ellipse_point(params, k) - params.F1))
        dB = float(np.linalg.norm(hyperbola_point(params, k) - params.F1))
        if not (dA < 2 * params.c < dB):
            raise ConstructionError(
                f"edge k={k!r} violates |F1A| < 2c < |F1B| ({dA!r}, {2 * params.c!r}, {dB!r})")


def build_region(params: ConstructionParams) -> list[BoundaryArc]:
    """The four boundary pieces of F in the canonical (x, y) frame.

    Order: elliptic arc, hyperbolic arc, k1-edge, k2-edge. Each edge runs
    from its ellipse point A to its hyperbola point B.
    """
    _check_edge_inequalities(params)
    ident = FrameMap(0.0)
    c = params.c
    arcs = [
        BoundaryArc(ArcKind.ELLIPSE, "ellipse", c, params.k1, params.k2, ident,
                    p=params.a, q=params.b),
        BoundaryArc(ArcKind.HYPERBOLA, "hyperbola", c, params.k1, params.k2, ident,
                    p=params.alpha, q=params.beta),
    ]
    for name, k in (("k1", params.k1), ("k2", params.k2)):
        A = ellipse_point(params, k)
        B = hyperbola_point(params, k)
        arcs.append(BoundaryArc(ArcKind.SEGMENT, name, c, k, k, ident,
                                p0=(float(A[0]), float(A[1])), p1=(float(B[0]), float(B[1]))))
    return arcs


# --------------------------------------------------------------------------
# membership


def _constraints_xy(params: ConstructionParams, x, y):
    """Signed first-order distances to the four constraints; positive inside F."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a2, b2, al2, be2 = params.a**2, params.b**2, params.alpha**2, params.beta**2
    X = x + params.c
    fE = x * x / a2 + y * y / b2 - 1.0
    gE = 2.0 * np.hypot(x / a2, y / b2)
    fH = 1.0 - (x * x / al2 - y * y / be2)
    gH = 2.0 * np.hypot(x / al2, y / be2)
    with np.errstate(invalid="ignore", divide="ignore"):
        m = np.stack([
            fE / gE,
            fH / gH,
            (y - params.k1 * X) / math.hypot(1.0, params.k1),
            (params.k2 * X - y) / math.hypot(1.0, params.k2),
        ])
    return np.nan_to_num(m, nan=-np.inf)


def region_contains_xy(params: ConstructionParams, p) -> np.ndarray | bool:
    """Open-set membership of canonical points in F."""
    p = np.asarray(p, dtype=float)
    x, y = p[..., 0], p[..., 1]
    a2, b2, al2, be2 = params.a**2, params.b**2, params.alpha**2, params.beta**2
    with np.errstate(invalid="ignore", divide="ignore"):
        X = x + params.c
        inside = ((x * x / a2 + y * y / b2 > 1.0)
                  & (x * x / al2 - y * y / be2 < 1.0)
                  & (y > 0) & (X > 0)
                  & (y > params.k1 * X) & (y < params.k2 * X))
    return inside if inside.ndim else bool(inside)


def region_contains_xieta(params: ConstructionParams, q) -> np.ndarray | bool:
    """Open-set membership of body-frame (xi, eta) points in F.

    Written directly in the rotated coordinates: with s = sqrt(1 + t^2),
    x + c = (xi - t eta)/s and y = (t xi + eta)/s.
    """
    q = np.asarray(q, dtype=float)
    xi, eta = q[..., 0], q[..., 1]
    t = params.t
    s = math.sqrt(1.0 + t * t)
    u = xi - t * eta            # s (x + c)
    v = t * xi + eta            # s y
    w = u - params.c * s        # s x
    with np.errstate(invalid="ignore"):
        inside = ((w * w / params.alpha**2 - v * v / params.beta**2 < s * s)
                  & (s * s < w * w / params.a**2 + v * v / params.b**2)
                  & (v > 0) & (u > 0)
                  & (v > params.k1 * u) & (v < params.k2 * u))
    return inside if inside.ndim else bool(inside)


class Membership(enum.IntEnum):
    OUTSIDE = -1
    BOUNDARY = 0
    INSIDE = 1


def classify_xy(params: ConstructionParams, p, band: float = 1e-12) -> np.ndarray:
    """Tri-state membership in F with an absolute boundary band (a length)."""
    p = np.asarray(p, dtype=float)
    m = _constraints_xy(params, p[..., 0], p[..., 1]).min(axis=0)
    out = np.where(m > band, Membership.INSIDE,
                   np.where(m < -band, Membership.OUTSIDE, Membership.BOUNDARY))
    return out.astype(int)


# --------------------------------------------------------------------------
# assembled bodies


def body_frame(params: ConstructionParams, mirror: bool = False, flip_xi: bool = False) -> FrameMap:
    return FrameMap(params.gamma, (params.c, 0.0), mirror=mirror, flip_xi=flip_xi)


@dataclass(frozen=True)
class Body2D:
    """F together with its mirror copy about eta = 0, in body coordinates.

    ``arcs`` holds four F pieces followed by four mirrored pieces. Sections
    used for tracing a G2 body carry an extra eight pieces mirrored about
    xi = 0 (``kind == "g2-meridian"``).
    """

    arcs: tuple[BoundaryArc, ...]
    params: ConstructionParams
    kind: str = "planar"

    @property
    def origin(self) -> np.ndarray:
        return np.zeros(2)

    def arc_index(self, label: str) -> int:
        for i, arc in enumerate(self.arcs):
            if arc.label == label:
                return i
        raise KeyError(label)

    def contains(self, q) -> np.ndarray | bool:
        q = np.asarray(q, dtype=float)
        xi, eta = q[..., 0], q[..., 1]
        if self.kind == "g2-meridian":
            xi = np.abs(xi)
        return region_contains_xieta(self.params, np.stack([xi, np.abs(eta)], axis=-1))

    def classify(self, q, band: float = 1e-12) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        xi, eta = q[..., 0], q[..., 1]
        if self.kind == "g2-meridian":
            xi = np.abs(xi)
        frame = body_frame(self.params)
        return classify_xy(self.params, frame.inverse(np.stack([xi, np.abs(eta)], axis=-1)), band)

    def outline(self, prefix: str = "F", samples: int = 1024) -> np.ndarray:
        """Closed boundary loop of one copy (``"F"`` or ``"F~"``) as a polygon.

        Ellipse arc from the k1 end to the k2 end, then the hyperbola arc
        back; the two flat edges are the closing chords between them.
        """
        ell = self.arcs[self.arc_index(f"{prefix}:ellipse")]
        hyp = self.arcs[self.arc_index(f"{prefix}:hyperbola")]
        u = np.linspace(0.0, 1.0, samples)
        return np.concatenate([ell.point(u), hyp.point(u[::-1])])

    def bounding_radius(self) -> float:
        pts = np.concatenate([arc.point(np.linspace(0, 1, 33)) for arc in self.arcs])
        return float(np.max(np.linalg.norm(pts, axis=1)))


def _placed(arcs, frame: FrameMap, prefix: str) -> list[BoundaryArc]:
    return [dataclasses.replace(a, frame=frame, label=f"{prefix}:{a.label}") for a in arcs]


def build_body2d(params: ConstructionParams) -> Body2D:
    region = build_region(params)
    arcs = _placed(region, body_frame(params), "F") + \
        _placed(region, body_frame(params, mirror=True), "F~")
    return Body2D(tuple(arcs), params)


class BodyKind(enum.Enum):
    G1 = "g1"
    G2 = "g2"


@dataclass(frozen=True)
class Body3D:
    """Solid of revolution of F: G1 about the xi-axis, G2 about the eta-axis.

    G1 is embedded with the xi-axis along +u; G2 with the eta-axis along +w.
    """

    kind: BodyKind
    section: Body2D

    @property
    def params(self) -> ConstructionParams:
        return self.section.params

    @property
    def axis(self) -> np.ndarray:
        return np.array([1.0, 0.0, 0.0]) if self.kind is BodyKind.G1 else np.array([0.0, 0.0, 1.0])

    def meridian_coords(self, p) -> np.ndarray:
        """(xi, eta) of 3D points under the revolution map."""
        p = np.asarray(p, dtype=float)
        u, v, w = p[..., 0], p[..., 1], p[..., 2]
        if self.kind is BodyKind.G1:
            return np.stack([u, np.hypot(v, w)], axis=-1)
        return np.stack([np.hypot(u, v), np.abs(w)], axis=-1)

    def meridian_section(self) -> Body2D:
        """Full planar section through the axis used by the meridian tracer."""
        if self.kind is BodyKind.G1:
            return self.section
        flipped = [dataclasses.replace(a, frame=dataclasses.replace(a.frame, flip_xi=not a.frame.flip_xi),
                                       label=f"-{a.label}") for a in self.section.arcs]
        return Body2D(tuple(self.section.arcs) + tuple(flipped), self.params, kind="g2-meridian")


def build_body3d(params_or_section, kind: BodyKind | str) -> Body3D:
    kind = BodyKind(kind) if isinstance(kind, str) else kind
    section = params_or_section if isinstance(params_or_section, Body2D) else build_body2d(params_or_section)
    return Body3D(kind, section)


def body3d_contains(body: Body3D, p) -> np.ndarray | bool:
    return region_contains_xieta(body.params, body.meridian_coords(p))
