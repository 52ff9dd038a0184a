"""Shared samplers for valid construction tuples."""

import math

import numpy as np
from hypothesis import strategies as st

from invisible_mirror.construction import k_bounds

DEFAULT = dict(c=1.0, kappa=1.5, k1=0.7, k2=0.9)


def random_tuples(rng: np.random.Generator, n: int, margin: float = 0.02):
    """(c, kappa, k1, k2) with c in [0.5, 2], kappa in (1.05, 1.95) and
    k1 < k2 inside (k_min, k_max), kept ``margin`` (relative) off the ends."""
    out = []
    while len(out) < n:
        c = rng.uniform(0.5, 2.0)
        kappa = rng.uniform(1.05, 1.95)
        lo, hi = k_bounds(kappa)
        w = hi - lo
        k1, k2 = np.sort(rng.uniform(lo + margin * w, hi - margin * w, 2))
        if k2 - k1 < margin * w:
            continue
        out.append((float(c), float(kappa), float(k1), float(k2)))
    return out


@st.composite
def valid_tuples(draw, margin: float = 0.02):
    c = draw(st.floats(0.5, 2.0))
    kappa = draw(st.floats(1.05, 1.95))
    lo, hi = k_bounds(kappa)
    w = hi - lo
    f1 = draw(st.floats(margin, 1 - 3 * margin))
    f2 = draw(st.floats(f1 + margin, 1 - margin))
    return c, kappa, lo + f1 * w, lo + f2 * w


def angle_between(u, v):
    return math.atan2(abs(u[0] * v[1] - u[1] * v[0]), u[0] * v[0] + u[1] * v[1])
