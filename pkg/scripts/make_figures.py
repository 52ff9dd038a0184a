"""Render the planar section with a fan of rays, plus G1 and G2 meshes.

    python3 scripts/make_figures.py --out figures
"""

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from invisible_mirror import build_body2d, build_body3d, derive_params
from invisible_mirror.billiard import trace2d_batch
from invisible_mirror.io_export import render_svg, revolve_mesh, write_obj, write_stl


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--c", type=float, default=1.0)
    ap.add_argument("--kappa", type=float, default=1.5)
    ap.add_argument("--k1", type=float, default=0.7)
    ap.add_argument("--k2", type=float, default=0.9)
    ap.add_argument("--rays", type=int, default=9, help="rays per copy, spread over the cone")
    ap.add_argument("--segments", type=int, default=96)
    ap.add_argument("--out", default="figures")
    args = ap.parse_args(argv)

    p = derive_params(args.c, args.kappa, args.k1, args.k2)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    body = build_body2d(p)
    # polar angles inside the cone of the upper copy, then their mirror images
    ks = np.linspace(p.k1, p.k2, args.rays + 2)[1:-1]
    th = np.arctan(ks) - p.gamma
    th = np.concatenate([th, -th, [0.0, math.pi / 2]])
    d = np.column_stack([np.cos(th), np.sin(th)])
    batch = trace2d_batch(body, np.zeros_like(d), d)
    svg = render_svg(body, [batch.trajectory(i) for i in range(len(d))])
    (out / "section.svg").write_text(svg)

    for kind in ("g1", "g2"):
        mesh = revolve_mesh(build_body3d(p, kind), args.segments)
        (out / f"{kind}.obj").write_bytes(write_obj(mesh))
        (out / f"{kind}.stl").write_bytes(write_stl(mesh))
        print(f"{kind}: {len(mesh.faces)} triangles, watertight={mesh.is_watertight()}, "
              f"components={mesh.component_count()}")
    print(f"wrote {out}/section.svg and meshes")
    return 0


if __name__ == "__main__":
    sys.exit(main())
