"""Command-line front door.

    python -m invisible_mirror params --c 1 --kappa 1.5 --k1 0.7 --k2 0.9
    python -m invisible_mirror verify --body g2 --n 10000 --sampling uniform-sphere
    python -m invisible_mirror trace --k 0.8 --svg ray.svg
    python -m invisible_mirror mesh --body g1 --segments 64 --format stl
    python -m invisible_mirror plot --rays 12

Every subcommand takes ``--config FILE``: a flat YAML mapping whose keys
are RunConfig field names. Flags override file values. Exit codes: 0 ok,
1 verification failed, 2 invalid input.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .billiard import Tolerances, trace2d, trace3d, trace2d_batch
from .construction import (ConstructionError, ConstructionParams, build_body2d, build_body3d,
                           derive_params, k_min_alt, intersection_point_C)
from .geom2d import Ray2
from .io_export import PlotSpec, render_svg, revolve_mesh, write_obj, write_report, write_stl
from .verify import PERTURBATIONS, SAMPLINGS, cone_directions, perturbed_body, verify_invisibility

OUT_ENV = "INVISIBLE_MIRROR_OUT"

EXIT_OK, EXIT_FAILED, EXIT_INVALID = 0, 1, 2


@dataclass
class RunConfig:
    c: float = 1.0
    kappa: float = 1.5
    k1: float = 0.7
    k2: float = 0.9
    body: str = "planar"
    n: int = 100_000
    seed: int = 0
    sampling: str = "uniform-grid-angles"
    max_bounces: int = 8
    workers: int = 1
    tol_eps: float = 1e-9
    tol_angle: float = 1e-9
    tol_offset: float = 1e-9
    tol_band: float = 1e-12
    perturb: Optional[str] = None
    segments: int = 64
    chord_tol: float = 1e-3
    format: str = "obj"
    out_dir: Optional[str] = None
    output: Optional[str] = None

    def __post_init__(self):
        if self.body not in ("planar", "g1", "g2"):
            raise ValueError(f"body must be planar, g1 or g2, got {self.body!r}")
        if self.sampling not in SAMPLINGS:
            raise ValueError(f"sampling must be one of {SAMPLINGS}, got {self.sampling!r}")
        if self.format not in ("obj", "stl"):
            raise ValueError(f"format must be obj or stl, got {self.format!r}")
        if self.n < 1:
            raise ValueError("n must be at least 1")

    def params(self) -> ConstructionParams:
        return derive_params(self.c, self.kappa, self.k1, self.k2)

    def tolerances(self) -> Tolerances:
        return Tolerances(eps=self.tol_eps, angle=self.tol_angle, offset=self.tol_offset, band=self.tol_band)

    def output_path(self, default_name: str) -> Path:
        if self.output:
            return Path(self.output)
        base = self.out_dir or os.environ.get(OUT_ENV) or "."
        return Path(base) / default_name


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


class ConfigError(ValueError):
    pass


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a flat key: value mapping")
    unknown = sorted(set(data) - set(FIELDS))
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}; allowed: {sorted(FIELDS)}")
    for k, v in data.items():
        if isinstance(v, (dict, list)):
            raise ConfigError(f"{path}: value of {k!r} must be a scalar")
    return data


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = load_config(args.config) if args.config else {}
    for name in FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# --------------------------------------------------------------------------
# argument parsing


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {s}")
    return v


def _perturbation(s: str) -> str:
    name, sep, val = s.partition("=")
    if not sep or name not in PERTURBATIONS:
        raise argparse.ArgumentTypeError(f"expected one of {', '.join(p + '=VALUE' for p in PERTURBATIONS)}")
    float(val)
    return s


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("construction")
    g.add_argument("--config", help="flat YAML file of RunConfig keys")
    g.add_argument("--c", type=float, help="half focal distance (default 1)")
    g.add_argument("--kappa", type=float, help="a/c = c/alpha, in (1, 2) (default 1.5)")
    g.add_argument("--k1", type=float, help="lower edge inclination (default 0.7)")
    g.add_argument("--k2", type=float, help="upper edge inclination (default 0.9)")
    g.add_argument("--out-dir", dest="out_dir", help=f"output directory (default ${OUT_ENV} or .)")
    g.add_argument("--output", "-o", help="explicit output path")

    p = argparse.ArgumentParser(prog="invisible-mirror", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("params", parents=[common], help="print derived scalars and validity")

    v = sub.add_parser("verify", parents=[common], help="trace many rays and classify them")
    v.add_argument("--body", choices=("planar", "g1", "g2"))
    v.add_argument("--n", type=_positive_int, help="number of directions (default 100000)")
    v.add_argument("--seed", type=int)
    v.add_argument("--sampling", choices=SAMPLINGS)
    v.add_argument("--max-bounces", dest="max_bounces", type=_positive_int)
    v.add_argument("--workers", type=_positive_int)
    v.add_argument("--tol-angle", dest="tol_angle", type=float)
    v.add_argument("--tol-offset", dest="tol_offset", type=float)
    v.add_argument("--tol-eps", dest="tol_eps", type=float)
    v.add_argument("--perturb", type=_perturbation,
                   help="alpha=SCALE (hyperbola alpha factor), shift=FRACTION_OF_C, rotate=RADIANS")

    t = sub.add_parser("trace", parents=[common], help="trace one ray and list its hits")
    t.add_argument("--body", choices=("planar", "g1", "g2"))
    aim = t.add_mutually_exclusive_group(required=True)
    aim.add_argument("--k", type=float, help="inclination of the ray in the canonical frame")
    aim.add_argument("--angle", type=float, help="polar angle in the body frame, radians")
    t.add_argument("--svg", help="also write the ray over the section as SVG")

    m = sub.add_parser("mesh", parents=[common], help="export G1 or G2 as a triangle mesh")
    m.add_argument("--body", choices=("g1", "g2"), default=None)
    m.add_argument("--segments", type=int)
    m.add_argument("--chord-tol", dest="chord_tol", type=float)
    m.add_argument("--format", choices=("obj", "stl"))

    pl = sub.add_parser("plot", parents=[common], help="draw the planar section as SVG")
    pl.add_argument("--rays", type=int, default=0, help="number of cone rays to overlay")
    return p


# --------------------------------------------------------------------------
# commands


def cmd_params(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    pr = cfg.params()
    rows = list(pr.as_dict().items())
    rows += [("k_min (alt form)", k_min_alt(pr.kappa)), ("delay 2(a-alpha)", pr.delay),
             ("x0", pr.a * (2 - pr.a / pr.c)), ("C", tuple(intersection_point_C(pr)))]
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        txt = ", ".join(f"{x:.12g}" for x in v) if isinstance(v, tuple) else f"{v:.12g}"
        print(f"{k:<{width}}  {txt}", file=out)
    print("valid: yes", file=out)
    return EXIT_OK


def _make_body(cfg: RunConfig, pr: ConstructionParams):
    if cfg.perturb:
        name, _, val = cfg.perturb.partition("=")
        mag = float(val) - 1.0 if name == "alpha" else float(val)
        section = perturbed_body(pr, name, mag)
    else:
        section = build_body2d(pr)
    if cfg.body == "planar":
        return section
    return build_body3d(section, cfg.body)


def cmd_verify(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    pr = cfg.params()
    body = _make_body(cfg, pr)
    report = verify_invisibility(body, cfg.sampling, n=cfg.n, tol=cfg.tolerances(), seed=cfg.seed,
                                 max_bounces=cfg.max_bounces, workers=cfg.workers,
                                 config=dataclasses.asdict(cfg))
    path = cfg.output_path(f"report-{cfg.body}.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(write_report(report))
    print(report.summary(), file=out)
    print(f"report: {path}", file=out)
    return EXIT_OK if report.passed else EXIT_FAILED


def _trace_direction(cfg: RunConfig, pr: ConstructionParams, k: Optional[float], angle: Optional[float]):
    theta = math.atan(k) - pr.gamma if k is not None else angle
    return np.array([math.cos(theta), math.sin(theta)])


def cmd_trace(cfg: RunConfig, k: Optional[float] = None, angle: Optional[float] = None,
              svg: Optional[str] = None, out=None) -> int:
    out = out or sys.stdout
    pr = cfg.params()
    d = _trace_direction(cfg, pr, k, angle)
    tol = cfg.tolerances()
    if cfg.body == "planar":
        section = build_body2d(pr)
        traj = trace2d(section, Ray2((0.0, 0.0), tuple(d)), cfg.max_bounces, tol)
    else:
        body = build_body3d(pr, cfg.body)
        # the meridian plane y = 0 for either axis
        d3 = np.array([d[0], d[1], 0.0]) if cfg.body == "g1" else np.array([d[0], 0.0, d[1]])
        traj = trace3d(body, d3, cfg.max_bounces, tol)
        section = body.meridian_section()
    if traj.bounce_count == 0:
        print("no intersection", file=out)
    else:
        print(f"{'#':>2}  {'arc':<14} {'point':<40} {'|OP|/c':>14}", file=out)
        for i, h in enumerate(traj.hits, 1):
            pt = ", ".join(f"{x:.12g}" for x in h.point)
            r = float(np.linalg.norm(h.point)) / pr.c
            flag = "  grazing" if h.grazing else ""
            print(f"{i:>2}  {h.arc:<14} ({pt:<38}) {r:>14.12g}{flag}", file=out)
        ex = ", ".join(f"{x:.12g}" for x in traj.exit_direction)
        print(f"exit direction: ({ex}), status: {traj.status.value}", file=out)
    if svg:
        if cfg.body != "planar":
            raise ConfigError("--svg is only available for the planar body")
        Path(svg).parent.mkdir(parents=True, exist_ok=True)
        Path(svg).write_text(render_svg(section, [traj], PlotSpec()), encoding="utf-8")
        print(f"svg: {svg}", file=out)
    return EXIT_OK


def cmd_mesh(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    if cfg.body not in ("g1", "g2"):
        raise ConfigError("mesh needs --body g1 or g2")
    pr = cfg.params()
    mesh = revolve_mesh(build_body3d(pr, cfg.body), cfg.segments, cfg.chord_tol)
    data = write_stl(mesh) if cfg.format == "stl" else write_obj(mesh)
    path = cfg.output_path(f"{cfg.body}.{cfg.format}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    print(f"{path}: {len(mesh.vertices)} vertices, {len(mesh.faces)} triangles, "
          f"{mesh.component_count()} component(s), watertight: {'yes' if mesh.is_watertight() else 'no'}, "
          f"V-E+F = {mesh.euler_characteristic()}", file=out)
    return EXIT_OK


def cmd_plot(cfg: RunConfig, rays: int = 0, out=None) -> int:
    out = out or sys.stdout
    pr = cfg.params()
    body = build_body2d(pr)
    trajs = []
    if rays > 0:
        d = cone_directions(pr, (rays + 1) // 2, cfg.seed)
        d = np.concatenate([d, d * np.array([1.0, -1.0])])[:rays]
        batch = trace2d_batch(body, np.zeros_like(d), d, cfg.max_bounces, cfg.tolerances())
        trajs = [batch.trajectory(i) for i in range(len(batch))]
    path = cfg.output_path("section.svg")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_svg(body, trajs, PlotSpec()), encoding="utf-8")
    print(f"svg: {path}", file=out)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "mesh" and cfg.body == "planar":
            cfg = dataclasses.replace(cfg, body="g1")
        if args.command == "params":
            return cmd_params(cfg)
        if args.command == "verify":
            return cmd_verify(cfg)
        if args.command == "trace":
            return cmd_trace(cfg, args.k, args.angle, args.svg)
        if args.command == "mesh":
            return cmd_mesh(cfg)
        return cmd_plot(cfg, args.rays)
    except (ConstructionError, ConfigError, ValueError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
