"""Command-line experiment driver.

Every subcommand writes ``report.json`` (plus CSV point data and, with
``--plot``, SVG figures) into ``--out`` and exits 0 iff all checks pass.
Configuration comes from built-in defaults, then ``--config FILE``
(JSON), then explicit flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .complex import triangulate_circle
from .convex import (
    FiberQuery,
    Polytope,
    fiber_point,
    sample,
    sample_truncated,
    write_points_csv,
)
from .experiments import SCALES, body_family, truncation_homology
from .kinoshita import TinCan, acyclicity_run, dist_T, sample_T, trajectory_check
from .lift import (
    LiftConfig,
    arc_loop,
    constant_map,
    export_csv,
    lift_map,
    null_homotopy_certificate,
    truncated_segment_path,
)
from .retract import build_retraction, continuity_certificate, identity_check
from .riesz import lattice_suite

logger = logging.getLogger("rieszlab")

SCHEMA_VERSION = 1
SEGMENT = ([2.0, -1.0], [-1.0, 2.0])

DEFAULTS: dict[str, dict[str, Any]] = {
    "lattice": {"seed": 0, "dim": 16, "samples": 100_000},
    "truncate-homology": {"seed": 0, "dim": 3, "samples": 500, "bodies": 20, "radius_coeff": 3.0},
    "lift-demo": {"seed": 0, "samples": 8, "tolerance": 0.05, "max_subdivisions": 6, "circle_vertices": 32},
    "retraction": {"seed": 0, "samples": 400, "grid_spacing": 0.05, "trials": 10_000, "instance": "segment"},
    "kinoshita": {"seed": 0, "samples": 600, "trajectories": 1000, "time_samples": 100,
                  "theta_max": 40.0, "seeds": 3, "radius_coeff": 3.0},
}


class Report:
    def __init__(self, command: str, config: dict):
        self.command = command
        self.config = config
        self.checks: dict[str, dict] = {}
        self.measures: dict[str, Any] = {}

    def check(self, name: str, ok: bool, /, **detail) -> None:
        detail.pop("passed", None)
        self.checks[name] = {**detail, "passed": bool(ok)}

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def to_json(self, wall_clock: float) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "version": __version__,
            "config": self.config,
            "checks": self.checks,
            "measures": self.measures,
            "passed": self.passed,
            "wall_clock_seconds": wall_clock,
        }


def _clean(x):
    """JSON-safe copy: numpy scalars and arrays become Python values."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def dump_report(data: dict) -> str:
    return json.dumps(_clean(data), sort_keys=True, indent=2) + "\n"


def _svg_scatter(path: Path, pts: np.ndarray, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig = plt.figure(figsize=(5, 5))
    if pts.shape[1] >= 3:
        ax = fig.add_subplot(projection="3d")
        ax.scatter(pts[:, 0], pts[:, 1], pts[:, 2], s=3)
    else:
        ax = fig.add_subplot()
        ax.scatter(pts[:, 0], pts[:, 1], s=3)
        ax.set_aspect("equal")
    ax.set_title(title)
    # fixed metadata keeps the SVG byte-stable
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# --- subcommands ------------------------------------------------------------

def cmd_lattice(cfg: dict, out: Path, plot: bool) -> Report:
    rep = Report("lattice", cfg)
    dims = tuple(range(1, cfg["dim"] + 1))
    base = lattice_suite(cfg["samples"], cfg["seed"], dims)
    rep.check("identities_and_chain", base["passed"], failures=base["failures"])
    scalar = lattice_suite(max(cfg["samples"] // 10, 1), cfg["seed"] + 1, (1,))
    rep.check("scalar_lattice", scalar["passed"], failures=scalar["failures"])
    tiny = lattice_suite(max(cfg["samples"] // 10, 1), cfg["seed"] + 2, dims, near_zero=True)
    rep.check("near_zero_stress", tiny["passed"], failures=tiny["failures"])
    rep.measures = {
        "trials": base["trials"],
        "max_chain_violation": base["max_chain_violation"],
        "max_scaling_ulps": base["max_scaling_ulps"],
        "near_zero_max_chain_violation": tiny["max_chain_violation"],
    }
    return rep


def cmd_truncate_homology(cfg: dict, out: Path, plot: bool) -> Report:
    rep = Report("truncate-homology", cfg)
    n, seed, m = cfg["dim"], cfg["seed"], cfg["samples"]
    if n not in (2, 3):
        raise SystemExit("truncate-homology supports --dim 2 or 3")
    runs = []
    for i, (label, P) in enumerate(body_family(cfg["bodies"], seed, n)):
        br = truncation_homology(P, m, seed + i, cfg["radius_coeff"], label=label)
        runs.append(br.to_json())
        rep.check(f"acyclic[{label}]", br.acyclic, betti=[r.profile.betti for r in br.runs])
        if i == 0:
            D = sample_truncated(P, m, seed).points
            write_points_csv(out / "d_cloud.csv", D)
            if plot:
                _svg_scatter(out / "d_cloud.svg", D, label)

    # a body inside the cone is its own truncation
    rng = np.random.default_rng(seed)
    C = Polytope(rng.uniform(0.1, 1.0, size=(8, n)))
    same = np.array_equal(np.maximum(sample(C, m, seed).points, 0), sample(C, m, seed).points)
    br = truncation_homology(C, m, seed, cfg["radius_coeff"], label="in-cone")
    rep.check("in_cone_isometric", same)
    rep.check("acyclic[in-cone]", br.acyclic, betti=[r.profile.betti for r in br.runs])

    if n == 2:
        br = truncation_homology(Polytope(np.array(SEGMENT)), m, seed, cfg["radius_coeff"], label="segment")
        rep.check("acyclic[segment]", br.acyclic, betti=[r.profile.betti for r in br.runs])
    rep.measures = {"scales": list(SCALES), "bodies": runs}
    return rep


def cmd_lift_demo(cfg: dict, out: Path, plot: bool) -> Report:
    rep = Report("lift-demo", cfg)
    seed = cfg["seed"]
    lc = LiftConfig(residual_tolerance=cfg["tolerance"], max_subdivisions=cfg["max_subdivisions"],
                    samples_per_simplex=cfg["samples"])
    P = Polytope(np.array(SEGMENT))
    _, poly = truncated_segment_path(*SEGMENT)
    g = arc_loop(poly)
    K = triangulate_circle(cfg["circle_vertices"])

    res = lift_map(K, g, P, lc, seed)
    rep.check("residual", res.residual <= lc.residual_tolerance, residual=res.residual)
    rep.check("subdivisions", res.subdivisions <= lc.max_subdivisions, subdivisions=res.subdivisions)
    cert = null_homotopy_certificate(res, P, lc.samples_per_simplex, seed + 1)
    rep.check("null_homotopy", cert["passed"], **cert)
    export_csv(res, out / "lift.csv", lc.samples_per_simplex, seed)

    # prescribed lifts on two antipodal vertices
    half = cfg["circle_vertices"] // 2
    gJ = g(K.positions[[0, half]])
    eta = {0: fiber_point(P, FiberQuery(gJ[0]), anchor=np.array([3.0, -3.0])).coords,
           half: fiber_point(P, FiberQuery(gJ[1]), anchor=np.array([-3.0, 3.0])).coords}
    resJ = lift_map(K, g, P, lc, seed, prescribed=eta)
    exact = all(np.array_equal(resJ.vertex_images[v], x) for v, x in eta.items())
    rep.check("prescribed_agree", exact)
    rep.check("prescribed_residual", resJ.residual <= lc.residual_tolerance, residual=resJ.residual)

    resC = lift_map(K, constant_map([0.5, 0.5]), P, lc, seed)
    rep.check("constant_map", resC.residual <= 1e-9, residual=resC.residual)

    rep.measures = {"lift": res.to_json(), "prescribed": resJ.to_json(), "constant": resC.to_json()}
    if plot:
        data = np.loadtxt(out / "lift.csv", delimiter=",")
        _svg_scatter(out / "lift.svg", data[:, 2:], "lifted loop in P")
    return rep


def cmd_retraction(cfg: dict, out: Path, plot: bool) -> Report:
    rep = Report("retraction", cfg)
    seed = cfg["seed"]
    if cfg["instance"] == "segment":
        P = Polytope(np.array(SEGMENT))
    elif cfg["instance"] == "cone":
        P = Polytope(np.array([[0.2, 0.2], [1.2, 0.3], [0.6, 1.1]]))
    else:
        raise SystemExit(f"unknown retraction instance {cfg['instance']!r}")
    D = sample_truncated(P, cfg["samples"], seed)
    r = build_retraction(P, D, cfg["grid_spacing"], seed)
    bad = identity_check(r)
    rep.check("identity_on_sample", bad == 0, mismatches=bad)
    cert = continuity_certificate(r, cfg["trials"], seed + 1)
    rep.check("six_distance_bound", cert["violations"] == 0, violations=cert["violations"],
              offenders=cert["offenders"])
    rep.check("modulus_finite", bool(np.isfinite(cert["empirical_modulus"])))
    rep.measures = {"structure": r.to_json(), "certificate": cert}
    write_points_csv(out / "d_cloud.csv", D.points)
    if plot:
        _svg_scatter(out / "d_cloud.svg", D.points, f"sample of D ({cfg['instance']})")
    return rep


def cmd_kinoshita(cfg: dict, out: Path, plot: bool) -> Report:
    rep = Report("kinoshita", cfg)
    seed = cfg["seed"]
    tc = TinCan(cfg["theta_max"])
    pts = sample_T(cfg["trajectories"], tc.theta_max, seed).points
    self_dist = float(np.max(dist_T(pts, tc)))
    rep.check("samples_on_T", self_dist <= 1e-9, max_distance=self_dist)
    traj = trajectory_check(pts, cfg["time_samples"], tc)
    rep.check("contraction_on_T", traj["passed"], **traj)
    profiles = {}
    for s in range(seed, seed + cfg["seeds"]):
        base = acyclicity_run(cfg["samples"], tc.theta_max, None, s, cfg["radius_coeff"])
        runs = [base] + [acyclicity_run(cfg["samples"], tc.theta_max, f * base.radius, s)
                         for f in SCALES if f != 1.0]
        betti = [r.profile.betti for r in runs]
        profiles[str(s)] = {"radius": base.radius, "betti": betti}
        rep.check(f"acyclic[seed={s}]", all(b == [1, 0, 0] for b in betti), betti=betti)
    rep.measures = {"truncation_bound": tc.truncation_bound, "spiral_length": tc.spiral_length(),
                    "max_trajectory_distance": traj["max_distance"], "acyclicity": profiles}
    write_points_csv(out / "t_samples.csv", pts)
    if plot:
        _svg_scatter(out / "t_samples.svg", pts, "tin can sample")
    return rep


COMMANDS: dict[str, Callable[[dict, Path, bool], Report]] = {
    "lattice": cmd_lattice,
    "truncate-homology": cmd_truncate_homology,
    "lift-demo": cmd_lift_demo,
    "retraction": cmd_retraction,
    "kinoshita": cmd_kinoshita,
}

FLAG_KEYS = {"seed": "seed", "dim": "dim", "samples": "samples", "radius_coeff": "radius_coeff",
             "tolerance": "tolerance"}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rieszlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--seed", type=int)
        p.add_argument("--dim", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--radius-coeff", dest="radius_coeff", type=float)
        p.add_argument("--tolerance", type=float)
        p.add_argument("--config", type=Path, help="JSON file of config overrides")
        p.add_argument("--out", type=Path, default=Path("rieszlab-out"))
        p.add_argument("--plot", action="store_true", help="also write SVG figures")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    if args.config is not None:
        extra = json.loads(Path(args.config).read_text())
        unknown = set(extra) - set(cfg)
        if unknown:
            raise SystemExit(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(extra)
    for attr, key in FLAG_KEYS.items():
        v = getattr(args, attr)
        if v is not None:
            if key not in cfg:
                raise SystemExit(f"--{attr.replace('_', '-')} does not apply to {command}")
            cfg[key] = v
    for key in ("tolerance", "radius_coeff", "grid_spacing", "theta_max"):
        if key in cfg and not cfg[key] > 0:
            raise SystemExit(f"{key} must be positive")
    return cfg


def run(command: str, cfg: dict, out: Path, plot: bool = False) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    rep = COMMANDS[command](cfg, out, plot)
    data = rep.to_json(round(time.perf_counter() - t0, 3))
    (out / "report.json").write_text(dump_report(data))
    return _clean(data)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = resolve_config(args.command, args)
    data = run(args.command, cfg, args.out, args.plot)
    for name, c in data["checks"].items():
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {name}")
    print(f"report: {args.out / 'report.json'}")
    return 0 if data["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
