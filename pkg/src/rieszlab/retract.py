"""Retraction of the hull of a sampled D back onto D.

Points of the hull away from the sample are covered by balls whose radius
is one third of their distance to the sample. Each ball U gets a point x_U
of P over the sample point nearest its center; a partition of unity blends
those points and the truncation maps the blend back into the cone.

Ball centers sit on nested grids in the affine frame of the hull. Level l
has spacing h / 2**l; finer levels only keep centers in a band near the
sample, so that every hull point at distance more than h/10 from the
sample lies in some ball.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, cKDTree

from .convex import FiberQuery, PointCloud, Polytope, affine_frame, fiber_point, hull_residual
from .riesz import LatticeVector

logger = logging.getLogger(__name__)

BAND = 5.0  # finer levels keep centers with distance below BAND * sqrt(k) * spacing


class CoverageGap(RuntimeError):
    pass


class PatchRuleViolation(RuntimeError):
    pass


class OutsideHull(ValueError):
    pass


@dataclass
class RetractionStructure:
    d_cloud: PointCloud
    hull: Polytope
    centers: np.ndarray
    radii: np.ndarray
    preimages: np.ndarray
    source: np.ndarray  # index of the cloud point each x_U lies over
    levels: np.ndarray
    grid_spacing: float
    bump_sharpness: float = 1.0
    origin: np.ndarray = field(default=None, repr=False)
    basis: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self._cloud_tree = cKDTree(self.d_cloud.points)
        self._trees = {}
        for lv in np.unique(self.levels):
            idx = np.flatnonzero(self.levels == lv)
            self._trees[int(lv)] = (idx, cKDTree(self.centers[idx]), float(self.radii[idx].max()))

    @property
    def snap_tolerance(self) -> float:
        return self.grid_spacing / 10

    def __len__(self) -> int:
        return len(self.radii)

    def active(self, z: np.ndarray) -> np.ndarray:
        """Indices of patches whose open ball contains ``z``."""
        out = []
        for idx, tree, rmax in self._trees.values():
            for j in tree.query_ball_point(z, rmax):
                if np.linalg.norm(z - self.centers[idx[j]]) < self.radii[idx[j]]:
                    out.append(idx[j])
        return np.array(sorted(out), dtype=int)

    def weights(self, z: np.ndarray, act: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(self.centers[act] - z, axis=1)
        w = np.maximum(0.0, 1.0 - d / self.radii[act]) ** self.bump_sharpness
        return w / w.sum()

    def to_json(self, include_patches: bool = False) -> dict:
        out = {
            "cloud_size": len(self.d_cloud),
            "hull_vertices": len(self.hull),
            "grid_spacing": self.grid_spacing,
            "snap_tolerance": self.snap_tolerance,
            "bump_sharpness": self.bump_sharpness,
            "patches": int(len(self)),
            "patches_per_level": {int(k): int(v) for k, v in zip(*np.unique(self.levels, return_counts=True))},
        }
        if include_patches:
            out["patch_list"] = [
                {"center": c.tolist(), "radius": float(r), "x_U": x.tolist(), "level": int(lv)}
                for c, r, x, lv in zip(self.centers, self.radii, self.preimages, self.levels)
            ]
        return out


def _hull_slack(frame_pts: np.ndarray):
    """Function giving a lower bound on the distance to the hull (0 inside)."""
    k = frame_pts.shape[1]
    if k == 1:
        lo, hi = frame_pts.min(), frame_pts.max()
        return lambda q: np.maximum(np.maximum(lo - q[:, 0], q[:, 0] - hi), 0.0)
    eq = ConvexHull(frame_pts).equations
    return lambda q: np.maximum((q @ eq[:, :-1].T + eq[:, -1]).max(axis=1), 0.0)


def build_retraction(P: Polytope, d_cloud: PointCloud, grid_spacing: float, seed: int,
                     levels: int | None = None, bump_sharpness: float = 1.0) -> RetractionStructure:
    """Whitney-style ball cover of hull(d_cloud) minus the sample, with blended preimages.

    ``seed`` is accepted for interface symmetry; the construction is deterministic.
    """
    if grid_spacing <= 0:
        raise ValueError("grid spacing must be positive")
    pts = np.atleast_2d(d_cloud.points)
    origin, basis = affine_frame(pts)
    k = basis.shape[0]
    if k == 0:
        raise ValueError("sample is a single point; the hull has nothing to retract")
    frame = (pts - origin) @ basis.T
    tree = cKDTree(frame)
    slack = _hull_slack(frame)
    root_k = np.sqrt(k)
    if levels is None:
        # finest spacing s must satisfy 2 sqrt(k) s < h/10
        levels = int(np.ceil(np.log2(20 * root_k))) + 1
    lo, hi = frame.min(axis=0), frame.max(axis=0)

    centers, radii, lvls = [], [], []
    for lv in range(levels + 1):
        s = grid_spacing / 2**lv
        axes = [np.arange(a - s, b + 1.5 * s, s) for a, b in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
        grid = grid[slack(grid) <= s * root_k / 2]
        if lv > 0:
            # coarse prefilter by distance to the band before the exact query
            d, _ = tree.query(grid, distance_upper_bound=BAND * root_k * s)
        else:
            d, _ = tree.query(grid)
        keep = (d > s / 2) & np.isfinite(d)
        centers.append(grid[keep])
        radii.append(d[keep] / 3)
        lvls.append(np.full(int(keep.sum()), lv))
    C = np.vstack(centers)
    R = np.concatenate(radii)
    L = np.concatenate(lvls)
    _, near = tree.query(C)

    # one fiber point per distinct nearest sample point
    cache: dict[int, np.ndarray] = {}
    for i in np.unique(near):
        cache[int(i)] = fiber_point(P, FiberQuery(LatticeVector(np.maximum(pts[i], 0.0)))).coords
    X = np.array([cache[int(i)] for i in near])

    # twice-distance rule: dist(U, u(x_U)) < 2 dist(U, sample), here u(x_U) is the nearest sample point
    ux = (np.maximum(X, 0.0) - origin) @ basis.T
    d_U_ux = np.maximum(np.linalg.norm(ux - C, axis=1) - R, 0.0)
    d_U_D = 2 * R  # distance from the ball to the sample: 3R - R
    bad = np.flatnonzero(d_U_ux >= 2 * d_U_D)
    if bad.size:
        i = int(bad[0])
        raise PatchRuleViolation(f"patch at {C[i].tolist()} has x_U too far ({d_U_ux[i]:.3g} vs {d_U_D[i]:.3g})")

    logger.info("retraction: %d patches over %d levels", len(R), levels + 1)
    return RetractionStructure(
        d_cloud=d_cloud, hull=Polytope(pts), centers=C @ basis + origin, radii=R, preimages=X,
        source=near, levels=L, grid_spacing=grid_spacing, bump_sharpness=bump_sharpness,
        origin=origin, basis=basis,
    )


def _check_in_hull(r: RetractionStructure, z: np.ndarray, tol: float) -> None:
    off = np.linalg.norm((z - r.origin) - ((z - r.origin) @ r.basis.T) @ r.basis)
    if off > tol or hull_residual(r.hull, z)[0] > tol:
        raise OutsideHull(f"{z.tolist()} is outside the hull of the sample")


def blend(r: RetractionStructure, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(active patch indices, sum of phi_U(z) x_U); raises `CoverageGap` if none is active."""
    act = r.active(z)
    if act.size == 0:
        raise CoverageGap(f"no patch contains {z.tolist()}")
    return act, r.weights(z, act) @ r.preimages[act]


def evaluate(r: RetractionStructure, z, check_hull: bool = True, tol: float = 1e-7) -> LatticeVector:
    z = np.asarray(z.coords if isinstance(z, LatticeVector) else z, dtype=float)
    d, i = r._cloud_tree.query(z)
    if d <= r.snap_tolerance:
        return LatticeVector(r.d_cloud.points[i])
    if check_hull:
        _check_in_hull(r, z, tol)
    return LatticeVector(np.maximum(blend(r, z)[1], 0.0))


def sample_pairs(r: RetractionStructure, trials: int, seed: int, max_scale: float | None = None):
    """(cloud index, hull point, distance) triples at log-uniform distances."""
    rng = np.random.default_rng(seed)
    pts = r.d_cloud.points
    k = r.basis.shape[0]
    top = max_scale if max_scale is not None else 4 * r.grid_spacing
    out = []
    while len(out) < trials:
        m = 2 * (trials - len(out))
        yi = rng.integers(len(pts), size=m)
        direc = rng.normal(size=(m, k))
        direc /= np.linalg.norm(direc, axis=1, keepdims=True)
        d = np.exp(rng.uniform(np.log(r.snap_tolerance / 4), np.log(top), size=m))
        z = pts[yi] + (d[:, None] * direc) @ r.basis
        frame = (z - r.origin) @ r.basis.T
        inside = _hull_slack((pts - r.origin) @ r.basis.T)(frame) <= 1e-12
        for j in np.flatnonzero(inside):
            out.append((int(yi[j]), z[j], float(d[j])))
            if len(out) == trials:
                break
    return out


def continuity_certificate(r: RetractionStructure, trials: int, seed: int, max_offenders: int = 10) -> dict:
    """Check |u(x_U) - y| < 6 |z - y| for every active patch U at z, and measure the modulus."""
    pts = r.d_cloud.points
    ux = np.maximum(r.preimages, 0.0)
    violations = 0
    offenders = []
    worst_patch_ratio = 0.0
    modulus = 0.0
    snapped = 0
    for yi, z, d in sample_pairs(r, trials, seed):
        y = pts[yi]
        dz, iz = r._cloud_tree.query(z)
        if dz <= r.snap_tolerance:
            snapped += 1
            out = pts[iz]
        else:
            act, mix = blend(r, z)
            ratio = float(np.max(np.linalg.norm(ux[act] - y, axis=1)) / d)
            worst_patch_ratio = max(worst_patch_ratio, ratio)
            if ratio >= 6.0:
                violations += 1
                if len(offenders) < max_offenders:
                    offenders.append({"y": y.tolist(), "z": z.tolist(), "ratio": ratio})
            out = np.maximum(mix, 0.0)
        modulus = max(modulus, float(np.linalg.norm(out - y) / d))
    return {
        "pairs": trials,
        "snapped": snapped,
        "violations": violations,
        "worst_patch_ratio": worst_patch_ratio,
        "empirical_modulus": modulus,
        "offenders": offenders,
        "passed": violations == 0 and np.isfinite(modulus),
    }


def identity_check(r: RetractionStructure) -> int:
    """Number of cloud points not mapped exactly to themselves."""
    return sum(
        not np.array_equal(evaluate(r, p, check_hull=False).coords, p) for p in r.d_cloud.points
    )
