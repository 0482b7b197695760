"""Kinoshita's tin can with a roll of toilet paper.

T = (disk x {0}) u (circle x [0,1]) u (spiral x [0,1]) in R^3, where the
spiral is theta/(1+theta) (cos theta, sin theta), theta >= 0. The spiral is
truncated at ``theta_max``; its tail stays within 1/(1+theta_max) of the
cylinder, which bounds the error of every distance computed here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .complex import HomologyProfile, rips_homology
from .convex import PointCloud, farthest_points
from .experiments import heuristic_radius

ON_T_TOL = 1e-6
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
STRATA = ("disk", "cylinder", "spiral")


class NotOnT(ValueError):
    pass


@dataclass(frozen=True)
class TinCan:
    theta_max: float = 40.0
    grid_step: float = 2 * np.pi / 64
    theta_tol: float = 1e-10

    def __post_init__(self):
        if self.theta_max <= 0:
            raise ValueError("theta_max must be positive")

    @property
    def truncation_bound(self) -> float:
        return 1.0 / (1.0 + self.theta_max)

    def spiral(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        rho = theta / (1.0 + theta)
        return np.stack([rho * np.cos(theta), rho * np.sin(theta)], axis=-1)

    def spiral_length(self) -> float:
        return float(self._arc_table()[1][-1])

    def _arc_table(self, per_unit: int = 2000):
        th = np.linspace(0.0, self.theta_max, int(per_unit * self.theta_max) + 1)
        speed = np.hypot(1.0 / (1.0 + th) ** 2, th / (1.0 + th))
        return th, cumulative_trapezoid(speed, th, initial=0.0)


def _as_points(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p.reshape(1, 3) if p.ndim == 1 else p


def _interval_gap(z: np.ndarray) -> np.ndarray:
    return np.maximum(np.maximum(-z, z - 1.0), 0.0)


def dist_disk(p: np.ndarray) -> np.ndarray:
    r = np.hypot(p[:, 0], p[:, 1])
    return np.hypot(np.maximum(r - 1.0, 0.0), p[:, 2])


def dist_cylinder(p: np.ndarray) -> np.ndarray:
    r = np.hypot(p[:, 0], p[:, 1])
    return np.hypot(r - 1.0, _interval_gap(p[:, 2]))


def spiral_plane_distance(tc: TinCan, xy: np.ndarray, chunk: int = 2048) -> tuple[np.ndarray, np.ndarray]:
    """Distance in the plane from each row of ``xy`` to the truncated spiral, and the minimizing theta.

    A theta grid finds the three best local minima, each refined by
    golden-section search on its bracket down to ``tc.theta_tol``.
    """
    grid = np.arange(0.0, tc.theta_max + tc.grid_step, tc.grid_step)
    grid[-1] = tc.theta_max
    h = tc.grid_step
    n_iter = int(np.ceil(np.log(tc.theta_tol / (2 * h)) / np.log(GOLDEN))) + 1
    dist = np.empty(len(xy))
    arg = np.empty(len(xy))

    for s in range(0, len(xy), chunk):
        q = xy[s:s + chunk]
        S = tc.spiral(grid)
        f = ((q[:, None, :] - S[None]) ** 2).sum(axis=-1)
        # local minima, endpoints included
        pad = np.pad(f, ((0, 0), (1, 1)), constant_values=np.inf)
        is_min = (f <= pad[:, :-2]) & (f <= pad[:, 2:])
        score = np.where(is_min, f, np.inf)
        top = np.argsort(score, axis=1)[:, :3]
        valid = np.take_along_axis(np.isfinite(score), top, axis=1)
        lo = np.clip(grid[top] - h, 0.0, tc.theta_max)
        hi = np.clip(grid[top] + h, 0.0, tc.theta_max)

        def obj(th):
            S = tc.spiral(th)
            return ((q[:, None, :] - S) ** 2).sum(axis=-1)

        a, b = lo, hi
        c = b - GOLDEN * (b - a)
        d = a + GOLDEN * (b - a)
        fc, fd = obj(c), obj(d)
        for _ in range(n_iter):
            left = fc < fd
            b = np.where(left, d, b)
            a = np.where(left, a, c)
            d_new = np.where(left, c, a + GOLDEN * (b - a))
            c_new = np.where(left, b - GOLDEN * (b - a), d)
            fd_new = np.where(left, fc, np.nan)
            fc_new = np.where(left, np.nan, fd)
            c, d = c_new, d_new
            need_c = np.isnan(fc_new)
            need_d = np.isnan(fd_new)
            fc = np.where(need_c, obj(c), fc_new)
            fd = np.where(need_d, obj(d), fd_new)
        th = 0.5 * (a + b)
        cand = np.concatenate([th, lo, hi], axis=1)
        vals = np.where(np.concatenate([valid] * 3, axis=1), obj(cand), np.inf)
        best = np.argmin(vals, axis=1)
        dist[s:s + chunk] = np.sqrt(vals[np.arange(len(q)), best])
        arg[s:s + chunk] = cand[np.arange(len(q)), best]
    return dist, arg


def dist_spiral_wall(tc: TinCan, p: np.ndarray) -> np.ndarray:
    d, _ = spiral_plane_distance(tc, p[:, :2])
    return np.hypot(d, _interval_gap(p[:, 2]))


def dist_T(p, tc: TinCan = TinCan(), strata: bool = False):
    """Distance from each point to the (truncated) tin can.

    With ``strata`` also returns the per-stratum distances as columns in
    the order disk, cylinder, spiral.
    """
    pts = _as_points(p)
    cols = np.column_stack([dist_disk(pts), dist_cylinder(pts), dist_spiral_wall(tc, pts)])
    d = cols.min(axis=1)
    if np.ndim(p) == 1:
        d = float(d[0])
    return (d, cols) if strata else d


def allocate(n: int, weights) -> np.ndarray:
    """Largest-remainder split of ``n`` in proportion to ``weights``."""
    w = np.asarray(weights, dtype=float)
    raw = n * w / w.sum()
    out = np.floor(raw).astype(int)
    extra = n - out.sum()
    out[np.argsort(-(raw - out), kind="stable")[:extra]] += 1
    return out


def stratum_areas(tc: TinCan) -> np.ndarray:
    return np.array([np.pi, 2 * np.pi, tc.spiral_length()])


def sample_T(n: int, theta_max: float = 40.0, seed: int = 0, with_labels: bool = False):
    """Stratified sample with per-stratum counts proportional to area."""
    if n < 1:
        raise ValueError("need at least one sample")
    tc = TinCan(theta_max)
    rng = np.random.default_rng(seed)
    k_disk, k_cyl, k_sp = allocate(n, stratum_areas(tc))

    r = np.sqrt(rng.random(k_disk))
    a = rng.uniform(0, 2 * np.pi, k_disk)
    disk = np.column_stack([r * np.cos(a), r * np.sin(a), np.zeros(k_disk)])

    a = rng.uniform(0, 2 * np.pi, k_cyl)
    cyl = np.column_stack([np.cos(a), np.sin(a), rng.random(k_cyl)])

    th, arc = tc._arc_table()
    theta = np.interp(rng.random(k_sp) * arc[-1], arc, th)
    sp = np.column_stack([tc.spiral(theta), rng.random(k_sp)])

    pts = np.vstack([disk, cyl, sp])
    cloud = PointCloud(pts, seed=seed, source="kinoshita-T")
    if with_labels:
        labels = np.repeat(np.arange(3), [k_disk, k_cyl, k_sp])
        return cloud, labels
    return cloud


def contract_T(p, t: float, tc: TinCan = TinCan(), check: bool = True) -> np.ndarray:
    """Vertical retraction onto the disk for t <= 1/2, then radial compression to the origin."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    pts = _as_points(p).copy()
    if check:
        d = np.atleast_1d(dist_T(pts, tc))
        if np.any(d > ON_T_TOL):
            raise NotOnT(f"point at distance {d.max():.3g} from T")
    if t <= 0.5:
        pts[:, 2] *= 1.0 - 2.0 * t
    else:
        pts[:, :2] *= 2.0 - 2.0 * t
        pts[:, 2] = 0.0
    return pts[0] if np.ndim(p) == 1 else pts


def trajectory_check(points: np.ndarray, steps: int = 100, tc: TinCan = TinCan()) -> dict:
    """Follow every point through the contraction and measure its distance to T."""
    ts = np.linspace(0.0, 1.0, steps)
    path = np.stack([contract_T(points, t, tc, check=False) for t in ts], axis=1)
    worst = np.asarray(dist_T(path.reshape(-1, 3), tc)).reshape(len(points), steps).max(axis=1)
    start_ok = bool(np.array_equal(path[:, 0], points))
    end_ok = bool(np.all(path[:, -1] == 0.0))
    return {
        "trajectories": int(len(points)),
        "time_samples": steps,
        "max_distance": float(worst.max()),
        "off_surface": int(np.count_nonzero(worst > ON_T_TOL)),
        "endpoints_exact": start_ok and end_ok,
        "passed": bool(worst.max() <= ON_T_TOL and start_ok and end_ok),
    }


def spread_sample_T(n: int, theta_max: float, seed: int, oversample: int = 20000) -> PointCloud:
    """Farthest-point thinning of a large area-proportional sample.

    Area-proportional samples put most points on the tightly wound outer
    turns of the spiral wall, which sit within a thin shell of R^3; thinning
    spreads the points evenly in space.
    """
    big = sample_T(max(n, oversample), theta_max, seed).points
    return PointCloud(big[farthest_points(big, n, seed)], seed=seed, source="kinoshita-T")


def acyclicity_experiment(n: int, theta_max: float, radius: float | None, seed: int,
                          coeff: float = 3.0) -> HomologyProfile:
    """Betti numbers of the Rips complex of an n-point sample of T (heuristic radius if None)."""
    return acyclicity_run(n, theta_max, radius, seed, coeff).profile


def acyclicity_run(n: int, theta_max: float, radius: float | None, seed: int, coeff: float = 3.0):
    pts = spread_sample_T(n, theta_max, seed).points
    r = heuristic_radius(pts, coeff) if radius is None else radius
    return rips_homology(pts, r)
