"""Compressive covers for the truncation map and the constructive lift.

A compressive pair is a sup ball (inner radius inside outer radius) in the
cone together with a fiber basepoint; the straight-line homotopy to the
basepoint contracts the preimage of the inner ball inside the preimage of
the outer ball. `lift_map` lifts a map of a finite complex into u(P) to a
map into P, skeleton by skeleton, coning from simplex barycenters through
those contractions.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .complex import GeometricComplex, Simplex, subdivide
from .convex import (
    FEAS_TOL,
    FiberQuery,
    PointCloud,
    Polytope,
    fiber_point,
    fiber_pool,
    hull_residual,
    near_fiber_points,
    sample,
    solid_radius,
    truncate_cloud,
)
from .riesz import ORDER_TOL, LatticeVector, as_vector

logger = logging.getLogger(__name__)

MapFn = Callable[[np.ndarray], np.ndarray]


class NotCompressive(RuntimeError):
    """Straight-line contraction left the outer ball on a sampled point."""


class StarRefinementError(RuntimeError):
    pass


class SubdivisionCapExceeded(RuntimeError):
    pass


class LiftResidualExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class CompressivePair:
    center: np.ndarray
    r_inner: float
    r_outer: float
    basepoint: np.ndarray

    def __post_init__(self):
        if not 0 < self.r_inner <= self.r_outer:
            raise ValueError(f"need 0 < r_inner <= r_outer, got {self.r_inner}, {self.r_outer}")

    def contract(self, x: np.ndarray, t) -> np.ndarray:
        """Witness homotopy (1 - t) x + t * basepoint."""
        return (1.0 - t) * x + t * self.basepoint

    def to_json(self) -> dict:
        return {"center": self.center.tolist(), "r_inner": self.r_inner,
                "r_outer": self.r_outer, "basepoint": self.basepoint.tolist()}


def certify_pair(P: Polytope, pair: CompressivePair, trials: int, seed: int,
                 times: int = 11, bases: np.ndarray | None = None) -> float:
    """Worst sup distance from the center reached by the witness on sampled points.

    Samples points of P whose truncation lies in the inner ball (near the
    fiber points ``bases``, by default the basepoint and one more) and
    follows the straight line to the basepoint at ``times`` equally spaced
    t values. Raises `NotCompressive` if the outer ball is ever left.
    """
    rng = np.random.default_rng(seed)
    if bases is None:
        q = FiberQuery(LatticeVector(pair.center))
        bases = np.array([b.coords for b in fiber_pool(P, q, 2, rng, LatticeVector(pair.basepoint))])
    per = max(1, trials // len(bases))
    xs = np.vstack([near_fiber_points(P, b, pair.r_inner, per, rng) for b in bases])
    xs = xs[np.max(np.abs(np.maximum(xs, 0) - pair.center), axis=1) <= pair.r_inner]
    ts = np.linspace(0.0, 1.0, times)
    path = pair.contract(xs[:, None, :], ts[None, :, None])
    worst = float(np.max(np.abs(np.maximum(path, 0.0) - pair.center))) if len(xs) else 0.0
    if worst > pair.r_outer + ORDER_TOL:
        raise NotCompressive(f"witness at {pair.center.tolist()} reaches {worst:.3g} > {pair.r_outer:.3g}")
    return worst


def make_pair(P: Polytope, center, r_outer: float, trials: int, seed: int,
              pool_size: int = 2) -> CompressivePair:
    if r_outer <= 0:
        raise ValueError("outer radius must be positive")
    c = np.maximum(as_vector(center).coords, 0.0)
    q = FiberQuery(LatticeVector(c))
    rng = np.random.default_rng(seed)
    pool = np.array([b.coords for b in fiber_pool(P, q, pool_size, rng)])
    r_inner = solid_radius(P, c, r_outer, trials, seed, bases=pool)
    pair = CompressivePair(c, r_inner, r_outer, pool[0])
    certify_pair(P, pair, trials, seed + 1, bases=pool)
    return pair


@dataclass
class Cover:
    pairs: list[CompressivePair]
    level: int = 0
    refines: list[int] | None = None  # witness: index of the coarser pair per pair

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def centers(self) -> np.ndarray:
        return np.array([p.center for p in self.pairs])

    @property
    def inner(self) -> np.ndarray:
        return np.array([p.r_inner for p in self.pairs])

    @property
    def outer(self) -> np.ndarray:
        return np.array([p.r_outer for p in self.pairs])

    def inner_ball_containing(self, pts: np.ndarray, prefer: Sequence[int] = ()) -> int | None:
        """Index of a pair whose closed inner ball holds every row of ``pts``."""
        pts = np.atleast_2d(pts)
        for i in prefer:
            p = self.pairs[i]
            if np.max(np.abs(pts - p.center)) <= p.r_inner:
                return i
        spread = np.max(np.abs(pts[None, :, :] - self.centers[:, None, :]), axis=(1, 2))
        ok = np.flatnonzero(spread <= self.inner)
        return int(ok[0]) if ok.size else None

    def covers(self, pts: np.ndarray, which: str = "inner") -> np.ndarray:
        radii = self.inner if which == "inner" else self.outer
        d = np.max(np.abs(np.atleast_2d(pts)[:, None, :] - self.centers[None]), axis=2)
        return np.any(d <= radii[None], axis=1)

    def to_json(self) -> dict:
        return {"level": self.level, "size": len(self.pairs),
                "r_outer_max": float(self.outer.max()), "r_inner_min": float(self.inner.min())}


def build_cover(P: Polytope, d_cloud: PointCloud, r_outer: float, seed: int,
                trials: int = 32, net_fraction: float = 1.0) -> Cover:
    """Greedy net over the cloud in index order.

    A sample counts as covered once it is within ``net_fraction * r_inner``
    of a chosen center; with ``net_fraction < 1`` every sample sits well
    inside some inner ball, which gives the cover a Lebesgue number.
    """
    pts = np.atleast_2d(d_cloud.points)
    covered = np.zeros(len(pts), dtype=bool)
    pairs = []
    for i in range(len(pts)):
        if covered[i]:
            continue
        pair = make_pair(P, pts[i], r_outer, trials, seed + len(pairs))
        pairs.append(pair)
        covered |= np.max(np.abs(pts - pair.center), axis=1) <= net_fraction * pair.r_inner
    cover = Cover(pairs)
    assert cover.covers(pts).all()
    return cover


def star_witness(fine: Cover, coarse: Cover) -> list[int]:
    """For every fine pair, a coarse pair whose inner ball holds its star.

    The star of a fine pair is the union of the fine outer balls meeting
    its outer ball; sup balls make the containment test exact:
    B(c, r) lies in B(C, R) iff |c - C| + r <= R.
    """
    C = fine.centers
    R = fine.outer
    witness = []
    for a, p in enumerate(fine.pairs):
        meets = np.flatnonzero(np.max(np.abs(C - p.center), axis=1) <= R + p.r_outer)
        reach = np.max(np.abs(C[meets][:, None, :] - coarse.centers[None]), axis=2) + R[meets][:, None]
        ok = np.flatnonzero(np.all(reach <= coarse.inner[None], axis=0))
        if not ok.size:
            raise StarRefinementError(f"no coarse pair holds the star of fine pair {a} at {p.center.tolist()}")
        witness.append(int(ok[np.argmin(np.max(reach[:, ok], axis=0))]))
    return witness


def star_refine(c: Cover, P: Polytope, d_cloud: PointCloud, seed: int,
                trials: int = 32, net_fraction: float = 0.5, shrink: float = 8.0) -> Cover:
    """Compressive cover whose stars sit inside inner balls of ``c``.

    The new outer radius is min(r_inner of ``c``) / ``shrink``; the default
    8 leaves room for a coarse net built at half the inner radius.
    """
    if shrink < 4:
        raise ValueError("shrink factor below 4 cannot guarantee a star refinement")
    fine = build_cover(P, d_cloud, float(c.inner.min()) / shrink, seed, trials, net_fraction)
    fine.level = c.level - 1
    fine.refines = star_witness(fine, c)
    return fine


@dataclass
class LiftConfig:
    residual_tolerance: float = 0.05
    max_subdivisions: int = 6
    samples_per_simplex: int = 8
    cover_samples: int = 1500
    pair_trials: int = 24
    fiber_tolerance: float = FEAS_TOL

    def __post_init__(self):
        if self.residual_tolerance <= 0:
            raise ValueError("residual tolerance must be positive")


@dataclass
class LiftResult:
    domain: GeometricComplex
    vertex_images: np.ndarray
    cone_basepoints: dict[Simplex, np.ndarray]
    cone_pairs: dict[Simplex, CompressivePair]
    covers: list[Cover]
    subdivisions: int
    residual: float = 0.0
    prescribed: dict[int, np.ndarray] = field(default_factory=dict)
    cover_fallbacks: int = 0  # simplices coned through a pair of the level cover

    def evaluate(self, simplex: Simplex, bary) -> np.ndarray:
        """Lift at the point of ``simplex`` with barycentric coordinates ``bary``.

        The point is written as (1 - t) of the way from the barycenter to a
        boundary point p; the value is (1 - t) * lift(p) + t * basepoint.
        """
        lam = np.asarray(bary, dtype=float)
        k = len(simplex) - 1
        if k == 0:
            return self.vertex_images[simplex[0]]
        i = int(np.argmin(lam))
        m = lam[i]
        s = 1.0 - (k + 1) * m
        base = self.cone_basepoints[simplex]
        if s <= 1e-15:
            return base.copy()
        p = np.delete((lam - m) / s, i)
        p = np.clip(p, 0.0, None)
        p /= p.sum()
        xp = self.evaluate(simplex[:i] + simplex[i + 1:], p)
        return s * xp + (1.0 - s) * base

    def simplices(self) -> list[Simplex]:
        return self.domain.complex.all_simplices()

    def to_json(self) -> dict:
        return {
            "subdivisions": self.subdivisions,
            "domain_counts": self.domain.complex.counts(),
            "cover_sizes": [len(c) for c in self.covers],
            "covers": [c.to_json() for c in self.covers],
            "residual": self.residual,
            "cover_fallbacks": self.cover_fallbacks,
            "prescribed_vertices": sorted(self.prescribed),
        }


def _bary_samples(k: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Vertices, barycenter and ``count`` flat-Dirichlet points of a k-simplex."""
    pts = [np.eye(k + 1), np.full((1, k + 1), 1.0 / (k + 1))]
    if count:
        g = rng.exponential(size=(count, k + 1))
        pts.append(g / g.sum(axis=1, keepdims=True))
    return np.vstack(pts)


def _fits(G: GeometricComplex, g: MapFn, covers: Sequence[Cover], count: int, seed: int) -> tuple[bool, int]:
    """Every k-simplex (k >= 1) has its sampled g-image in an inner ball of level k."""
    rng = np.random.default_rng(seed)
    bad = 0
    for k in range(1, G.complex.dim + 1):
        for s in G.complex.simplices[k]:
            bary = _bary_samples(k, count, rng)
            if covers[k].inner_ball_containing(g(bary @ G.positions[list(s)])) is None:
                bad += 1
    return bad == 0, bad


def lift_map(K: GeometricComplex, g: MapFn, P: Polytope, cfg: LiftConfig, seed: int,
             prescribed: Mapping[int, LatticeVector | np.ndarray] | None = None) -> LiftResult:
    """Lift ``g: |K| -> u(P)`` to ``gamma: |K| -> P`` with u(gamma) close to g.

    ``g`` maps an (N, d) array of domain positions to an (N, n) array of
    points of u(P). ``prescribed`` fixes the lifts of some vertices of K
    (labels survive subdivision); their truncations must match g.
    """
    prescribed = {int(v): as_vector(x).coords for v, x in (prescribed or {}).items()}
    tol = cfg.residual_tolerance
    for v, x in prescribed.items():
        gv = g(K.positions[[v]])[0]
        if np.max(np.abs(np.maximum(x, 0) - gv)) > cfg.fiber_tolerance + ORDER_TOL:
            raise ValueError(f"prescribed lift of vertex {v} does not cover g({v})")
        if hull_residual(P, x)[0] > cfg.fiber_tolerance:
            raise ValueError(f"prescribed lift of vertex {v} is outside P")
    n = max(K.complex.dim, 0)

    # the cover must see the whole image of g, so add g-values at random domain points
    rng = np.random.default_rng(seed)
    extra = [g(_bary_samples(len(s) - 1, 4, rng) @ K.positions[list(s)]) for s in K.complex.all_simplices()]
    cloud = np.vstack([truncate_cloud(sample(P, cfg.cover_samples, seed)).points, *extra])
    d_cloud = PointCloud(np.maximum(cloud, 0.0), seed=seed, source="truncated-D")

    covers: list[Cover | None] = [None] * (n + 1)
    top = build_cover(P, d_cloud, tol / 2, seed, cfg.pair_trials, net_fraction=0.5)
    top.level = n
    covers[n] = top
    for k in range(n - 1, -1, -1):
        covers[k] = star_refine(covers[k + 1], P, d_cloud, seed + 1000 * (n - k), cfg.pair_trials)

    G = K
    subdivisions = 0
    while True:
        ok, bad = _fits(G, g, covers, cfg.samples_per_simplex, seed)
        if ok:
            break
        if subdivisions >= cfg.max_subdivisions:
            raise SubdivisionCapExceeded(f"{bad} simplices still too large after {subdivisions} subdivisions")
        G = subdivide(G)
        subdivisions += 1
    logger.info("lift domain after %d subdivisions: %s", subdivisions, G.complex.counts())

    images = np.empty((G.complex.vertex_count, P.dim))
    gv = g(G.positions)
    for v in range(G.complex.vertex_count):
        if v in prescribed:
            images[v] = prescribed[v]
        else:
            images[v] = fiber_point(P, FiberQuery(np.maximum(gv[v], 0.0), cfg.fiber_tolerance)).coords
    result = LiftResult(G, images, {}, {}, covers, subdivisions, prescribed=prescribed)

    for k in range(1, G.complex.dim + 1):
        for s in G.complex.simplices[k]:
            vals = []
            for f in range(k + 1):
                face = s[:f] + s[f + 1:]
                fb = _bary_samples(k - 1, cfg.samples_per_simplex, rng)
                vals.extend(result.evaluate(face, b) for b in fb)
            u_bdry = np.maximum(np.array(vals), 0.0)
            # a pair centered at g(barycenter) keeps the cone point over g when it fits
            gb = np.maximum(g(G.positions[list(s)].mean(axis=0)[None])[0], 0.0)
            pair = make_pair(P, gb, float(covers[k].outer.min()), cfg.pair_trials,
                             seed + len(result.cone_pairs), pool_size=1)
            if np.max(np.abs(u_bdry - pair.center)) > pair.r_inner:
                idx = covers[k].inner_ball_containing(u_bdry)
                if idx is None:
                    raise LiftResidualExceeded(f"boundary image of {s} fits in no inner ball of level {k}")
                pair = covers[k].pairs[idx]
                result.cover_fallbacks += 1
            result.cone_pairs[s] = pair
            result.cone_basepoints[s] = pair.basepoint

    result.residual = lift_residual(g, result, cfg.samples_per_simplex, seed)
    if result.residual > tol:
        raise LiftResidualExceeded(f"residual {result.residual:.4g} > tolerance {tol:.4g}")
    return result


def sample_domain(result: LiftResult, samples: int, seed: int):
    """(simplex, barycentric, position) triples; nested in ``samples`` for a fixed seed."""
    G = result.domain
    out = []
    for idx, s in enumerate(G.complex.all_simplices()):
        k = len(s) - 1
        rng = np.random.default_rng([seed, idx])
        g = rng.exponential(size=(samples, k + 1))
        bary = np.vstack([np.eye(k + 1), np.full((1, k + 1), 1.0 / (k + 1)),
                          g / g.sum(axis=1, keepdims=True)])
        for b in bary:
            out.append((s, b, b @ G.positions[list(s)]))
    return out


def lift_residual(g: MapFn, result: LiftResult, samples: int, seed: int) -> float:
    """Sup distance between g and u(gamma) on vertices, barycenters and random points."""
    pts = sample_domain(result, samples, seed)
    pos = np.array([p for _, _, p in pts])
    gam = np.array([result.evaluate(s, b) for s, b, _ in pts])
    return float(np.max(np.abs(g(pos) - np.maximum(gam, 0.0))))


def null_homotopy_certificate(result: LiftResult, P: Polytope, samples: int, seed: int,
                              steps: int = 11) -> dict:
    """Contract the lifted map straight to the lift of one vertex inside P.

    Checks at sampled points that the homotopy stays in P and that its
    truncation stays inside the outer balls of the top cover.
    """
    pts = sample_domain(result, samples, seed)
    gam = np.array([result.evaluate(s, b) for s, b, _ in pts])
    anchor = result.vertex_images[0]
    ts = np.linspace(0.0, 1.0, steps)
    H = (1.0 - ts)[None, :, None] * gam[:, None, :] + ts[None, :, None] * anchor
    flat = H.reshape(-1, H.shape[-1])
    top = result.covers[-1]
    in_cover = top.covers(np.maximum(flat, 0.0), which="outer")
    rng = np.random.default_rng(seed)
    probe = rng.choice(len(flat), size=min(len(flat), 200), replace=False)
    hull = max(hull_residual(P, flat[i])[0] for i in probe)
    ends_ok = bool(np.allclose(H[:, 0], gam) and np.all(H[:, -1] == anchor))
    return {
        "points": int(len(flat)),
        "outside_cover": int(np.count_nonzero(~in_cover)),
        "max_hull_residual": hull,
        "endpoints_ok": ends_ok,
        "passed": bool(in_cover.all() and hull <= FEAS_TOL and ends_ok),
    }


def truncated_segment_path(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Breakpoints of s -> u(a + s (b - a)) on [0, 1] as (parameters, polyline)."""
    a = as_vector(a).coords
    b = as_vector(b).coords
    d = b - a
    cuts = {0.0, 1.0}
    for i in range(len(a)):
        if d[i] != 0:
            s = -a[i] / d[i]
            if 0 < s < 1:
                cuts.add(float(s))
    ss = np.array(sorted(cuts))
    return ss, np.maximum(a + ss[:, None] * d, 0.0)


def arc_loop(polyline: np.ndarray) -> MapFn:
    """Map of the plane minus the origin onto a polyline, out and back.

    The angle of a domain point, in [0, 2 pi), runs the polyline at
    constant speed from its start to its end and back again.
    """
    poly = np.asarray(polyline, dtype=float)
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 0])
    poly = poly[keep]
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(poly, axis=0), axis=1))])
    total = cum[-1]

    def g(points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        phi = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2 * np.pi)
        tau = np.where(phi <= np.pi, phi / np.pi, 2.0 - phi / np.pi)
        if total == 0:
            return np.repeat(poly[:1], len(pts), axis=0)
        arc = tau * total
        return np.column_stack([np.interp(arc, cum, poly[:, j]) for j in range(poly.shape[1])])

    return g


def constant_map(y) -> MapFn:
    y = as_vector(y).coords

    def g(points: np.ndarray) -> np.ndarray:
        return np.repeat(y[None], len(np.atleast_2d(points)), axis=0)

    return g


class PiecewiseLinearMap:
    """Simplexwise-linear map of a geometric complex given by vertex images.

    Called on positions, it locates each point in the top simplex whose
    affine hull fits it best (least-squares barycentric coordinates, with
    negative weights penalized) and interpolates the vertex images.
    """

    def __init__(self, K: GeometricComplex, images):
        self.K = K
        self.images = np.atleast_2d(np.asarray(images, dtype=float))
        if len(self.images) != K.complex.vertex_count:
            raise ValueError("need one image per vertex")
        levels = K.complex.simplices
        faces = set()
        for level in levels[1:]:
            for t in level:
                faces.update(itertools.combinations(t, len(t) - 1))
        self.tops = [s for level in levels for s in level if s not in faces]

    def locate(self, x: np.ndarray) -> tuple[Simplex, np.ndarray]:
        best = None
        for s in self.tops:
            V = self.K.positions[list(s)]
            A = np.vstack([V.T, np.ones(len(s))])
            lam, *_ = np.linalg.lstsq(A, np.append(x, 1.0), rcond=None)
            err = np.linalg.norm(A @ lam - np.append(x, 1.0)) + max(0.0, -lam.min())
            if best is None or err < best[0]:
                best = (err, s, lam)
        lam = np.clip(best[2], 0.0, None)
        return best[1], lam / lam.sum()

    def __call__(self, points: np.ndarray) -> np.ndarray:
        out = []
        for x in np.atleast_2d(points):
            s, lam = self.locate(x)
            out.append(lam @ self.images[list(s)])
        return np.array(out)


def export_csv(result: LiftResult, path, samples: int, seed: int) -> None:
    """Rows of domain point followed by its lifted image."""
    with open(path, "w") as fh:
        for s, b, pos in sample_domain(result, samples, seed):
            row = np.concatenate([pos, result.evaluate(s, b)])
            fh.write(",".join(repr(v) for v in row.tolist()) + "\n")
