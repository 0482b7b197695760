"""V-polytopes, seeded point clouds, and fibers of the truncation map.

Membership and fiber feasibility are linear programs (HiGHS through
scipy); the fiber representative is the solution of a small convex QP
solved with Clarabel.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import clarabel
import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.spatial import Delaunay

from .riesz import ORDER_TOL, LatticeVector, DimensionMismatch, as_vector

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-9

Source = Literal["sampled-C", "truncated-D", "kinoshita-T", "external"]


class EmptyFiber(ValueError):
    """The requested target is not in the truncated image of the polytope."""


class Polytope:
    """Convex hull of a finite vertex list (repeats and flat hulls allowed)."""

    def __init__(self, vertices):
        if isinstance(vertices, np.ndarray):
            V = np.array(vertices, dtype=float)
        else:
            V = np.array([as_vector(v).coords for v in vertices], dtype=float)
        if V.ndim == 1:
            V = V[None, :]
        if V.shape[0] < 1 or V.shape[1] < 1:
            raise ValueError("a polytope needs at least one vertex")
        if not np.all(np.isfinite(V)):
            raise ValueError("non-finite vertex coordinate")
        V.setflags(write=False)
        self.vertices = V
        self._fiber_program: _FiberProgram | None = None

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def __len__(self) -> int:
        return self.vertices.shape[0]

    def __repr__(self) -> str:
        return f"Polytope({self.vertices.tolist()!r})"

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def diameter(self) -> float:
        V = self.vertices
        return float(np.max(np.linalg.norm(V[:, None] - V[None], axis=-1)))

    def fiber_program(self) -> "_FiberProgram":
        if self._fiber_program is None:
            self._fiber_program = _FiberProgram(self.vertices)
        return self._fiber_program


@dataclass
class PointCloud:
    points: np.ndarray
    seed: int | None = None
    source: Source = "external"

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def vectors(self) -> list[LatticeVector]:
        return [LatticeVector(p) for p in self.points]


@dataclass(frozen=True)
class FiberQuery:
    target: LatticeVector
    tolerance: float = FEAS_TOL

    def __post_init__(self):
        object.__setattr__(self, "target", as_vector(self.target))
        if self.tolerance <= 0:
            raise ValueError("fiber tolerance must be positive")
        if np.any(self.target.coords < 0):
            raise ValueError(f"fiber target {self.target} is not in the cone")


def _dims(P: Polytope, x: np.ndarray) -> None:
    if x.shape[-1] != P.dim:
        raise DimensionMismatch(f"point of dimension {x.shape[-1]} vs polytope dimension {P.dim}")


def hull_residual(P: Polytope, x) -> tuple[float, np.ndarray]:
    """Sup-norm distance from ``x`` to conv(vertices) and the weights attaining it."""
    x = as_vector(x).coords
    _dims(P, x)
    V = P.vertices
    m, n = V.shape
    hit = np.flatnonzero(np.all(V == x, axis=1))
    if hit.size:
        lam = np.zeros(m)
        lam[hit[0]] = 1.0
        return 0.0, lam
    # variables (lambda_1..m, s): minimize s with |V^T lambda - x| <= s
    c = np.zeros(m + 1)
    c[-1] = 1.0
    A_ub = np.block([[V.T, -np.ones((n, 1))], [-V.T, -np.ones((n, 1))]])
    b_ub = np.concatenate([x, -x])
    A_eq = np.concatenate([np.ones(m), [0.0]])[None, :]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * (m + 1), method="highs")
    if res.status != 0:
        raise RuntimeError(f"membership LP failed: {res.message}")
    lam = np.clip(res.x[:m], 0.0, None)
    lam /= lam.sum()
    return float(np.max(np.abs(V.T @ lam - x))), lam


def contains(P: Polytope, x, tol: float = FEAS_TOL) -> bool:
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    return hull_residual(P, x)[0] <= tol


def affine_frame(points: np.ndarray, rel_tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Origin and orthonormal basis (rows) of the affine hull of ``points``."""
    origin = points.mean(axis=0)
    if len(points) == 1:
        return origin, np.zeros((0, points.shape[1]))
    _, sv, vt = np.linalg.svd(points - origin, full_matrices=False)
    rank = int(np.sum(sv > rel_tol * max(sv[0], 1.0)))
    return origin, vt[:rank]


def _simplices(P: Polytope) -> np.ndarray:
    """Vertex-index simplices tiling P inside its affine hull."""
    V = P.vertices
    origin, basis = affine_frame(V)
    r = basis.shape[0]
    if r == 0:
        return np.zeros((1, 1), dtype=int)
    coords = (V - origin) @ basis.T
    if r == 1:
        return np.array([[int(np.argmin(coords[:, 0])), int(np.argmax(coords[:, 0]))]])
    return Delaunay(coords).simplices


def sample(P: Polytope, n: int, seed: int, scheme: Literal["uniform", "dirichlet"] = "uniform") -> PointCloud:
    """Seeded random convex combinations of the vertices.

    ``dirichlet`` draws flat-Dirichlet weights over all vertices. ``uniform``
    picks a simplex of a triangulation of P with probability proportional
    to its volume and draws flat-Dirichlet weights over that simplex's
    vertices, which is uniform on P.
    """
    if n < 1:
        raise ValueError("sample size must be at least 1")
    rng = np.random.default_rng(seed)
    V = P.vertices
    if scheme == "dirichlet":
        g = rng.exponential(size=(n, len(P)))
        return PointCloud((g / g.sum(axis=1, keepdims=True)) @ V, seed=seed, source="sampled-C")
    if scheme != "uniform":
        raise ValueError(f"unknown sampling scheme {scheme!r}")
    simp = _simplices(P)
    if simp.shape[1] == 1:
        return PointCloud(np.repeat(V[simp[0]], n, axis=0), seed=seed, source="sampled-C")
    origin, basis = affine_frame(V)
    edges = (V[simp[:, 1:]] - V[simp[:, :1]]) @ basis.T
    vol = np.abs(np.linalg.det(edges)) if edges.shape[1] > 1 else np.abs(edges[:, 0, 0])
    which = rng.choice(len(simp), size=n, p=vol / vol.sum())
    g = rng.exponential(size=(n, simp.shape[1]))
    w = g / g.sum(axis=1, keepdims=True)
    pts = np.einsum("ij,ijk->ik", w, V[simp[which]])
    return PointCloud(pts, seed=seed, source="sampled-C")


def truncate_cloud(c: PointCloud) -> PointCloud:
    return PointCloud(np.maximum(c.points, 0.0), seed=c.seed, source="truncated-D")


def sup_dist(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


class _FiberProgram:
    """Parametrized programs over the fiber {x in P : u(x) = y}.

    The fiber is {x in P : x_i = y_i where y_i > 0, x_i <= 0 where y_i = 0},
    written uniformly as ``x <= y + s`` and ``mask * x >= mask * (y - s)``.
    """

    def __init__(self, V: np.ndarray):
        self.V = V
        m = V.shape[0]
        self.P = sparse.triu(sparse.csc_matrix(2.0 * V @ V.T), format="csc")
        self.settings = clarabel.DefaultSettings()
        self.settings.verbose = False
        self.settings.tol_feas = 1e-11
        self.settings.tol_gap_abs = 1e-11
        self.settings.tol_gap_rel = 1e-11
        self.settings.tol_ktratio = 1e-9
        self._eq = np.ones((1, m))
        self._nonneg = -np.eye(m)

    def slack(self, y: np.ndarray) -> float:
        """Smallest s for which the relaxed fiber is nonempty (an LP in (lam, s))."""
        V = self.V
        m, n = V.shape
        pos = y > 0
        k = int(pos.sum())
        A = np.block([
            [self._eq, np.zeros((1, 1))],
            [self._nonneg, np.zeros((m, 1))],
            [V.T, -np.ones((n, 1))],
            [-V.T[pos], -np.ones((k, 1))],
        ])
        b = np.concatenate([[1.0], np.zeros(m), y, -y[pos]])
        c = np.zeros(m + 1)
        c[-1] = 1.0
        cones = [clarabel.ZeroConeT(1), clarabel.NonnegativeConeT(len(b) - 1)]
        solver = clarabel.DefaultSolver(sparse.csc_matrix((m + 1, m + 1)), c, sparse.csc_matrix(A), b,
                                        cones, self.settings)
        sol = solver.solve()
        if str(sol.status) not in ("Solved", "AlmostSolved"):
            raise RuntimeError(f"fiber feasibility LP status {sol.status}")
        return max(float(sol.x[-1]), 0.0)

    def solve(self, y: np.ndarray, slack: float, anchor: np.ndarray) -> np.ndarray:
        """Weights minimizing |V^T lam - anchor|^2 over the relaxed fiber, as a point."""
        V = self.V
        m = V.shape[0]
        pos = y > 0
        A = np.vstack([self._eq, self._nonneg, V.T, -V.T[pos]])
        b = np.concatenate([[1.0], np.zeros(m), y + slack, slack - y[pos]])
        cones = [clarabel.ZeroConeT(1), clarabel.NonnegativeConeT(len(b) - 1)]
        solver = clarabel.DefaultSolver(self.P, -2.0 * (V @ anchor), sparse.csc_matrix(A), b,
                                        cones, self.settings)
        sol = solver.solve()
        if str(sol.status) not in ("Solved", "AlmostSolved"):
            raise RuntimeError(f"fiber QP status {sol.status}")
        lam = np.clip(np.asarray(sol.x), 0.0, None)
        lam /= lam.sum()
        return lam @ V


def fiber_point(P: Polytope, q: FiberQuery, anchor=None) -> LatticeVector:
    """Point of P in the fiber over ``q.target`` closest to ``anchor`` (default 0).

    With the default anchor this is the minimum-Euclidean-norm fiber point.
    Raises `EmptyFiber` if the target is not within tolerance of u(P).
    """
    y = q.target.coords
    _dims(P, y)
    prog = P.fiber_program()
    s = prog.slack(y)
    if s > q.tolerance:
        raise EmptyFiber(f"{q.target} is not in the truncated image (gap {s:.3g})")
    a = np.zeros(P.dim) if anchor is None else np.asarray(anchor, dtype=float)
    x = prog.solve(y, s, a)
    resid = sup_dist(np.maximum(x, 0.0), y)
    if resid > q.tolerance:
        # interior-point solution drifted; the LP vertex solution is exact to s
        logger.debug("fiber QP residual %.3g above tolerance; retrying with zero slack", resid)
        x = prog.solve(y, 0.0, a)
        resid = sup_dist(np.maximum(x, 0.0), y)
        if resid > q.tolerance:
            raise RuntimeError(f"fiber point residual {resid:.3g} exceeds {q.tolerance:.3g}")
    return LatticeVector(x)


def fiber_pool(P: Polytope, q: FiberQuery, size: int, rng: np.random.Generator,
               first: LatticeVector | None = None) -> list[LatticeVector]:
    """Fiber points nearest to random anchors scattered over the polytope's box.

    The pool starts with the minimum-norm fiber point (``first`` if given).
    """
    lo, hi = P.vertices.min(axis=0), P.vertices.max(axis=0)
    span = np.maximum(hi - lo, 1.0)
    pool = [fiber_point(P, q) if first is None else first]
    for _ in range(size - 1):
        anchor = lo - span + rng.random(P.dim) * 3 * span
        pool.append(fiber_point(P, q, anchor))
    return pool


def fiber_convexity_check(P: Polytope, q: FiberQuery, trials: int, seed: int,
                          pool_size: int = 12) -> bool:
    """Monte Carlo check that segments between fiber points stay in the fiber and in P."""
    return fiber_convexity_report(P, q, trials, seed, pool_size)["passed"]


def fiber_convexity_report(P: Polytope, q: FiberQuery, trials: int, seed: int,
                           pool_size: int = 12) -> dict:
    rng = np.random.default_rng(seed)
    pool = fiber_pool(P, q, max(2, pool_size), rng)
    pts = np.array([p.coords for p in pool])
    y = q.target.coords
    worst_fiber = worst_hull = 0.0
    failures = 0
    for _ in range(trials):
        i, j = rng.integers(len(pts), size=2)
        t = rng.random()
        xt = (1.0 - t) * pts[i] + t * pts[j]
        r_fiber = sup_dist(np.maximum(xt, 0.0), y)
        r_hull = hull_residual(P, xt)[0]
        worst_fiber = max(worst_fiber, r_fiber)
        worst_hull = max(worst_hull, r_hull)
        if r_fiber > q.tolerance + ORDER_TOL or r_hull > q.tolerance + ORDER_TOL:
            failures += 1
    return {
        "trials": trials,
        "distinct_fiber_points": int(len(np.unique(np.round(pts, 9), axis=0))),
        "max_fiber_residual": worst_fiber,
        "max_hull_residual": worst_hull,
        "failures": failures,
        "passed": failures == 0,
    }


def near_fiber_points(P: Polytope, base: np.ndarray, delta: float, count: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Points of P whose truncation lies within ``delta`` (sup norm) of u(base).

    Shrinks random polytope points toward ``base``; u is 1-Lipschitz in the
    sup norm, so a shrink factor of delta / |p - base| suffices.
    """
    w = rng.exponential(size=(count, len(P)))
    p = (w / w.sum(axis=1, keepdims=True)) @ P.vertices
    d = np.max(np.abs(p - base), axis=1)
    with np.errstate(divide="ignore"):
        cap = np.where(d > 0, np.minimum(1.0, delta / np.where(d > 0, d, 1.0)), 1.0)
    s = cap * np.sqrt(rng.random(count))
    return base + s[:, None] * (p - base)


def solid_radius(P: Polytope, y, eps: float, trials: int, seed: int,
                 levels: int = 10, pool_size: int = 6, bases: np.ndarray | None = None) -> float:
    """Largest grid radius delta in {eps, eps/2, ..., eps/2**levels} that passes.

    A radius passes when every sampled segment between points of P whose
    truncations lie in the closed sup ball of radius delta about ``y`` is
    mapped by u into the closed sup ball of radius ``eps``. Segment ends
    are drawn near fiber points from ``bases`` (a fresh pool by default).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    y = as_vector(y).coords
    q = FiberQuery(LatticeVector(y))
    rng = np.random.default_rng(seed)
    if bases is None:
        bases = np.array([b.coords for b in fiber_pool(P, q, pool_size, rng)])
    for k in range(levels + 1):
        delta = eps / 2**k
        ok = True
        for _ in range(max(1, trials // len(bases))):
            i, j = rng.integers(len(bases), size=2)
            x0 = near_fiber_points(P, bases[i], delta, 1, rng)[0]
            x1 = near_fiber_points(P, bases[j], delta, 1, rng)[0]
            if (sup_dist(np.maximum(x0, 0), y) > delta + ORDER_TOL
                    or sup_dist(np.maximum(x1, 0), y) > delta + ORDER_TOL):
                continue
            t = rng.random()
            xt = (1.0 - t) * x0 + t * x1
            if sup_dist(np.maximum(xt, 0.0), y) > eps + ORDER_TOL:
                ok = False
                break
        if ok:
            return delta
    warnings.warn(f"no radius down to eps/2**{levels} passed at {y.tolist()}", stacklevel=2)
    return 0.0


def interval_check(r: float, trials: int, seed: int, n: int) -> bool:
    """Order intervals between points of the open sup ball B_r stay in B_r."""
    if r <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    a = rng.uniform(-r, r, size=(trials, n))
    b = rng.uniform(-r, r, size=(trials, n))
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    w = lo + rng.random((trials, n)) * (hi - lo)
    in_order = np.all((lo <= w) & (w <= hi), axis=1)
    # |w| <= -(lo ^ 0) + (hi v 0), the bound that puts w in any solid set
    bound = -np.minimum(lo, 0.0) + np.maximum(hi, 0.0)
    dominated = np.all(np.abs(w) <= bound, axis=1)
    inside = np.max(np.abs(w), axis=1) < r
    return bool(np.all(in_order & dominated & inside))


def write_points_csv(path: str | Path, points) -> None:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    with open(path, "w") as fh:
        for row in pts:
            fh.write(",".join(repr(v) for v in row.tolist()) + "\n")


def read_points_csv(path: str | Path) -> np.ndarray:
    rows = [
        [float(v) for v in line.split(",")]
        for line in Path(path).read_text().splitlines()
        if line.strip()
    ]
    return np.array(rows, dtype=float)


def random_polytope(rng: np.random.Generator, n: int, max_vertices: int = 12,
                    scale: float = 1.0) -> Polytope:
    """Random V-polytope straddling the cone boundary (shifted Gaussian cloud)."""
    m = int(rng.integers(1, max_vertices + 1))
    shift = rng.uniform(-0.5, 0.5, size=n) * scale
    return Polytope(rng.normal(0.0, scale, size=(m, n)) + shift)


def random_target(P: Polytope, rng: np.random.Generator) -> LatticeVector:
    """A point of u(P): truncation of a random point of P."""
    w = rng.exponential(size=len(P))
    return LatticeVector(np.maximum((w / w.sum()) @ P.vertices, 0.0))


def farthest_points(X: np.ndarray, m: int, seed: int) -> np.ndarray:
    """Indices of a greedy farthest-point subsample started at a seeded row."""
    X = np.atleast_2d(X)
    m = min(m, len(X))
    rng = np.random.default_rng(seed)
    i = int(rng.integers(len(X)))
    idx = [i]
    d = np.linalg.norm(X - X[i], axis=1)
    for _ in range(m - 1):
        i = int(np.argmax(d))
        idx.append(i)
        d = np.minimum(d, np.linalg.norm(X - X[i], axis=1))
    return np.array(idx)


def sample_truncated(P: Polytope, n: int, seed: int, oversample: int = 20000) -> PointCloud:
    """An evenly spread n-point sample of D = u(P).

    Uniform samples of P crowd D where P is fat and starve the thin parts
    that are images of small caps. Points sharing a sign pattern map
    affinely, so convex combinations inside each sign class give fresh
    points of the same face of D; the union is thinned to n points by
    farthest-point sampling.
    """
    if n < 1:
        raise ValueError("sample size must be at least 1")
    rng = np.random.default_rng(seed)
    X = sample(P, max(oversample, n), seed).points
    keys = (X > 0) @ (1 << np.arange(X.shape[1]))
    groups = [np.flatnonzero(keys == k) for k in np.unique(keys)]
    per = max(oversample // len(groups), 1)
    parts = [X]
    for g in groups:
        if len(g) < 2:
            continue
        i, j = rng.choice(g, per), rng.choice(g, per)
        parts.append(X[i] + rng.random((per, 1)) * (X[j] - X[i]))
    D = np.maximum(np.vstack(parts), 0.0)
    return PointCloud(D[farthest_points(D, n, seed)], seed=seed, source="truncated-D")
