import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rieszlab.convex import (
    EmptyFiber,
    FiberQuery,
    Polytope,
    affine_frame,
    contains,
    farthest_points,
    fiber_convexity_report,
    fiber_point,
    fiber_pool,
    hull_residual,
    interval_check,
    random_polytope,
    random_target,
    read_points_csv,
    sample,
    sample_truncated,
    solid_radius,
    sup_dist,
    truncate_cloud,
    write_points_csv,
)
from rieszlab.riesz import LatticeVector

SEG = Polytope([[2.0, -1.0], [-1.0, 2.0]])


def segment_fiber_oracle(a, b, y, steps=200_001, tol=1e-4):
    """Brute-force parameter scan of a segment for points whose truncation is y."""
    s = np.linspace(0.0, 1.0, steps)[:, None]
    pts = a + s * (b - a)
    hit = np.max(np.abs(np.maximum(pts, 0) - y), axis=1) <= tol
    return pts[hit]


def test_polytope_validation():
    with pytest.raises(ValueError):
        Polytope(np.zeros((0, 2)))
    P = Polytope([[0.0, 0.0], [1.0, 0.0]])
    assert P.dim == 2 and len(P) == 2
    assert P.diameter() == pytest.approx(1.0)


@pytest.mark.parametrize("y", [[0.5, 0.5], [1.5, 0.0], [0.0, 1.5], [1.0, 0.0]])
def test_fiber_on_segment_matches_scan(y):
    y = np.array(y)
    x = fiber_point(SEG, FiberQuery(LatticeVector(y))).coords
    scan = segment_fiber_oracle(SEG.vertices[0], SEG.vertices[1], y)
    assert len(scan)
    assert np.min(np.max(np.abs(scan - x), axis=1)) <= 1e-4
    assert sup_dist(np.maximum(x, 0), y) <= 1e-9


def test_empty_fiber():
    with pytest.raises(EmptyFiber):
        fiber_point(SEG, FiberQuery(LatticeVector([1.0, 1.0])))
    with pytest.raises(ValueError):
        FiberQuery(LatticeVector([-1.0, 0.0]))


def test_fiber_point_is_min_norm():
    # the fiber over 0 of a square straddling the negative orthant is a quadrant piece
    P = Polytope([[-2.0, -2.0], [1.0, -2.0], [1.0, 1.0], [-2.0, 1.0]])
    x = fiber_point(P, FiberQuery(LatticeVector([0.0, 0.0]))).coords
    # interior-point argmin is accurate to about the square root of the gap tolerance
    assert np.allclose(x, [0.0, 0.0], atol=1e-5)
    x = fiber_point(P, FiberQuery(LatticeVector([0.5, 0.0]))).coords
    assert np.allclose(x, [0.5, 0.0], atol=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4))
def test_fiber_norm_below_known_members(seed, n):
    rng = np.random.default_rng(seed)
    P = random_polytope(rng, n)
    w = rng.exponential(size=len(P))
    p = (w / w.sum()) @ P.vertices
    x = fiber_point(P, FiberQuery(LatticeVector(np.maximum(p, 0)))).coords
    assert sup_dist(np.maximum(x, 0), np.maximum(p, 0)) <= 1e-7
    assert hull_residual(P, x)[0] <= 1e-7
    assert np.linalg.norm(x) <= np.linalg.norm(p) + 1e-6


def test_anchor_moves_within_fiber():
    P = Polytope([[-2.0, -2.0], [1.0, -2.0], [1.0, 1.0], [-2.0, 1.0]])
    q = FiberQuery(LatticeVector([0.0, 0.0]))
    x = fiber_point(P, q, anchor=[-5.0, -5.0]).coords
    assert np.allclose(x, [-2.0, -2.0], atol=1e-6)
    pool = fiber_pool(P, q, 5, np.random.default_rng(0))
    assert all(np.all(v.coords <= 1e-7) for v in pool)


def test_fiber_convexity_report():
    P = Polytope([[-2.0, -2.0, 1.0], [1.0, -2.0, 0.5], [1.0, 1.0, -1.0], [-2.0, 1.0, 2.0]])
    q = FiberQuery(random_target(P, np.random.default_rng(1)))
    rep = fiber_convexity_report(P, q, 200, seed=2)
    assert rep["failures"] == 0
    assert rep["max_hull_residual"] <= 1e-7


def test_hull_residual():
    P = Polytope([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert hull_residual(P, [0.2, 0.2])[0] <= 1e-12
    assert hull_residual(P, [1.0, 0.0])[0] == 0.0
    # sup distance from (1,1) to the hypotenuse is 1/2
    assert hull_residual(P, [1.0, 1.0])[0] == pytest.approx(0.5, abs=1e-9)
    assert contains(P, [0.5, 0.5]) and not contains(P, [0.6, 0.6])


def test_affine_frame_rank():
    pts = np.array([[0.0, 0.0, 1.0], [1.0, 1.0, 1.0], [2.0, 2.0, 1.0]])
    origin, basis = affine_frame(pts)
    assert basis.shape == (1, 3)
    assert np.allclose(((pts - origin) @ basis.T) @ basis + origin, pts)


def polygon_centroid(V):
    x, y = V[:, 0], V[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    area = cr.sum() / 2
    return np.array([((x + xn) * cr).sum(), ((y + yn) * cr).sum()]) / (6 * area)


def test_uniform_sampling_mean():
    V = np.array([[0.0, 0.0], [3.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    pts = sample(Polytope(V), 200_000, seed=5).points
    assert np.allclose(pts.mean(axis=0), polygon_centroid(V), atol=5e-3)
    assert all(contains(Polytope(V), p) for p in pts[:50])


def test_sampling_deterministic_and_schemes():
    P = Polytope(np.random.default_rng(0).normal(size=(6, 3)))
    a, b = sample(P, 100, 7), sample(P, 100, 7)
    assert np.array_equal(a.points, b.points)
    d = sample(P, 100, 7, scheme="dirichlet")
    assert d.points.shape == (100, 3)
    with pytest.raises(ValueError):
        sample(P, 10, 0, scheme="bogus")
    with pytest.raises(ValueError):
        sample(P, 0, 0)


def test_degenerate_polytopes_sample():
    pt = Polytope([[1.0, -1.0]])
    assert np.all(sample(pt, 5, 0).points == [1.0, -1.0])
    s = sample(SEG, 1000, 0).points
    assert np.all(np.abs(s.sum(axis=1) - 1.0) < 1e-12)


def test_truncate_cloud():
    c = truncate_cloud(sample(SEG, 50, 0))
    assert c.source == "truncated-D" and np.all(c.points >= 0)


def test_sample_truncated_lies_in_image():
    P = Polytope(np.random.default_rng(4).normal(size=(7, 3)) - 0.3)
    D = sample_truncated(P, 120, 3, oversample=3000)
    assert len(D) == 120 and np.all(D.points >= 0)
    for y in D.points[:30]:
        assert fiber_point(P, FiberQuery(LatticeVector(y))) is not None


def test_farthest_points_spread():
    X = np.random.default_rng(0).random((500, 2))
    idx = farthest_points(X, 20, 0)
    assert len(set(idx.tolist())) == 20
    d = np.linalg.norm(X[idx][:, None] - X[idx][None], axis=-1)
    np.fill_diagonal(d, np.inf)
    assert d.min() > 0.05


def test_solid_radius_examples():
    # inside the cone u is the identity and every radius passes
    P = Polytope([[0.5, 0.5], [2.0, 0.5], [1.0, 2.0]])
    assert solid_radius(P, [1.0, 1.0], 0.3, 100, 0) == 0.3
    assert solid_radius(SEG, [0.5, 0.5], 0.4, 200, 1) >= 0.1
    with pytest.raises(ValueError):
        solid_radius(SEG, [0.5, 0.5], 0.0, 10, 0)


def test_interval_check():
    assert interval_check(0.7, 2000, 0, 4)
    with pytest.raises(ValueError):
        interval_check(0.0, 10, 0, 2)


def test_points_csv_roundtrip(tmp_path):
    pts = np.random.default_rng(2).normal(size=(10, 3))
    write_points_csv(tmp_path / "p.csv", pts)
    assert np.array_equal(read_points_csv(tmp_path / "p.csv"), pts)
