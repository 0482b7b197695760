import json

import numpy as np
import pytest

from rieszlab.complex import GeometricComplex, SimplicialComplex, triangulate_circle
from rieszlab.convex import FiberQuery, PointCloud, Polytope, fiber_point, hull_residual, sample, truncate_cloud
from rieszlab.lift import (
    CompressivePair,
    Cover,
    LiftConfig,
    NotCompressive,
    PiecewiseLinearMap,
    StarRefinementError,
    SubdivisionCapExceeded,
    arc_loop,
    build_cover,
    certify_pair,
    constant_map,
    export_csv,
    lift_map,
    lift_residual,
    make_pair,
    null_homotopy_certificate,
    star_refine,
    star_witness,
    truncated_segment_path,
)

A, B = np.array([2.0, -1.0]), np.array([-1.0, 2.0])
SEG = Polytope([A, B])


def segment_inverse(y, steps=300_001):
    """Brute-force preimage of y under u on the segment by parameter scan."""
    s = np.linspace(0.0, 1.0, steps)[:, None]
    pts = A + s * (B - A)
    return pts[np.argmin(np.max(np.abs(np.maximum(pts, 0) - y), axis=1))]


@pytest.fixture(scope="module")
def loop_demo():
    _, poly = truncated_segment_path(A, B)
    g = arc_loop(poly)
    res = lift_map(triangulate_circle(32), g, SEG, LiftConfig(), seed=0)
    return g, res


def test_segment_path_breakpoints():
    ss, poly = truncated_segment_path(A, B)
    assert np.allclose(ss, [0, 1 / 3, 2 / 3, 1])
    assert np.allclose(poly, [[2, 0], [1, 0], [0, 1], [0, 2]])


def test_pair_in_cone_is_trivial():
    P = Polytope([[0.5, 0.5], [2.0, 0.5], [1.0, 2.0]])
    pair = make_pair(P, [1.0, 1.0], 0.2, trials=64, seed=0)
    assert pair.r_inner == pair.r_outer
    assert np.allclose(pair.basepoint, [1.0, 1.0], atol=1e-6)


def test_pair_singleton():
    P = Polytope([[0.3, -0.4]])
    pair = make_pair(P, [0.3, 0.0], 0.1, trials=16, seed=0)
    assert np.allclose(pair.basepoint, [0.3, -0.4]) and pair.r_inner == pair.r_outer


def test_segment_pair_certifies_on_grid():
    pair = make_pair(SEG, [0.5, 0.5], 0.4, trials=64, seed=1)
    s = np.linspace(0.0, 1.0, 4001)[:, None]
    xs = A + s * (B - A)
    xs = xs[np.max(np.abs(np.maximum(xs, 0) - pair.center), axis=1) <= pair.r_inner]
    ts = np.linspace(0.0, 1.0, 201)
    path = (1 - ts)[None, :, None] * xs[:, None, :] + ts[None, :, None] * pair.basepoint
    assert np.max(np.abs(np.maximum(path, 0) - pair.center)) <= pair.r_outer + 1e-12
    assert pair.r_inner >= pair.r_outer / 4


def test_recertify_with_fresh_seed():
    pair = make_pair(SEG, [1.5, 0.0], 0.1, trials=32, seed=3)
    assert certify_pair(SEG, pair, 200, seed=99) <= pair.r_outer


def test_bad_witness_detected():
    pair = CompressivePair(np.array([0.5, 0.5]), 0.1, 0.1, np.array([2.0, -1.0]))
    with pytest.raises(NotCompressive):
        certify_pair(SEG, pair, 64, seed=0)
    with pytest.raises(ValueError):
        CompressivePair(np.zeros(2), 0.2, 0.1, np.zeros(2))


def test_cover_single_point():
    cloud = PointCloud(np.array([[0.5, 0.5]]))
    assert len(build_cover(SEG, cloud, 0.1, seed=0)) == 1


def test_cover_count_on_unit_segment():
    P = Polytope([[0.0, 0.0], [1.0, 0.0]])
    cloud = truncate_cloud(sample(P, 400, 0))
    c = build_cover(P, cloud, 0.1, seed=0)
    r = c.inner.min()
    assert len(c) <= int(np.ceil(1 / r)) + 1
    assert c.covers(cloud.points).all()


def test_star_refine_single_pair_quarter():
    cloud = PointCloud(np.array([[0.5, 0.5]]))
    c = build_cover(SEG, cloud, 0.2, seed=0)
    fine = star_refine(c, SEG, cloud, seed=1, shrink=4.0)
    assert fine.outer.max() == pytest.approx(c.inner.min() / 4)
    assert fine.refines == [0]


def points_in_ball(center, r, count, rng):
    return center + rng.uniform(-r, r, size=(count, len(center)))


def test_star_chain_verified_by_sampling():
    cloud = truncate_cloud(sample(SEG, 300, 0))
    top = build_cover(SEG, cloud, 0.1, seed=0, net_fraction=0.5)
    mid = star_refine(top, SEG, cloud, seed=1)
    low = star_refine(mid, SEG, cloud, seed=2)
    rng = np.random.default_rng(0)
    for fine, coarse in ((mid, top), (low, mid)):
        for a, p in enumerate(fine.pairs):
            w = coarse.pairs[fine.refines[a]]
            meets = [q for q in fine.pairs if np.max(np.abs(q.center - p.center)) <= q.r_outer + p.r_outer]
            for q in meets:
                pts = points_in_ball(q.center, q.r_outer, 20, rng)
                assert np.all(np.max(np.abs(pts - w.center), axis=1) <= w.r_inner + 1e-12)


def test_star_refine_error():
    cloud = PointCloud(np.array([[0.5, 0.5], [1.5, 0.0]]))
    coarse = Cover([make_pair(SEG, [0.5, 0.5], 0.05, 16, 0)])
    fine = Cover([make_pair(SEG, [1.5, 0.0], 0.01, 16, 0)])
    with pytest.raises(StarRefinementError):
        star_witness(fine, coarse)
    with pytest.raises(ValueError):
        star_refine(coarse, SEG, cloud, 0, shrink=2.0)


def test_lift_single_vertex():
    K = GeometricComplex(SimplicialComplex(1, [[(0,)]]), np.zeros((1, 1)))
    y = np.array([0.5, 0.5])
    res = lift_map(K, constant_map(y), SEG, LiftConfig(cover_samples=100), seed=0)
    assert np.allclose(res.vertex_images[0], fiber_point(SEG, FiberQuery(y)).coords)
    assert res.residual <= 1e-9


def test_loop_lift_residual(loop_demo):
    g, res = loop_demo
    assert res.residual <= 0.05
    assert res.subdivisions <= 6
    assert json.loads(json.dumps(res.to_json()))["residual"] == res.residual


def test_loop_lift_matches_fiber_scan(loop_demo):
    g, res = loop_demo
    rng = np.random.default_rng(7)
    simplices = res.domain.complex.simplices[1]
    for i in rng.choice(len(simplices), 40, replace=False):
        s = simplices[i]
        lam = rng.dirichlet([1, 1])
        x = res.evaluate(s, lam)
        assert hull_residual(SEG, x)[0] <= 1e-9
        target = g((lam @ res.domain.positions[list(s)])[None])[0]
        # u is injective on this segment, so the lift is pinned down by g
        assert np.max(np.abs(x - segment_inverse(target))) <= 2 * 0.05


def test_lift_agrees_on_shared_faces(loop_demo):
    _, res = loop_demo
    K = res.domain.complex
    for s in K.simplices[1][:50]:
        assert np.array_equal(res.evaluate(s, [1.0, 0.0]), res.vertex_images[s[0]])
        assert np.array_equal(res.evaluate(s, [0.0, 1.0]), res.vertex_images[s[1]])


def test_residual_nested_sampling(loop_demo):
    g, res = loop_demo
    est = [lift_residual(g, res, m, seed=5) for m in (2, 4, 8, 16)]
    assert all(a <= b for a, b in zip(est, est[1:]))


def test_null_homotopy(loop_demo):
    _, res = loop_demo
    cert = null_homotopy_certificate(res, SEG, 4, seed=1)
    assert cert["passed"] and cert["outside_cover"] == 0


def test_prescribed_boundary_copied():
    _, poly = truncated_segment_path(A, B)
    g = arc_loop(poly)
    K = triangulate_circle(16)
    eta = {v: fiber_point(SEG, FiberQuery(g(K.positions[[v]])[0])).coords for v in (0, 8)}
    res = lift_map(K, g, SEG, LiftConfig(cover_samples=600), seed=2, prescribed=eta)
    for v, x in eta.items():
        assert np.array_equal(res.vertex_images[v], x)
    with pytest.raises(ValueError):
        lift_map(K, g, SEG, LiftConfig(cover_samples=600), seed=2, prescribed={0: np.array([0.5, 0.5])})


def test_subdivision_cap():
    _, poly = truncated_segment_path(A, B)
    with pytest.raises(SubdivisionCapExceeded):
        lift_map(triangulate_circle(8), arc_loop(poly), SEG,
                 LiftConfig(max_subdivisions=0, cover_samples=300), seed=0)


def test_constant_map_lifts_exactly():
    res = lift_map(triangulate_circle(6), constant_map([1.2, 0.0]), SEG, LiftConfig(cover_samples=200), seed=0)
    assert res.residual <= 1e-9


def test_piecewise_linear_map():
    K = triangulate_circle(12)
    images = np.column_stack([np.linspace(0, 1, 12), np.zeros(12)])
    f = PiecewiseLinearMap(K, images)
    assert np.allclose(f(K.positions), images)
    mid = K.positions[[3, 4]].mean(axis=0)
    assert np.allclose(f(mid), images[[3, 4]].mean(axis=0))


def test_export_csv(loop_demo, tmp_path):
    _, res = loop_demo
    export_csv(res, tmp_path / "g.csv", 2, seed=0)
    data = np.loadtxt(tmp_path / "g.csv", delimiter=",")
    assert data.shape[1] == 4


def test_config_validation():
    with pytest.raises(ValueError):
        LiftConfig(residual_tolerance=0.0)
