import json

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from rieszlab.convex import PointCloud, Polytope, hull_residual, sample_truncated
from rieszlab.retract import (
    CoverageGap,
    OutsideHull,
    RetractionStructure,
    blend,
    build_retraction,
    continuity_certificate,
    evaluate,
    identity_check,
)

SEG = Polytope([[2.0, -1.0], [-1.0, 2.0]])
POLYLINE = np.array([[2.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 2.0]])


def dist_to_polyline(z, poly=POLYLINE):
    best = np.inf
    for a, b in zip(poly[:-1], poly[1:]):
        t = np.clip(np.dot(z - a, b - a) / np.dot(b - a, b - a), 0.0, 1.0)
        best = min(best, float(np.linalg.norm(z - (a + t * (b - a)))))
    return best


@pytest.fixture(scope="module")
def seg_structure():
    D = sample_truncated(SEG, 300, 0, oversample=5000)
    return build_retraction(SEG, D, 0.05, 0)


def test_identity_on_cloud(seg_structure):
    assert identity_check(seg_structure) == 0
    p = seg_structure.d_cloud.points[17]
    assert evaluate(seg_structure, p) == evaluate(seg_structure, p.copy())
    assert np.array_equal(evaluate(seg_structure, p).coords, p)


def test_patch_rules_by_brute_force(seg_structure):
    r = seg_structure
    d = cdist(r.centers, r.d_cloud.points).min(axis=1)
    assert np.allclose(r.radii, d / 3, rtol=1e-9)
    ux = np.maximum(r.preimages, 0.0)
    d_ball_ux = np.maximum(np.linalg.norm(ux - r.centers, axis=1) - r.radii, 0.0)
    assert np.all(d_ball_ux < 2 * (d - r.radii))
    spacing = r.grid_spacing / 2.0 ** r.levels
    assert np.all(d > spacing / 2)


def test_preimages_in_polytope(seg_structure):
    for x in seg_structure.preimages[:: max(1, len(seg_structure) // 200)]:
        assert hull_residual(SEG, x)[0] <= 1e-9


def test_midpoints_land_near_D(seg_structure):
    r = seg_structure
    pts = r.d_cloud.points
    rng = np.random.default_rng(0)
    for _ in range(200):
        i, j = rng.integers(len(pts), size=2)
        z = 0.5 * (pts[i] + pts[j])
        out = evaluate(r, z, check_hull=False).coords
        assert np.all(out >= 0)
        assert dist_to_polyline(out) <= 2 * r.grid_spacing + 1e-9


def test_blend_is_convex_combination(seg_structure):
    r = seg_structure
    z = np.array([0.9, 0.4])
    act, mix = blend(r, z)
    w = r.weights(z, act)
    assert np.all(w >= 0) and w.sum() == pytest.approx(1.0)
    assert hull_residual(SEG, mix)[0] <= 1e-9
    assert np.array_equal(evaluate(r, z).coords, np.maximum(mix, 0.0))


def test_no_coverage_gaps(seg_structure):
    r = seg_structure
    rng = np.random.default_rng(4)
    V = r.d_cloud.points
    for _ in range(500):
        w = rng.dirichlet(np.full(3, 0.3))
        z = w @ V[rng.choice(len(V), 3, replace=False)]
        evaluate(r, z, check_hull=False)


def test_outside_hull(seg_structure):
    with pytest.raises(OutsideHull):
        evaluate(seg_structure, [2.0, 2.0])


def test_cone_contained_is_near_identity():
    P = Polytope([[0.2, 0.2], [1.2, 0.3], [0.6, 1.1]])
    D = sample_truncated(P, 400, 1, oversample=5000)
    h = 0.05
    r = build_retraction(P, D, h, 1)
    rng = np.random.default_rng(2)
    for _ in range(300):
        z = rng.dirichlet([1, 1, 1]) @ P.vertices
        if hull_residual(r.hull, z)[0] > 0:
            continue
        assert np.linalg.norm(evaluate(r, z, check_hull=False).coords - z) <= 2 * h


def one_patch_structure():
    cloud = PointCloud(np.array([[0.0, 0.0], [3.0, 0.0]]))
    x_u = np.array([0.0, -1.0])
    return RetractionStructure(
        d_cloud=cloud, hull=Polytope(cloud.points), centers=np.array([[1.5, 0.0]]), radii=np.array([0.5]),
        preimages=x_u[None], source=np.array([0]), levels=np.array([0]), grid_spacing=1.0,
        origin=np.zeros(2), basis=np.array([[1.0, 0.0]]),
    )


def test_one_patch_is_constant():
    r = one_patch_structure()
    for z in ([1.2, 0.0], [1.5, 0.0], [1.9, 0.0]):
        assert np.array_equal(evaluate(r, z).coords, [0.0, 0.0])
    with pytest.raises(CoverageGap):
        evaluate(r, [0.7, 0.0])


def test_certificate(seg_structure):
    cert = continuity_certificate(seg_structure, 2000, seed=3)
    assert cert["passed"] and cert["violations"] == 0
    assert 0 < cert["empirical_modulus"] < np.inf
    assert cert["worst_patch_ratio"] < 6


def test_json_export(seg_structure):
    data = json.loads(json.dumps(seg_structure.to_json(include_patches=True)))
    assert data["patches"] == len(data["patch_list"]) == len(seg_structure)


def test_bad_spacing():
    with pytest.raises(ValueError):
        build_retraction(SEG, PointCloud(np.array([[0.0, 1.0], [1.0, 0.0]])), 0.0, 0)
