import numpy as np
import pytest

from app.core import ClusterSet, FlowField, PointCloud
from app.errors import InputError
from app.losses import (
    ClusterCache,
    Correspondences,
    LossWeights,
    clusters_cyc,
    clusters_knn,
    clusters_surf,
    loss_dist,
    loss_smooth,
    total_loss,
)
from app.normals import NormalField, build_descriptors, estimate_normals
from tests.helpers import brute_clusters, brute_knn, brute_smooth
from utils.constants import ClusterKind


def _dyadic(rng, shape, scale=8):
    """Values on a 1/scale grid so that shifts are exact in float64."""
    return rng.integers(-64, 64, size=shape) / scale


# ============ loss_dist ============


def test_dist_hand_example():
    X = PointCloud([[0.0, 0.0, 0.0]])
    F = FlowField([[1.0, 0.0, 0.0]])
    Y = PointCloud([[2.0, 0.0, 0.0], [10.0, 0.0, 0.0]])
    term, corr = loss_dist(X, F, Y)
    assert term.value == 1.0
    assert corr.target_index.tolist() == [0]
    np.testing.assert_array_equal(term.grad, [[-2.0, 0.0, 0.0]])


def test_dist_zero_on_perfect_alignment(rng):
    X = PointCloud(rng.normal(size=(40, 3)))
    Y_pts = rng.normal(size=(60, 3))
    match = rng.permutation(60)[:40]
    F = FlowField(Y_pts[match] - X.points)
    # x + (y - x) may differ from y in the last bit; warp Y onto the exact sums
    Y_pts[match] = X.points + F.vectors
    term, _ = loss_dist(X, F, PointCloud(Y_pts))
    assert term.value == 0.0


def test_dist_matches_brute_force(rng):
    X = PointCloud(rng.normal(size=(64, 3)))
    F = FlowField(rng.normal(scale=0.2, size=(64, 3)))
    Y = PointCloud(rng.normal(size=(64, 3)))
    term, corr = loss_dist(X, F, Y)

    warped = X.points + F.vectors
    d2 = ((warped[:, None, :] - Y.points[None, :, :]) ** 2).sum(-1)
    expected = d2.min(axis=1).mean()
    assert term.value == pytest.approx(expected, rel=1e-12)
    for i in range(64):
        assert corr.target_index[i] == brute_knn(Y.points, warped[i], 1)[0]


def test_dist_translation_equivariance(rng):
    X = PointCloud(_dyadic(rng, (50, 3)))
    F = FlowField(_dyadic(rng, (50, 3)))
    Y = PointCloud(_dyadic(rng, (70, 3)))
    c = np.array([3.0, -5.0, 2.0])
    base, _ = loss_dist(X, F, Y)
    moved, _ = loss_dist(X.translated(c), F, Y.translated(c))
    assert moved.value == base.value


def test_dist_target_permutation_invariance(rng):
    X = PointCloud(rng.normal(size=(50, 3)))
    F = FlowField(rng.normal(scale=0.1, size=(50, 3)))
    Y = rng.normal(size=(80, 3))
    perm = rng.permutation(80)
    a, corr_a = loss_dist(X, F, PointCloud(Y))
    b, corr_b = loss_dist(X, F, PointCloud(Y[perm]))
    assert a.value == b.value
    np.testing.assert_array_equal(perm[corr_b.target_index], corr_a.target_index)


def test_dist_rejects_flow_length_mismatch():
    X = PointCloud(np.zeros((3, 3)))
    with pytest.raises(InputError):
        loss_dist(X, FlowField.zeros(2), PointCloud(np.zeros((1, 3))))


# ============ clusters ============


def test_knn_clusters_tie_rule():
    X = PointCloud([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    clusters = clusters_knn(X, 1)
    assert clusters.kind is ClusterKind.KNN
    assert clusters.cluster(1) == [0]


def test_knn_clusters_full_neighborhood(rng):
    X = PointCloud(rng.normal(size=(9, 3)))
    clusters = clusters_knn(X, 8)
    for i in range(9):
        assert sorted(clusters.cluster(i)) == [j for j in range(9) if j != i]


def test_knn_clusters_match_brute_force(rng):
    for _ in range(10):
        pts = rng.uniform(size=(int(rng.integers(20, 300)), 3))
        clusters = clusters_knn(PointCloud(pts), 5)
        expected = brute_clusters(pts, 5)
        assert [clusters.cluster(i) for i in range(len(pts))] == expected


def test_knn_clusters_with_duplicates():
    pts = np.array([[0.0, 0.0, 0.0]] * 3 + [[5.0, 0.0, 0.0]])
    clusters = clusters_knn(PointCloud(pts), 2)
    for i in range(3):
        assert i not in clusters.cluster(i)
        assert len(clusters.cluster(i)) == 2
    assert clusters.cluster(0) == [1, 2]


def test_surf_clusters_match_brute_force(rng):
    cloud = PointCloud(rng.uniform(size=(150, 3)))
    desc = build_descriptors(cloud, estimate_normals(cloud, 6), normal_scale=0.7)
    clusters = clusters_surf(desc, 4)
    assert clusters.kind is ClusterKind.SURF
    expected = brute_clusters(desc.descriptors, 4)
    assert [clusters.cluster(i) for i in range(150)] == expected


def test_surf_clusters_separate_ground_from_wall():
    ground = [(x, y, 0.0) for x in (0.3, 1.3, 2.3) for y in (0.0, 1.0, 2.0)]
    wall = [(0.0, y, z) for y in (0.0, 1.0, 2.0) for z in (0.3, 1.3, 2.3)]
    pts = np.array(ground + wall)
    normals = np.array([[0.0, 0.0, 1.0]] * 9 + [[1.0, 0.0, 0.0]] * 9)
    cloud = PointCloud(pts)
    field = NormalField(normals, np.ones(18, dtype=bool))
    query = ground.index((0.3, 1.0, 0.0))

    plain = clusters_knn(cloud, 3).cluster(query)
    assert any(j >= 9 for j in plain)  # the wall is closer in 3D

    desc = build_descriptors(cloud, field, 1.0)
    surf = clusters_surf(desc, 3).cluster(query)
    assert surf == brute_clusters(desc.descriptors, 3)[query]
    assert all(j < 9 for j in surf)


def _brute_cyc(X, F, Y, k):
    warped = X + F
    matched = [brute_knn(Y, w, 1)[0] for w in warped]
    rows = []
    for i in range(len(X)):
        hood = set(brute_knn(Y, Y[matched[i]], k)) | {matched[i]}
        rows.append([r for r in range(len(X)) if matched[r] in hood])
    return rows


def test_cyc_clusters_match_brute_force(rng):
    X = rng.normal(size=(128, 3))
    F = rng.normal(scale=0.3, size=(128, 3))
    Y = rng.normal(size=(100, 3))
    cloud, flow, target = PointCloud(X), FlowField(F), PointCloud(Y)
    _, corr = loss_dist(cloud, flow, target)
    clusters = clusters_cyc(cloud, flow, target, corr, 4)
    assert clusters.kind is ClusterKind.CYC
    expected = _brute_cyc(X, F, Y, 4)
    assert [clusters.cluster(i) for i in range(128)] == expected


def test_cyc_clusters_identity_configuration(rng):
    pts = rng.normal(size=(60, 3))
    X = PointCloud(pts)
    F = FlowField.zeros(60)
    _, corr = loss_dist(X, F, X)
    singletons = clusters_cyc(X, F, X, corr, 1)
    assert [singletons.cluster(i) for i in range(60)] == [[i] for i in range(60)]

    for k in (3, 7):
        clusters = clusters_cyc(X, F, X, corr, k)
        for i in range(60):
            expected = sorted(set(brute_knn(pts, pts[i], k)) | {i})
            assert clusters.cluster(i) == expected


def test_cyc_clusters_always_contain_self(rng):
    X = PointCloud(rng.normal(size=(40, 3)))
    F = FlowField(rng.normal(size=(40, 3)))
    Y = PointCloud(rng.normal(size=(10, 3)))
    _, corr = loss_dist(X, F, Y)
    clusters = clusters_cyc(X, F, Y, corr, 2)
    for i in range(40):
        assert i in clusters.cluster(i)


def test_cyc_rejects_inconsistent_correspondences():
    X = PointCloud(np.zeros((3, 3)))
    with pytest.raises(InputError):
        clusters_cyc(
            X, FlowField.zeros(3), X, Correspondences(np.array([0, 1], dtype=np.int64)), 1
        )


# ============ loss_smooth ============


def test_smooth_hand_example():
    clusters = ClusterSet.from_rows(np.array([[1], [0]]), ClusterKind.KNN)
    term = loss_smooth(FlowField([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]), clusters)
    assert term.value == 1.0
    np.testing.assert_array_equal(term.grad, [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])


def test_smooth_constant_flow_is_zero(rng):
    clusters = clusters_knn(PointCloud(rng.normal(size=(30, 3))), 5)
    term = loss_smooth(FlowField(np.tile([0.3, -1.0, 2.0], (30, 1))), clusters)
    assert term.value == 0.0
    np.testing.assert_array_equal(term.grad, 0.0)


def test_smooth_shift_invariance(rng):
    clusters = clusters_knn(PointCloud(rng.normal(size=(40, 3))), 4)
    F = _dyadic(rng, (40, 3))
    c = np.array([1.0, -2.0, 0.5])
    a = loss_smooth(FlowField(F), clusters)
    b = loss_smooth(FlowField(F + c), clusters)
    assert a.value == b.value
    np.testing.assert_array_equal(a.grad, b.grad)


def test_smooth_empty_cluster_contributes_nothing():
    clusters = ClusterSet(np.array([0, 1, 1]), np.array([1]), ClusterKind.CYC)
    term = loss_smooth(FlowField([[2.0, 0.0, 0.0], [0.0, 0.0, 0.0]]), clusters)
    assert term.value == 1.0
    assert np.isfinite(term.grad).all()


def test_smooth_matches_double_sum_and_finite_differences():
    h = 1e-5
    for seed in range(50):
        rng = np.random.default_rng(seed)
        X = PointCloud(rng.normal(size=(64, 3)))
        F = rng.normal(size=(64, 3))
        clusters = clusters_knn(X, 5)
        owners, members = clusters.pairs()
        if np.abs(F[owners] - F[members]).min() > 1e-3:
            break
    else:
        pytest.fail("no configuration away from L1 kinks")

    term = loss_smooth(FlowField(F), clusters)
    rows = [clusters.cluster(i) for i in range(64)]
    assert term.value == pytest.approx(brute_smooth(F, rows), rel=1e-12)

    numeric = np.zeros_like(F)
    for i in range(64):
        for axis in range(3):
            plus, minus = F.copy(), F.copy()
            plus[i, axis] += h
            minus[i, axis] -= h
            numeric[i, axis] = (
                loss_smooth(FlowField(plus), clusters).value
                - loss_smooth(FlowField(minus), clusters).value
            ) / (2 * h)
    rel = np.abs(term.grad - numeric).max() / max(np.abs(numeric).max(), 1e-8)
    assert rel < 1e-4


# ============ total_loss ============


def _scene(rng, n=80):
    X = PointCloud(rng.normal(size=(n, 3)))
    Y = PointCloud(rng.normal(size=(n, 3)))
    F = FlowField(rng.normal(scale=0.2, size=(n, 3)))
    desc = build_descriptors(X, estimate_normals(X, 5), 1.0)
    return X, F, Y, desc


def test_total_weights_off_equals_dist(rng):
    X, F, Y, desc = _scene(rng)
    weights = LossWeights(alpha_smooth=0.0, alpha_surf=0.0, alpha_cyc=0.0)
    breakdown = total_loss(X, F, Y, desc, weights)
    dist, _ = loss_dist(X, F, Y)
    assert breakdown.total == dist.value
    np.testing.assert_array_equal(breakdown.grad_total, dist.grad)


def test_total_reports_unweighted_terms(rng):
    X, F, Y, desc = _scene(rng, n=40)
    weights = LossWeights(alpha_smooth=0.0, alpha_surf=0.0, alpha_cyc=0.0, k=4)
    b = total_loss(X, F, Y, desc, weights)
    assert b.smooth == loss_smooth(F, clusters_knn(X, 4)).value
    assert b.surf == loss_smooth(F, clusters_surf(desc, 4)).value
    assert b.cyc == loss_smooth(F, clusters_cyc(X, F, Y, b.correspondences, 4)).value
    assert min(b.smooth, b.surf, b.cyc) > 0.0
    assert b.total == b.dist


def test_total_surf_unknown_without_descriptors(rng):
    X, F, Y, _ = _scene(rng, n=40)
    b = total_loss(X, F, Y, None, LossWeights(alpha_surf=0.0, alpha_cyc=1.0, k=4))
    assert b.surf is None
    assert b.terms()["surf"] is None
    assert b.total == pytest.approx(b.dist + b.cyc, rel=1e-12)


def test_total_is_weighted_sum(rng):
    X, F, Y, desc = _scene(rng)
    weights = LossWeights(alpha_smooth=0.5, alpha_surf=1.0, alpha_cyc=10.0, k=4)
    b = total_loss(X, F, Y, desc, weights)
    expected = b.dist + 0.5 * b.smooth + b.alpha_surf * b.surf + b.alpha_cyc * b.cyc
    assert b.total == pytest.approx(expected, rel=1e-12)
    assert min(b.dist, b.smooth, b.surf, b.cyc) > 0.0

    knn_term = loss_smooth(F, clusters_knn(X, 4))
    surf_term = loss_smooth(F, clusters_surf(desc, 4))
    cyc_term = loss_smooth(F, clusters_cyc(X, F, Y, b.correspondences, 4))
    dist_term, _ = loss_dist(X, F, Y)
    grad = dist_term.grad + 0.5 * knn_term.grad + surf_term.grad + 10.0 * cyc_term.grad
    np.testing.assert_allclose(b.grad_total, grad, rtol=1e-12, atol=1e-15)


def test_total_zero_for_rigid_translation(rng):
    X = PointCloud(rng.normal(size=(100, 3)))
    c = np.array([0.4, -0.1, 0.25])
    F = FlowField(np.tile(c, (100, 1)))
    Y = PointCloud(X.points + F.vectors)
    desc = build_descriptors(X, estimate_normals(X, 5), 1.0)
    b = total_loss(X, F, Y, desc, LossWeights(alpha_smooth=1.0))
    assert (b.dist, b.smooth, b.surf, b.cyc, b.total) == (0.0, 0.0, 0.0, 0.0, 0.0)


def test_total_uses_cached_clusters(rng):
    X, F, Y, desc = _scene(rng)
    weights = LossWeights(alpha_surf=1.0, alpha_cyc=0.0, k=4)
    fake = ClusterSet.from_rows(np.roll(np.arange(len(X)), 1)[:, None], ClusterKind.SURF)
    cached = total_loss(X, F, Y, None, weights, cache=ClusterCache(surf=fake))
    assert cached.surf == loss_smooth(F, fake).value


def test_total_requires_descriptors_for_surf(rng):
    X, F, Y, _ = _scene(rng)
    with pytest.raises(InputError):
        total_loss(X, F, Y, None, LossWeights(alpha_surf=1.0))


def test_weights_validation():
    with pytest.raises(InputError):
        LossWeights(alpha_cyc=-1.0)
    with pytest.raises(InputError):
        LossWeights(k=0)
