import numpy as np
import pytest
from scipy.spatial.distance import pdist

from app.core import ClusterSet
from app.errors import InputError
from app.losses import loss_dist, loss_smooth
from app.metrics import compute_metrics
from app.synth import SceneSpec, generate_scene, make_scene_spec, rigid_displacement
from utils.constants import BodyShape, ClusterKind, SceneLayout, SynthDefaults


def _sorted_rows(a):
    return a[np.lexsort(a.T[::-1])]


# ============ rigid_displacement ============


def test_pure_translation():
    pts = np.array([[0.0, 0.0, 0.0], [2.0, -1.0, 4.0]])
    flow = rigid_displacement(pts, np.eye(3), [1.0, 0.0, 0.0], [0.0, 0.0, 0.0])
    np.testing.assert_array_equal(flow, [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])


def test_identity_motion():
    pts = np.array([[1.0, 2.0, 3.0]])
    flow = rigid_displacement(pts, np.eye(3), np.zeros(3), [0.5, 0.5, 0.5])
    np.testing.assert_array_equal(flow, 0.0)


def test_quarter_turn_about_z():
    R = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    flow = rigid_displacement([[1.0, 0.0, 0.0]], R, np.zeros(3), np.zeros(3))
    np.testing.assert_allclose(flow, [[-1.0, 1.0, 0.0]], atol=1e-15)


@pytest.mark.parametrize(
    "R",
    [np.diag([1.0, 1.0, -1.0]), 1.01 * np.eye(3), np.ones((3, 3))],
    ids=["reflection", "scaled", "singular"],
)
def test_non_orthonormal_rotation_rejected(R):
    with pytest.raises(InputError, match="non-orthonormal rotation"):
        rigid_displacement(np.zeros((1, 3)), R, np.zeros(3), np.zeros(3))


# ============ generate_scene ============


def test_ground_truth_aligns_exactly():
    spec = SceneSpec(n_bodies=1, points_per_body=300, background_points=0, rotation_max=0.0)
    scene = generate_scene(spec)
    term, _ = loss_dist(scene.X, scene.F_gt, scene.Y)
    assert term.value == 0.0


def test_same_seed_identical():
    spec = SceneSpec(n_bodies=3, points_per_body=200, background_points=100, seed=42)
    a, b = generate_scene(spec), generate_scene(spec)
    np.testing.assert_array_equal(a.X.points, b.X.points)
    np.testing.assert_array_equal(a.Y.points, b.Y.points)
    np.testing.assert_array_equal(a.F_gt.vectors, b.F_gt.vectors)
    np.testing.assert_array_equal(a.body_id, b.body_id)


def test_different_seed_differs():
    a = generate_scene(SceneSpec(points_per_body=50, background_points=10, seed=1))
    b = generate_scene(SceneSpec(points_per_body=50, background_points=10, seed=2))
    assert not np.array_equal(a.X.points, b.X.points)


def test_ground_truth_self_metrics():
    scene = generate_scene(SceneSpec(n_bodies=3, points_per_body=150, background_points=50))
    m = compute_metrics(scene.F_gt, scene.F_gt)
    assert m.epe == 0.0
    assert m.acc_strict == 100.0


def test_bodies_move_rigidly():
    spec = SceneSpec(n_bodies=3, points_per_body=80, background_points=40, seed=7)
    scene = generate_scene(spec)
    warped = scene.X.points + scene.F_gt.vectors
    for body in range(1, 4):
        mask = scene.body_id == body
        np.testing.assert_allclose(
            pdist(warped[mask]), pdist(scene.X.points[mask]), rtol=0.0, atol=1e-9
        )


def test_exact_warp_is_multiset_equal():
    scene = generate_scene(SceneSpec(n_bodies=2, points_per_body=100, background_points=60))
    warped = scene.X.points + scene.F_gt.vectors
    np.testing.assert_array_equal(_sorted_rows(warped), _sorted_rows(scene.Y.points))


def test_body_ids_partition_source():
    spec = SceneSpec(n_bodies=3, points_per_body=25, background_points=30)
    scene = generate_scene(spec)
    assert len(scene.body_id) == len(scene.X)
    counts = np.bincount(scene.body_id)
    assert counts.tolist() == [30, 25, 25, 25]
    np.testing.assert_array_equal(scene.F_gt.vectors[scene.body_id == 0], 0.0)


def test_translating_body_has_no_smoothness_penalty():
    spec = SceneSpec(
        n_bodies=1,
        points_per_body=60,
        background_points=0,
        rotation_max=0.0,
        shapes=(BodyShape.SPHERE,),
    )
    scene = generate_scene(spec)
    n = len(scene.X)
    everyone = np.tile(np.arange(n), (n, 1))
    clusters = ClusterSet.from_rows(everyone, ClusterKind.KNN)
    assert loss_smooth(scene.F_gt, clusters).value == pytest.approx(0.0, abs=1e-12)


def test_ego_translation_moves_background():
    spec = SceneSpec(
        n_bodies=1, points_per_body=10, background_points=20, ego_translation=(0.5, 0.0, 0.0)
    )
    scene = generate_scene(spec)
    background = scene.F_gt.vectors[scene.body_id == 0]
    np.testing.assert_array_equal(background, np.tile([0.5, 0.0, 0.0], (20, 1)))


def test_resampled_target_is_not_a_warp():
    spec = SceneSpec(n_bodies=2, points_per_body=100, background_points=50, resample_target=True)
    scene = generate_scene(spec)
    assert len(scene.Y) == len(scene.X)
    term, _ = loss_dist(scene.X, scene.F_gt, scene.Y)
    assert term.value > 0.0


def test_noise_perturbs_both_clouds():
    clean = generate_scene(SceneSpec(points_per_body=50, background_points=20, seed=5))
    noisy = generate_scene(
        SceneSpec(points_per_body=50, background_points=20, seed=5, noise_sigma=0.01)
    )
    np.testing.assert_array_equal(clean.F_gt.vectors, noisy.F_gt.vectors)
    assert not np.array_equal(clean.X.points, noisy.X.points)


def test_adjacent_layout():
    spec = SceneSpec(layout=SceneLayout.ADJACENT, points_per_body=200, background_points=100)
    scene = generate_scene(spec)
    assert set(np.unique(scene.body_id).tolist()) == {0, 1, 2}
    plane = scene.X.points[scene.body_id == 1]
    wall = scene.X.points[scene.body_id == 2]
    np.testing.assert_array_equal(plane[:, 2], 0.0)
    assert wall[:, 2].min() >= SynthDefaults.ADJACENT_GAP - 1e-9
    # the wall stands upright: it spans z but not y
    assert np.ptp(wall[:, 1]) < 1e-9
    assert np.ptp(wall[:, 2]) > 1.0
    ground = scene.X.points[scene.body_id == 0]
    np.testing.assert_array_equal(ground[:, 2], -spec.body_size)


@pytest.mark.parametrize(
    "values",
    [
        {"n_bodies": 0, "points_per_body": 0, "background_points": 1},
        {"translation_min": 2.0, "translation_max": 1.0},
        {"shapes": ()},
        {"points_per_body": -1},
    ],
)
def test_degenerate_spec_rejected(values):
    with pytest.raises(InputError, match="degenerate scene spec"):
        make_scene_spec(**values)


def test_extra_points_go_to_first_body():
    spec = SceneSpec(n_bodies=3, points_per_body=100, extra_points=2, background_points=10)
    scene = generate_scene(spec)
    assert len(scene.X) == 312
    counts = np.bincount(scene.body_id)
    assert counts.tolist() == [10, 102, 100, 100]


def test_adjacent_layout_rejects_other_body_counts():
    with pytest.raises(InputError, match="adjacent layout needs n_bodies=2"):
        make_scene_spec(layout=SceneLayout.ADJACENT, n_bodies=3)
