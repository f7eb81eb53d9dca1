import numpy as np
import pytest

from app.core import PointCloud
from app.errors import InputError
from app.losses import clusters_knn, clusters_surf
from app.normals import NormalField, build_descriptors, estimate_normals


def test_plane_normals_face_viewpoint(rng):
    pts = np.column_stack([rng.uniform(-1, 1, size=(100, 2)), np.zeros(100)])
    normals = estimate_normals(PointCloud(pts), k_n=5, viewpoint=(0.0, 0.0, 5.0))
    assert normals.valid.all()
    angles = np.arccos(np.clip(normals.normals @ np.array([0.0, 0.0, 1.0]), -1.0, 1.0))
    assert angles.max() < 1e-6


def test_plane_normals_flip_with_viewpoint(rng):
    pts = np.column_stack([rng.uniform(-1, 1, size=(50, 2)), np.full(50, 2.0)])
    normals = estimate_normals(PointCloud(pts), k_n=6, viewpoint=(0.0, 0.0, 0.0))
    np.testing.assert_allclose(normals.normals[:, 2], -1.0, atol=1e-12)


def test_tilted_plane(rng):
    uv = rng.uniform(-1, 1, size=(80, 2))
    a, b = np.array([1.0, 0.0, 1.0]) / np.sqrt(2), np.array([0.0, 1.0, 0.0])
    pts = uv[:, :1] * a + uv[:, 1:] * b
    expected = np.cross(a, b)
    normals = estimate_normals(PointCloud(pts), k_n=8, viewpoint=10 * expected)
    cos = normals.normals @ expected
    assert np.arccos(np.clip(cos, -1.0, 1.0)).max() < 1e-6


def test_sphere_normals_point_to_center(rng):
    pts = rng.normal(size=(2000, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    normals = estimate_normals(PointCloud(pts), k_n=5, viewpoint=(0.0, 0.0, 0.0))
    inward = -pts
    cos = np.clip((normals.normals * inward).sum(axis=1), -1.0, 1.0)
    assert np.degrees(np.median(np.arccos(cos))) < 10.0


def test_collinear_points_flagged_invalid():
    pts = np.column_stack([np.arange(5.0), np.zeros(5), np.zeros(5)])
    normals = estimate_normals(PointCloud(pts), k_n=5)
    assert not normals.valid.any()
    assert normals.n_invalid == 5
    np.testing.assert_array_equal(normals.normals, 0.0)


def test_small_neighborhood_rejected():
    with pytest.raises(InputError, match="degenerate neighborhood"):
        estimate_normals(PointCloud(np.eye(3)), k_n=2)


def test_cloud_smaller_than_neighborhood_rejected():
    with pytest.raises(InputError, match="degenerate neighborhood"):
        estimate_normals(PointCloud(np.eye(3)), k_n=5)


def test_descriptor_concatenation():
    cloud = PointCloud([[1.0, 2.0, 3.0]])
    normals = NormalField(np.array([[0.0, 0.0, 1.0]]), np.array([True]))
    desc = build_descriptors(cloud, normals, 1.0)
    np.testing.assert_array_equal(desc.descriptors, [[1.0, 2.0, 3.0, 0.0, 0.0, 1.0]])


def test_descriptor_scale_and_invalid_slot():
    cloud = PointCloud([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    normals = NormalField(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]), np.array([True, False]))
    desc = build_descriptors(cloud, normals, 2.5)
    np.testing.assert_array_equal(desc.descriptors[0, 3:], [0.0, 2.5, 0.0])
    np.testing.assert_array_equal(desc.descriptors[1, 3:], [0.0, 0.0, 0.0])


def test_zero_scale_surf_equals_knn(rng):
    cloud = PointCloud(rng.uniform(size=(120, 3)))
    desc = build_descriptors(cloud, estimate_normals(cloud, 5), normal_scale=0.0)
    surf = clusters_surf(desc, 6)
    plain = clusters_knn(cloud, 6)
    np.testing.assert_array_equal(surf.offsets, plain.offsets)
    np.testing.assert_array_equal(surf.members, plain.members)
