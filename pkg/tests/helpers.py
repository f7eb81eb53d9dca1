"""Brute-force oracles and small cloud builders for the test suite."""

import numpy as np

from app.core import PointCloud


def brute_knn(points, query, k):
    """Exhaustive search ordered by squared distance, then index."""
    points = np.asarray(points, dtype=np.float64)
    diff = points - np.asarray(query, dtype=np.float64)
    d2 = (diff * diff).sum(axis=1)
    order = np.lexsort((np.arange(len(points)), d2))
    return [int(i) for i in order[:k]]


def brute_clusters(points, k):
    """k nearest neighbors of every point, excluding the point itself."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    rows = []
    for i in range(n):
        hood = [j for j in brute_knn(points, points[i], n) if j != i]
        rows.append(hood[: min(k, n - 1)])
    return rows


def brute_smooth(flow, clusters):
    """Double-sum smoothness value over explicit cluster lists."""
    flow = np.asarray(flow, dtype=np.float64)
    n = len(flow)
    total = 0.0
    for i, members in enumerate(clusters):
        if not members:
            continue
        inner = sum(np.abs(flow[i] - flow[r]).sum() for r in members)
        total += inner / len(members)
    return total / n


def grid_cloud(nx, ny, nz=1, spacing=1.0, origin=(0.0, 0.0, 0.0)):
    """Regular grid of points, sparse enough for unambiguous matching."""
    axes = [np.arange(n) * spacing for n in (nx, ny, nz)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return PointCloud(pts + np.asarray(origin, dtype=np.float64))
