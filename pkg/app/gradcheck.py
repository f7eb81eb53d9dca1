"""
Finite-difference verification of the analytic gradients.

Each trial draws a random small problem (clouds of at most 64 points, random
loss weights and neighborhood sizes, a direct field or a small coordinate
network) and compares the analytic gradient of the total loss with central
differences on a random subset of parameters. Configurations too close to a
non-differentiable point (L1 kink, nearest-neighbor boundary, ReLU kink)
are redrawn.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from app.core import (
    ClusterSet,
    NeighborIndex,
    PointCloud,
    build_index,
    squared_distances,
)
from app.errors import FlowRegError
from app.flowmodel import CoordNet, DirectFlow, FlowModel
from app.losses import (
    ClusterCache,
    LossWeights,
    clusters_cyc,
    clusters_knn,
    clusters_surf,
    loss_dist,
    total_loss,
)
from app.normals import DescriptorSet, build_descriptors, estimate_normals
from app.types import GradcheckTrial
from utils.colored_logger import setup_logger
from utils.constants import ModelVariant, NumericConstants
from utils.parallel import ordered_map

logger = setup_logger(__name__)

MAX_POINTS = 64
MIN_POINTS = 8
PROBED_ENTRIES = 12
GRADCHECK_HIDDEN = (8, 8)
MAX_REDRAWS = 200


@dataclass
class GradcheckReport:
    trials: int
    max_rel_error: float
    tol: float
    records: List[GradcheckTrial] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    @property
    def resamples(self) -> int:
        return sum(r["resamples"] for r in self.records)

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        relation = "<" if self.passed else ">="
        return (
            f"{verdict}, max rel err {self.max_rel_error:.3g} {relation} {self.tol:g} "
            f"({self.trials} trials, {self.resamples} resampled)"
        )


@dataclass
class _Problem:
    X: PointCloud
    Y: PointCloud
    index_y: NeighborIndex
    model: FlowModel
    weights: LossWeights
    descriptors: DescriptorSet
    cache: ClusterCache

    def loss(self) -> float:
        return total_loss(
            self.X,
            self.model.forward(self.X),
            self.Y,
            self.descriptors,
            self.weights,
            index_y=self.index_y,
            cache=self.cache,
        ).total

    def clusters(self) -> list[ClusterSet]:
        sets = []
        if self.weights.alpha_smooth > 0 and self.cache.knn is not None:
            sets.append(self.cache.knn)
        if self.weights.alpha_surf > 0 and self.cache.surf is not None:
            sets.append(self.cache.surf)
        if self.weights.alpha_cyc > 0 and self.cache.cyc is not None:
            sets.append(self.cache.cyc)
        return sets

    def signature(self) -> tuple[bytes, ...]:
        """Discrete state the gradient formula assumes constant."""
        flow = self.model.forward(self.X)
        _, corr = loss_dist(self.X, flow, self.Y, self.index_y)
        parts = [corr.target_index.tobytes()]
        for clusters in self.clusters():
            owners, members = clusters.pairs()
            parts.append(np.sign(flow.vectors[owners] - flow.vectors[members]).tobytes())
        if isinstance(self.model, CoordNet):
            parts.extend((z > 0.0).tobytes() for z in self.model.pre_activations(self.X))
        return tuple(parts)

    def margin(self) -> float:
        """Distance of the current state to the nearest non-differentiable point."""
        flow = self.model.forward(self.X)
        margins = [np.inf]

        warped = self.X.warped(flow)
        if self.index_y.size >= 2:
            two = self.index_y.query(warped, 2)
            d = np.sqrt(squared_distances(self.index_y.points[two], warped[:, None, :]))
            margins.append(float((d[:, 1] - d[:, 0]).min()) / 2.0)

        for clusters in self.clusters():
            owners, members = clusters.pairs()
            distinct = owners != members
            if distinct.any():
                diff = flow.vectors[owners[distinct]] - flow.vectors[members[distinct]]
                margins.append(float(np.abs(diff).min()))

        if isinstance(self.model, CoordNet):
            for z in self.model.pre_activations(self.X):
                margins.append(float(np.abs(z).min()))
        return min(margins)


def _draw_problem(rng: np.random.Generator, variant: ModelVariant) -> _Problem:
    n = int(rng.integers(MIN_POINTS, MAX_POINTS + 1))
    m = int(rng.integers(MIN_POINTS, MAX_POINTS + 1))
    X = PointCloud(rng.normal(size=(n, 3)))
    Y = PointCloud(rng.normal(size=(m, 3)) + rng.normal(scale=0.3, size=3))

    alphas = rng.uniform(0.1, 2.0, size=3) * (rng.random(3) > 0.25)
    weights = LossWeights(
        alpha_smooth=float(alphas[0]),
        alpha_surf=float(alphas[1]),
        alpha_cyc=float(alphas[2]),
        k=int(rng.integers(1, 7)),
        k_n=int(rng.integers(3, 8)),
        normal_scale=float(rng.uniform(0.0, 2.0)),
    )

    model: FlowModel
    if variant is ModelVariant.DIRECT:
        model = DirectFlow(n, initial=rng.normal(scale=0.3, size=(n, 3)))
    else:
        model = CoordNet(hidden=GRADCHECK_HIDDEN, seed=int(rng.integers(0, 2**31)))

    index_y = build_index(Y.points)
    descriptors = build_descriptors(X, estimate_normals(X, weights.k_n), weights.normal_scale)
    flow = model.forward(X)
    _, corr = loss_dist(X, flow, Y, index_y)
    cache = ClusterCache(
        knn=clusters_knn(X, weights.k),
        surf=clusters_surf(descriptors, weights.k),
        cyc=clusters_cyc(X, flow, Y, corr, weights.k, index_y),
    )
    return _Problem(X, Y, index_y, model, weights, descriptors, cache)


def _probe(problem: _Problem, rng: np.random.Generator, h: float) -> Optional[float]:
    """Relative gradient error on random entries, or None if a kink was crossed."""
    flow = problem.model.forward(problem.X)
    breakdown = total_loss(
        problem.X,
        flow,
        problem.Y,
        problem.descriptors,
        problem.weights,
        index_y=problem.index_y,
        cache=problem.cache,
    )
    analytic = problem.model.backward(problem.X, breakdown.grad_total)
    params = problem.model.parameters()
    reference = problem.signature()

    entries = [(name, idx) for name, p in params.items() for idx in np.ndindex(p.shape)]
    chosen = rng.choice(len(entries), size=min(PROBED_ENTRIES, len(entries)), replace=False)

    a_vals, n_vals = [], []
    for pick in chosen:
        name, idx = entries[int(pick)]
        param = params[name]
        original = param[idx]
        param[idx] = original + h
        plus = problem.loss()
        stable = problem.signature() == reference
        param[idx] = original - h
        minus = problem.loss()
        stable = stable and problem.signature() == reference
        param[idx] = original
        if not stable:
            return None
        a_vals.append(analytic[name][idx])
        n_vals.append((plus - minus) / (2.0 * h))

    a, num = np.array(a_vals), np.array(n_vals)
    return float(np.abs(a - num).max() / max(np.abs(num).max(), 1e-8))


def _run_trial(seed: int, trial: int, h: float) -> GradcheckTrial:
    rng = np.random.default_rng([seed, trial])
    variant = ModelVariant.DIRECT if trial % 2 == 0 else ModelVariant.COORDNET
    for redraw in range(MAX_REDRAWS):
        problem = _draw_problem(rng, variant)
        if problem.margin() < 10.0 * h:
            continue
        err = _probe(problem, rng, h)
        if err is None:
            continue
        return GradcheckTrial(
            trial=trial,
            variant=variant.value,
            n_points=len(problem.X),
            rel_error=err,
            resamples=redraw,
        )
    raise FlowRegError(f"gradcheck trial {trial}: no configuration away from kinks")


def gradcheck(
    seed: int,
    trials: int = 100,
    h: float = NumericConstants.GRADCHECK_STEP,
    tol: float = NumericConstants.GRADCHECK_TOL,
    workers: int = 1,
) -> GradcheckReport:
    """
    Compare analytic and central-difference gradients over random problems.

    Even trials use a direct field, odd trials a coordinate network.
    Relative error is ||a - n||_inf / max(||n||_inf, 1e-8).
    """
    records = ordered_map(lambda t: _run_trial(seed, t, h), range(trials), workers)
    worst = max((r["rel_error"] for r in records), default=0.0)
    report = GradcheckReport(trials=trials, max_rel_error=worst, tol=tol, records=records)
    logger.info(f"gradcheck seed={seed}: {report.summary()}")
    return report
