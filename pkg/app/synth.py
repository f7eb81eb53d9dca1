"""
Synthetic rigid scenes with exact ground-truth flow.

Scenes consist of rigid bodies (box surfaces, sphere surfaces, plane
patches) above a static ground patch. Each body moves by a small rotation
about its centroid plus a translation; the background stays put unless an
ego translation is requested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.spatial.transform import Rotation

from app.core import F64, I64, FlowField, PointCloud
from app.errors import InputError
from utils.colored_logger import setup_logger
from utils.constants import BodyShape, NumericConstants, SceneLayout, SynthDefaults

logger = setup_logger(__name__)


class SceneSpec(BaseModel):
    """
    Parameters of a synthetic scene; deterministic per seed.

    extra_points go to the first body so body totals need not split evenly.
    The adjacent layout always has exactly two bodies (plane and wall), so
    n_bodies must be 2 there.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_bodies: int = Field(2, ge=0)
    points_per_body: int = Field(1024, ge=0)
    extra_points: int = Field(0, ge=0)
    background_points: int = Field(512, ge=0)
    shapes: tuple[BodyShape, ...] = (BodyShape.BOX, BodyShape.SPHERE, BodyShape.PLANE)
    body_size: float = Field(SynthDefaults.BODY_SIZE, gt=0)
    translation_min: float = Field(SynthDefaults.TRANSLATION_MIN, ge=0)
    translation_max: float = Field(SynthDefaults.TRANSLATION_MAX, ge=0)
    rotation_max: float = Field(SynthDefaults.ROTATION_MAX, ge=0)
    resample_target: bool = False
    noise_sigma: float = Field(0.0, ge=0)
    layout: SceneLayout = SceneLayout.SCATTERED
    ego_translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_counts(self) -> "SceneSpec":
        if self.layout is SceneLayout.ADJACENT and self.n_bodies != 2:
            raise ValueError(f"adjacent layout needs n_bodies=2, got {self.n_bodies}")
        body_points = self.n_bodies * self.points_per_body
        if self.n_bodies > 0:
            body_points += self.extra_points
        if body_points + self.background_points < 2:
            raise ValueError("scene must contain at least two source points")
        if self.translation_min > self.translation_max:
            raise ValueError("translation_min exceeds translation_max")
        if not self.shapes:
            raise ValueError("at least one body shape is required")
        return self


def make_scene_spec(**values: Any) -> SceneSpec:
    """Validate scene parameters, reporting problems as InputError."""
    try:
        return SceneSpec(**values)
    except ValidationError as e:
        err = e.errors()[0]
        where = ".".join(str(p) for p in err["loc"]) or "spec"
        raise InputError(f"degenerate scene spec ({where}): {err['msg']}") from e


@dataclass(frozen=True, slots=True)
class SynthScene:
    """Source/target pair with ground truth; body_id 0 is background."""

    X: PointCloud
    Y: PointCloud
    F_gt: FlowField
    body_id: NDArray[I64]


def rigid_displacement(
    points: ArrayLike,
    rotation: ArrayLike,
    translation: ArrayLike,
    center: ArrayLike,
) -> NDArray[F64]:
    """flow_i = R (p_i - c) + c + t - p_i."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    R = np.asarray(rotation, dtype=np.float64)
    if R.shape != (3, 3):
        raise InputError(f"rotation must be 3x3, got {R.shape}")
    tol = NumericConstants.ROTATION_TOL
    if not np.allclose(R @ R.T, np.eye(3), atol=tol, rtol=0.0) or abs(
        np.linalg.det(R) - 1.0
    ) > tol:
        raise InputError("non-orthonormal rotation")
    c = np.asarray(center, dtype=np.float64).reshape(3)
    t = np.asarray(translation, dtype=np.float64).reshape(3)
    return (pts - c) @ R.T + c + t - pts


def _sample_box(rng: np.random.Generator, n: int, size: float) -> NDArray[F64]:
    half = size / 2.0
    pts = rng.uniform(-half, half, size=(n, 3))
    face = rng.integers(0, 6, size=n)
    axis = face // 2
    pts[np.arange(n), axis] = np.where(face % 2 == 0, -half, half)
    return pts


def _sample_sphere(rng: np.random.Generator, n: int, size: float) -> NDArray[F64]:
    direction = rng.normal(size=(n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return direction * (size / 2.0)


def _sample_plane(rng: np.random.Generator, n: int, size: float) -> NDArray[F64]:
    half = size / 2.0
    pts = np.zeros((n, 3))
    pts[:, :2] = rng.uniform(-half, half, size=(n, 2))
    return pts


_SAMPLERS = {
    BodyShape.BOX: _sample_box,
    BodyShape.SPHERE: _sample_sphere,
    BodyShape.PLANE: _sample_plane,
}


@dataclass(frozen=True, slots=True)
class _Body:
    shape: BodyShape
    size: float
    orientation: NDArray[F64]  # body frame -> world
    center: NDArray[F64]
    rotation: NDArray[F64]  # motion about center
    translation: NDArray[F64]

    def sample(self, rng: np.random.Generator, n: int) -> NDArray[F64]:
        local = _SAMPLERS[self.shape](rng, n, self.size)
        return local @ self.orientation.T + self.center


def _random_motion(
    rng: np.random.Generator, spec: SceneSpec
) -> tuple[NDArray[F64], NDArray[F64]]:
    heading = rng.uniform(0.0, 2.0 * math.pi)
    magnitude = rng.uniform(spec.translation_min, spec.translation_max)
    translation = magnitude * np.array([math.cos(heading), math.sin(heading), 0.0])
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, spec.rotation_max)
    rotation = Rotation.from_rotvec(axis * angle).as_matrix()
    return rotation, translation


def _yaw(angle: float) -> NDArray[F64]:
    return Rotation.from_euler("z", angle).as_matrix()


def _place_scattered(rng: np.random.Generator, spec: SceneSpec) -> tuple[list[_Body], float]:
    diameter = spec.body_size * math.sqrt(3.0)
    min_sep = 2.0 * diameter
    extent = max(5.0, diameter * (spec.n_bodies + 1))
    centers: list[NDArray[F64]] = []
    attempts = 0
    while len(centers) < spec.n_bodies:
        candidate = np.array(
            [
                rng.uniform(-extent, extent),
                rng.uniform(-extent, extent),
                spec.body_size / 2.0 + 0.25,
            ]
        )
        if all(np.linalg.norm(candidate[:2] - c[:2]) >= min_sep for c in centers):
            centers.append(candidate)
        attempts += 1
        if attempts % SynthDefaults.PLACEMENT_ATTEMPTS == 0:
            extent *= 1.5

    bodies = []
    for center in centers:
        shape = spec.shapes[int(rng.integers(0, len(spec.shapes)))]
        rotation, translation = _random_motion(rng, spec)
        bodies.append(
            _Body(
                shape=shape,
                size=spec.body_size,
                orientation=_yaw(rng.uniform(0.0, 2.0 * math.pi)),
                center=center,
                rotation=rotation,
                translation=translation,
            )
        )
    return bodies, extent + diameter


def _place_adjacent(rng: np.random.Generator, spec: SceneSpec) -> tuple[list[_Body], float]:
    """A horizontal plane and a vertical wall, SynthDefaults.ADJACENT_GAP apart."""
    size = spec.body_size
    plane_rot, plane_t = _random_motion(rng, spec)
    wall_rot, wall_t = _random_motion(rng, spec)
    plane = _Body(
        shape=BodyShape.PLANE,
        size=2.0 * size,
        orientation=np.eye(3),
        center=np.zeros(3),
        rotation=plane_rot,
        translation=plane_t,
    )
    # plane patch rotated to stand upright (normal along y), bottom edge gap above
    upright = Rotation.from_euler("x", math.pi / 2.0).as_matrix()
    wall = _Body(
        shape=BodyShape.PLANE,
        size=size,
        orientation=upright,
        center=np.array([0.0, 0.0, SynthDefaults.ADJACENT_GAP + size / 2.0]),
        rotation=wall_rot,
        translation=wall_t,
    )
    return [plane, wall], 2.0 * size


def generate_scene(spec: SceneSpec) -> SynthScene:
    """Sample a source/target pair and its exact ground-truth flow."""
    rng = np.random.default_rng(spec.seed)
    if spec.layout is SceneLayout.ADJACENT:
        bodies, extent = _place_adjacent(rng, spec)
        ground_z = -spec.body_size
    else:
        bodies, extent = _place_scattered(rng, spec)
        ground_z = 0.0
    ego = np.asarray(spec.ego_translation, dtype=np.float64)

    src_parts, flow_parts, tgt_parts, labels = [], [], [], []
    for body_id, body in enumerate(bodies, start=1):
        n = spec.points_per_body + (spec.extra_points if body_id == 1 else 0)
        if n == 0:
            continue
        source = body.sample(rng, n)
        flow = rigid_displacement(source, body.rotation, body.translation, body.center) + ego
        if spec.resample_target:
            fresh = body.sample(rng, n)
            target = (
                fresh
                + rigid_displacement(fresh, body.rotation, body.translation, body.center)
                + ego
            )
        else:
            target = source + flow
        src_parts.append(source)
        flow_parts.append(flow)
        tgt_parts.append(target)
        labels.append(np.full(n, body_id, dtype=np.int64))

    if spec.background_points > 0:
        n = spec.background_points
        ground = np.column_stack(
            [rng.uniform(-extent, extent, size=(n, 2)), np.full(n, ground_z)]
        )
        flow = np.broadcast_to(ego, (n, 3)).copy()
        if spec.resample_target:
            target = (
                np.column_stack(
                    [rng.uniform(-extent, extent, size=(n, 2)), np.full(n, ground_z)]
                )
                + ego
            )
        else:
            target = ground + flow
        src_parts.append(ground)
        flow_parts.append(flow)
        tgt_parts.append(target)
        labels.append(np.zeros(n, dtype=np.int64))

    source = np.vstack(src_parts)
    flow = np.vstack(flow_parts)
    target = np.vstack(tgt_parts)
    if spec.noise_sigma > 0:
        source = source + rng.normal(scale=spec.noise_sigma, size=source.shape)
        target = target + rng.normal(scale=spec.noise_sigma, size=target.shape)
    target = target[rng.permutation(target.shape[0])]

    logger.debug(
        f"generated scene seed={spec.seed}: {len(bodies)} bodies, "
        f"{source.shape[0]} source / {target.shape[0]} target points"
    )
    return SynthScene(
        X=PointCloud(source),
        Y=PointCloud(target),
        F_gt=FlowField(flow),
        body_id=np.concatenate(labels),
    )
