"""
Flow parameterizations and their fitting by Adam on the self-supervised objective.

Two parameterizations are provided: a direct field with one free 3-vector
per source point, and a coordinate network (fully connected, ReLU) mapping a
source position to its flow, whose structure acts as an implicit prior.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Type

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from app.core import F64, FlowField, PointCloud, build_index
from app.errors import ConfigError, DivergenceError, InputError
from app.losses import (
    ClusterCache,
    LossBreakdown,
    LossWeights,
    clusters_knn,
    clusters_surf,
    total_loss,
)
from app.normals import build_descriptors, estimate_normals
from utils.colored_logger import setup_logger
from utils.constants import (
    LossDefaults,
    ModelVariant,
    OptimizerDefaults,
    Preset,
    get_preset_defaults,
)

logger = setup_logger(__name__)

Params = Dict[str, NDArray[F64]]


class FlowModel(ABC):
    """Abstract flow parameterization."""

    @property
    @abstractmethod
    def variant(self) -> ModelVariant:
        """Return the variant implemented by this model."""

    @abstractmethod
    def parameters(self) -> Params:
        """Live parameter arrays, updated in place by the optimizer."""

    @abstractmethod
    def forward(self, X: PointCloud) -> FlowField:
        """Flow field over the source cloud."""

    @abstractmethod
    def backward(self, X: PointCloud, grad_flow: NDArray[F64]) -> Params:
        """Gradients of a loss w.r.t. every parameter, given dL/dF."""

    def _check_grad(self, X: PointCloud, grad_flow: NDArray[F64]) -> NDArray[F64]:
        grad = np.asarray(grad_flow, dtype=np.float64)
        if grad.shape != (len(X), 3):
            raise InputError(
                f"grad_flow shape {grad.shape} does not match cloud size {len(X)}"
            )
        return grad


class DirectFlow(FlowModel):
    """One free 3D displacement parameter per source point."""

    def __init__(self, n_points: int, initial: Optional[NDArray[F64]] = None):
        if n_points < 1:
            raise InputError("direct flow needs at least one point")
        flow = np.zeros((n_points, 3)) if initial is None else np.array(initial, dtype=np.float64)
        if flow.shape != (n_points, 3):
            raise InputError(f"initial flow shape {flow.shape} != ({n_points}, 3)")
        self._params: Params = {"flow": flow}

    @property
    def variant(self) -> ModelVariant:
        return ModelVariant.DIRECT

    def parameters(self) -> Params:
        return self._params

    def forward(self, X: PointCloud) -> FlowField:
        flow = self._params["flow"]
        if flow.shape[0] != len(X):
            raise InputError(
                f"direct flow has {flow.shape[0]} vectors, cloud has {len(X)} points"
            )
        return FlowField(flow)

    def backward(self, X: PointCloud, grad_flow: NDArray[F64]) -> Params:
        return {"flow": self._check_grad(X, grad_flow).copy()}


class CoordNet(FlowModel):
    """
    Fully connected network position -> flow with ReLU between hidden layers.

    Parameters are named W0, b0, ..., WL, bL; weights are stored as
    (fan_in, fan_out) so that a layer computes a @ W + b.
    """

    def __init__(
        self,
        hidden: tuple[int, ...] = OptimizerDefaults.HIDDEN_LAYERS,
        seed: int = 0,
        params: Optional[Params] = None,
    ):
        self.sizes = (3, *[int(h) for h in hidden], 3)
        if any(s < 1 for s in self.sizes):
            raise InputError(f"invalid layer sizes {self.sizes}")
        self._params = self._init_params(seed) if params is None else self._adopt(params)

    @property
    def variant(self) -> ModelVariant:
        return ModelVariant.COORDNET

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def _init_params(self, seed: int) -> Params:
        rng = np.random.default_rng(seed)
        params: Params = {}
        for layer, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = 1.0 / math.sqrt(fan_in)
            params[f"W{layer}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            params[f"b{layer}"] = rng.uniform(-bound, bound, size=fan_out)
        return params

    def _adopt(self, params: Mapping[str, NDArray[F64]]) -> Params:
        adopted: Params = {}
        for layer, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            try:
                w = np.array(params[f"W{layer}"], dtype=np.float64)
                b = np.array(params[f"b{layer}"], dtype=np.float64)
            except KeyError as e:
                raise InputError(f"missing coordnet parameter {e}") from e
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise InputError(
                    f"layer {layer} shapes {w.shape}/{b.shape} do not match "
                    f"({fan_in}, {fan_out})"
                )
            adopted[f"W{layer}"] = w
            adopted[f"b{layer}"] = b
        return adopted

    def parameters(self) -> Params:
        return self._params

    def _activations(
        self, X: PointCloud
    ) -> tuple[list[NDArray[F64]], list[NDArray[F64]], NDArray[F64]]:
        inputs = [X.points]
        pre: list[NDArray[F64]] = []
        a = X.points
        for layer in range(self.n_layers - 1):
            z = a @ self._params[f"W{layer}"] + self._params[f"b{layer}"]
            pre.append(z)
            a = np.maximum(z, 0.0)
            inputs.append(a)
        last = self.n_layers - 1
        out = a @ self._params[f"W{last}"] + self._params[f"b{last}"]
        return inputs, pre, out

    def pre_activations(self, X: PointCloud) -> list[NDArray[F64]]:
        """Hidden-layer pre-activations (used to detect ReLU kinks)."""
        return self._activations(X)[1]

    def forward(self, X: PointCloud) -> FlowField:
        return FlowField(self._activations(X)[2])

    def backward(self, X: PointCloud, grad_flow: NDArray[F64]) -> Params:
        delta = self._check_grad(X, grad_flow)
        inputs, pre, _ = self._activations(X)
        grads: Params = {}
        for layer in reversed(range(self.n_layers)):
            grads[f"W{layer}"] = inputs[layer].T @ delta
            grads[f"b{layer}"] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self._params[f"W{layer}"].T) * (pre[layer - 1] > 0.0)
        return grads


# Registry of available parameterizations
MODEL_REGISTRY: Dict[ModelVariant, Type[FlowModel]] = {
    ModelVariant.DIRECT: DirectFlow,
    ModelVariant.COORDNET: CoordNet,
}


def create_model(
    variant: ModelVariant | str,
    n_points: int,
    hidden: tuple[int, ...] = OptimizerDefaults.HIDDEN_LAYERS,
    seed: int = 0,
) -> FlowModel:
    """
    Create a flow model, passing only the arguments its variant uses.

    Args:
        variant: direct or coordnet
        n_points: Source cloud size (direct field)
        hidden: Hidden layer widths (coordnet)
        seed: Weight initialization seed (coordnet)
    """
    variant = ModelVariant(str(variant))
    model_class = MODEL_REGISTRY[variant]
    if model_class is CoordNet:
        return CoordNet(hidden=tuple(hidden), seed=seed)
    return DirectFlow(n_points)


def forward(model: FlowModel, X: PointCloud) -> FlowField:
    """Flow field produced by model over X."""
    return model.forward(X)


def backward(model: FlowModel, X: PointCloud, grad_flow: NDArray[F64]) -> Params:
    """Parameter gradients given the loss gradient w.r.t. the flow."""
    return model.backward(X, grad_flow)


class Adam:
    """Adam optimizer over named parameter arrays (updated in place)."""

    def __init__(
        self,
        lr: float = OptimizerDefaults.LEARNING_RATE,
        beta1: float = OptimizerDefaults.BETA1,
        beta2: float = OptimizerDefaults.BETA2,
        epsilon: float = OptimizerDefaults.EPSILON,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m: Params = {}
        self.v: Params = {}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        step_size = self.lr / bc1

        for name, param in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(param)
                self.v[name] = np.zeros_like(param)

            self.m[name] *= self.beta1
            self.m[name] += (1.0 - self.beta1) * g
            self.v[name] *= self.beta2
            self.v[name] += (1.0 - self.beta2) * (g * g)

            denom = np.sqrt(self.v[name] / bc2) + self.epsilon
            param -= step_size * self.m[name] / denom


class FitConfig(BaseModel):
    """Optimization settings; keys mirror the flat YAML config file."""

    model_config = ConfigDict(extra="forbid", frozen=True, use_enum_values=False)

    preset: Optional[Preset] = None
    alpha_smooth: float = Field(LossDefaults.ALPHA_SMOOTH, ge=0)
    alpha_surf: float = Field(LossDefaults.ALPHA_SURF, ge=0)
    alpha_cyc: float = Field(LossDefaults.ALPHA_CYC, ge=0)
    k: int = Field(LossDefaults.K, ge=1)
    k_n: int = Field(LossDefaults.K_NORMALS, ge=3)
    normal_scale: float = Field(LossDefaults.NORMAL_SCALE, ge=0)
    viewpoint: tuple[float, float, float] = (0.0, 0.0, 0.0)

    model: ModelVariant = ModelVariant.DIRECT
    hidden: tuple[int, ...] = OptimizerDefaults.HIDDEN_LAYERS

    learning_rate: float = Field(OptimizerDefaults.LEARNING_RATE, gt=0)
    beta1: float = Field(OptimizerDefaults.BETA1, ge=0, lt=1)
    beta2: float = Field(OptimizerDefaults.BETA2, ge=0, lt=1)
    epsilon: float = Field(OptimizerDefaults.EPSILON, gt=0)
    max_iters: int = Field(OptimizerDefaults.MAX_ITERS, ge=1)
    convergence_tol: float = Field(OptimizerDefaults.CONVERGENCE_TOL, ge=0)
    patience: int = Field(OptimizerDefaults.PATIENCE, ge=1)
    cyc_refresh_every: int = Field(OptimizerDefaults.CYC_REFRESH_EVERY, ge=1)
    log_every: int = Field(OptimizerDefaults.LOG_EVERY, ge=1)
    seed: int = 0

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            alpha_smooth=self.alpha_smooth,
            alpha_surf=self.alpha_surf,
            alpha_cyc=self.alpha_cyc,
            k=self.k,
            k_n=self.k_n,
            normal_scale=self.normal_scale,
        )


def resolve_fit_config(
    preset: Preset | str | None = None,
    file_values: Optional[Mapping[str, Any]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> FitConfig:
    """
    Merge configuration layers into a FitConfig.

    Priority: overrides (CLI flags) > file values > preset > defaults.
    None-valued overrides are ignored.

    Raises:
        ConfigError: Unknown keys or invalid values, naming the keys
    """
    file_values = dict(file_values or {})
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

    chosen = overrides.get("preset") or file_values.get("preset") or preset
    merged: Dict[str, Any] = {}
    if chosen is not None:
        try:
            chosen = Preset(str(chosen))
        except ValueError as e:
            raise ConfigError(f"unknown preset {chosen!r}", keys=["preset"]) from e
        merged.update(get_preset_defaults(chosen))
        merged["preset"] = chosen
    merged.update(file_values)
    merged.update(overrides)
    if chosen is not None:
        merged["preset"] = chosen

    try:
        return FitConfig(**merged)
    except ValidationError as e:
        unknown = [
            ".".join(str(p) for p in err["loc"])
            for err in e.errors()
            if err["type"] == "extra_forbidden"
        ]
        if unknown:
            raise ConfigError(
                f"unknown config key(s): {', '.join(unknown)}", keys=unknown
            ) from e
        bad = [".".join(str(p) for p in err["loc"]) for err in e.errors()]
        raise ConfigError(
            f"invalid config value(s) for {', '.join(bad)}: {e.errors()[0]['msg']}",
            keys=bad,
        ) from e


@dataclass(frozen=True, slots=True)
class LossRecord:
    """Loss values of one iteration."""

    iteration: int
    dist: float
    smooth: float
    surf: Optional[float]
    cyc: float
    total: float


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.6g}"


@dataclass
class FitResult:
    """Outcome of fit: the best iterate and the loss history."""

    flow: FlowField
    best: LossBreakdown
    best_iteration: int
    iterations: int
    converged: bool
    model: FlowModel
    history: List[LossRecord] = field(default_factory=list)

    def best_so_far(self) -> list[float]:
        """Running minimum of the total loss (non-increasing)."""
        return list(np.minimum.accumulate([r.total for r in self.history]))


def fit(
    X: PointCloud,
    Y: PointCloud,
    cfg: FitConfig,
    *,
    model: Optional[FlowModel] = None,
    workers: int = 1,
) -> FitResult:
    """
    Fit a flow from X to Y by Adam on the combined objective.

    Normals, descriptors and surface/k-NN clusters depend only on X and are
    computed once; correspondences and cyclic clusters follow the current
    flow (cyclic clusters refreshed every cfg.cyc_refresh_every iterations).
    Returns the flow of the lowest-loss iterate.
    """
    weights = cfg.loss_weights()
    if model is None:
        model = create_model(cfg.model, n_points=len(X), hidden=cfg.hidden, seed=cfg.seed)

    index_y = build_index(Y.points, workers=workers)
    cache = ClusterCache()
    descriptors = None
    # surf is reported for every fit where normals exist, weighted or not
    if weights.alpha_surf > 0 or len(X) >= cfg.k_n:
        normals = estimate_normals(X, cfg.k_n, cfg.viewpoint, workers=workers)
        descriptors = build_descriptors(X, normals, cfg.normal_scale)
        cache.surf = clusters_surf(descriptors, cfg.k, workers=workers)
    if len(X) >= 2:
        cache.knn = clusters_knn(X, cfg.k, workers=workers)

    optimizer = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    params = model.parameters()

    history: List[LossRecord] = []
    best: Optional[LossBreakdown] = None
    best_flow: Optional[FlowField] = None
    best_iteration = 0
    previous: Optional[float] = None
    stall = 0
    converged = False
    iteration = 0

    for iteration in range(cfg.max_iters):
        flow = model.forward(X)
        if iteration % cfg.cyc_refresh_every == 0:
            cache.cyc = None
        breakdown = total_loss(
            X, flow, Y, descriptors, weights, index_y=index_y, cache=cache, workers=workers
        )
        if cache.cyc is None:
            cache.cyc = breakdown.cyc_clusters

        terms = breakdown.terms()
        if not all(v is None or math.isfinite(v) for v in terms.values()) or not np.all(
            np.isfinite(breakdown.grad_total)
        ):
            raise DivergenceError(iteration, terms)
        history.append(
            LossRecord(
                iteration,
                dist=breakdown.dist,
                smooth=breakdown.smooth,
                surf=breakdown.surf,
                cyc=breakdown.cyc,
                total=breakdown.total,
            )
        )

        if best is None or breakdown.total < best.total:
            best, best_flow, best_iteration = breakdown, flow, iteration
        # stall counter follows the current loss, not the best one
        if previous is None or previous == 0.0:
            change = math.inf
        else:
            change = abs(previous - breakdown.total) / previous
        previous = breakdown.total

        if iteration % cfg.log_every == 0:
            logger.debug(
                f"iter {iteration}: total={breakdown.total:.6g} dist={breakdown.dist:.6g} "
                f"smooth={breakdown.smooth:.6g} surf={_fmt(breakdown.surf)} cyc={breakdown.cyc:.6g}"
            )

        if breakdown.total == 0.0:
            converged = True
            break
        stall = stall + 1 if change < cfg.convergence_tol else 0
        if stall >= cfg.patience:
            converged = True
            break

        optimizer.step(params, model.backward(X, breakdown.grad_total))

    assert best is not None and best_flow is not None
    logger.info(
        f"fit finished after {iteration + 1} iterations "
        f"({'converged' if converged else 'max_iters reached'}), "
        f"best total={best.total:.6g} at iteration {best_iteration}"
    )
    return FitResult(
        flow=best_flow,
        best=best,
        best_iteration=best_iteration,
        iterations=iteration + 1,
        converged=converged,
        model=model,
        history=history,
    )
