"""Coarse-to-fine direct optimisation of a per-point flow field.

The flow vectors themselves are the optimisation variables. Each pyramid
level runs gradient descent with backtracking on the lambda-weighted sum of
the four self-supervised losses, with each gradient smoothed over the
source kNN graph (``smoothing``) before the step. Discrete correspondences are re-frozen
every ``nn_refresh_interval`` iterations, and the converged level flow is
inverse-distance upsampled to initialise the next finer level.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .camera import CameraIntrinsics, DepthMap
from .cloud import NNIndex, PointCloud, random_sample
from .errors import ConfigError, EmptyInputError, NumericalFailure
from .losses import (
    LossReport,
    LossWeights,
    chamfer_loss,
    chamfer_match,
    disparity_consistency_loss,
    disparity_match,
    idw_weights,
    laplacian_loss,
    laplacian_match,
    laplacian_vectors,
    smoothness_loss,
    smoothness_neighbors,
    total_loss,
)

__all__ = ["SolverConfig", "Pyramid", "SolveTrace", "build_pyramid", "upsample_flow", "solve"]

log = logging.getLogger(__name__)

DEFAULT_LEVEL_WEIGHTS = LossWeights().level_weights


class SolverConfig(BaseModel):
    """Solver settings, read from a flat JSON object.

    ``level_weights`` are listed finest level first and must have
    ``num_levels`` entries. When omitted with fewer than four levels, the
    finest entries of the default schedule are used.
    """

    model_config = ConfigDict(extra="forbid", frozen=True, strict=True)

    num_levels: int = Field(default=4, ge=1)
    level_ratio: int = Field(default=4, ge=2)
    iterations: int = Field(default=200, ge=1)
    step: float = Field(default=0.05, gt=0, allow_inf_nan=False)
    decay: float = Field(default=0.5, gt=0, le=1)
    max_backtracks: int = Field(default=10, ge=0)
    tolerance: float = Field(default=1e-6, ge=0, allow_inf_nan=False)
    nn_refresh_interval: int = Field(default=10, ge=1)
    k_neighbors: int = Field(default=8, ge=1)
    lambda_chamfer: float = Field(default=1.0, ge=0, allow_inf_nan=False)
    lambda_smooth: float = Field(default=0.2, ge=0, allow_inf_nan=False)
    lambda_laplace: float = Field(default=0.2, ge=0, allow_inf_nan=False)
    lambda_disp: float = Field(default=1.0, ge=0, allow_inf_nan=False)
    level_weights: tuple[float, ...] = DEFAULT_LEVEL_WEIGHTS
    chamfer_reduction: Literal["sum", "mean"] = "sum"
    disparity_levels: Literal["finest", "all"] = "finest"
    disparity_mode: Literal["warped", "literal"] = "warped"
    upsample_k: int = Field(default=3, ge=1)
    smoothing: float = Field(default=100.0, ge=0, allow_inf_nan=False)
    seed: int = 0

    @field_validator("level_weights", mode="before")
    @classmethod
    def _as_tuple(cls, v):
        return tuple(v) if isinstance(v, list) else v

    @model_validator(mode="before")
    @classmethod
    def _default_schedule(cls, data):
        if isinstance(data, dict) and "level_weights" not in data:
            n = data.get("num_levels")
            if isinstance(n, int) and 1 <= n < len(DEFAULT_LEVEL_WEIGHTS):
                data = {**data, "level_weights": DEFAULT_LEVEL_WEIGHTS[:n]}
        return data

    @model_validator(mode="after")
    def _check(self):
        if len(self.level_weights) != self.num_levels:
            raise ValueError(f"level_weights has {len(self.level_weights)} entries for num_levels={self.num_levels}")
        self.weights  # validates the weights
        return self

    @property
    def weights(self) -> LossWeights:
        return LossWeights(
            lambda_chamfer=self.lambda_chamfer,
            lambda_smooth=self.lambda_smooth,
            lambda_laplace=self.lambda_laplace,
            lambda_disp=self.lambda_disp,
            level_weights=self.level_weights,
        )


@dataclass
class Pyramid:
    """Levels ordered coarsest to finest; the last level is the input cloud."""

    levels: list[tuple[PointCloud, NNIndex]]

    def __len__(self):
        return len(self.levels)

    def sizes(self) -> list[int]:
        return [len(c) for c, _ in self.levels]


@dataclass
class SolveTrace:
    """Per-level iteration history.

    Each level entry holds ``level`` (0 = finest), ``n_points``,
    ``level_weight``, the per-iteration loss components and the final
    disparity contributing count.
    """

    levels: list[dict] = field(default_factory=list)
    total: Optional[float] = None
    level_flows: list[np.ndarray] = field(default_factory=list, repr=False)
    level_clouds: list[PointCloud] = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {"levels": self.levels, "total": self.total}


def build_pyramid(cloud: PointCloud, config: SolverConfig = SolverConfig()) -> Pyramid:
    """Seeded random subsampling by ``level_ratio`` per level, with an index per level."""
    if len(cloud) == 0:
        raise EmptyInputError("cannot build a pyramid from an empty cloud")
    levels = [cloud]
    for lvl in range(1, config.num_levels):
        finer = levels[-1]
        n = math.ceil(len(finer) / config.level_ratio)
        levels.append(random_sample(finer, n, seed=config.seed + 7919 * lvl))
    for lvl, c in enumerate(levels):
        if len(c) < config.k_neighbors + 1:
            raise ConfigError(
                f"pyramid level {lvl} (0 = finest) has {len(c)} points; "
                f"k_neighbors={config.k_neighbors} needs at least {config.k_neighbors + 1}"
            )
    levels.reverse()
    return Pyramid([(c, NNIndex(c)) for c in levels])


def upsample_flow(coarse_cloud: PointCloud, coarse_flow, fine_cloud: PointCloud, k: int = 3,
                  coarse_index: NNIndex | None = None) -> np.ndarray:
    """Inverse-distance-weighted average of the ``k`` nearest coarse flows at each fine point."""
    if len(coarse_cloud) == 0:
        raise EmptyInputError("cannot upsample from an empty coarse cloud")
    coarse_flow = np.asarray(coarse_flow, dtype=np.float64).reshape(len(coarse_cloud), 3)
    index = coarse_index or NNIndex(coarse_cloud)
    idx, sq = index.query(fine_cloud.points, k)
    return np.einsum("nk,nkc->nc", idw_weights(sq), coarse_flow[idx])


class _Level:
    """Loss evaluation for one pyramid level with correspondences frozen on demand."""

    def __init__(self, src, tgt, tgt_index, cfg: SolverConfig, depth, intr, use_dc):
        self.src = src.points
        self.tgt = tgt.points
        self.tgt_index = tgt_index
        self.cfg = cfg
        self.w = cfg.weights
        self.depth = depth
        self.intr = intr
        self.use_dc = use_dc
        k = cfg.k_neighbors
        self.src_nb = smoothness_neighbors(self.src, k)
        self.tgt_lap = laplacian_vectors(self.tgt, k, tgt_index)
        self.precond = _sobolev_solver(self.src_nb, cfg.smoothing) if cfg.smoothing > 0 else None

    def direction(self, grad):
        """Descent direction: the gradient smoothed over the source kNN graph."""
        return grad if self.precond is None else self.precond(grad)

    def freeze(self, flow):
        warped = self.src + flow
        k = self.cfg.k_neighbors
        windex = NNIndex(warped)
        self.cm = chamfer_match(warped, self.tgt, self.tgt_index, windex) if self.w.lambda_chamfer else None
        self.lm = (laplacian_match(warped, self.tgt, k, self.tgt_index, self.tgt_lap)
                   if self.w.lambda_laplace else None)
        self.dm = disparity_match(self.src, flow, self.depth, self.intr) if self.use_dc else None

    def evaluate(self, flow) -> LossReport:
        w = self.w
        warped = self.src + flow
        grad = np.zeros_like(flow)
        c = s = lap = dc = 0.0
        n_dc = 0
        if self.cm is not None:
            c, g = chamfer_loss(warped, self.tgt, match=self.cm, reduction=self.cfg.chamfer_reduction)
            grad += w.lambda_chamfer * g
        if w.lambda_smooth:
            s, g = smoothness_loss(self.src, flow, neighbors=self.src_nb)
            grad += w.lambda_smooth * g
        if self.lm is not None:
            lap, g = laplacian_loss(warped, self.tgt, match=self.lm)
            grad += w.lambda_laplace * g
        if self.dm is not None:
            dc, g, n_dc = disparity_consistency_loss(
                self.src, flow, self.depth, self.intr, match=self.dm, mode=self.cfg.disparity_mode
            )
            grad += w.lambda_disp * g
        total = w.combine(c, s, lap, dc if self.use_dc else 0.0)
        return LossReport(c, s, lap, dc, total, grad, n_dc)


def _sobolev_solver(neighbors: np.ndarray, beta: float):
    """Factorise ``I + beta * L`` for the symmetrised kNN graph Laplacian ``L``.

    Multiplying the gradient by its inverse is positive definite, so the
    result is still a descent direction, but flow corrections spread across
    the neighbourhood graph instead of staying local to each point.
    """
    n, k = neighbors.shape
    rows = np.repeat(np.arange(n), k)
    a = sp.csr_matrix((np.ones(n * k), (rows, neighbors.ravel())), shape=(n, n))
    w = ((a + a.T) > 0).astype(np.float64)
    lap = sp.diags(np.asarray(w.sum(axis=1)).ravel()) - w
    lu = splu((sp.identity(n, format="csc") + beta * lap).tocsc())
    return lu.solve


def _record(rep: LossReport, level_weight: float, step: float, window: int) -> dict:
    d = rep.as_dict()
    d["weighted_total"] = level_weight * rep.total
    d["step"] = step
    d["window"] = window
    return d


def solve(
    cloud_t: PointCloud,
    cloud_t1: PointCloud,
    target_depth: DepthMap | None = None,
    intr: CameraIntrinsics | None = None,
    config: SolverConfig = SolverConfig(),
):
    """Estimate the flow taking ``cloud_t`` onto ``cloud_t1``.

    Parameters
    ----------
    cloud_t, cloud_t1 : PointCloud
    target_depth : DepthMap, optional
        Frame t+1 depth for the disparity-consistency term; must be given
        together with ``intr``. Without it that term is disabled.
    intr : CameraIntrinsics, optional
    config : SolverConfig

    Returns
    -------
    flow : ndarray, shape (len(cloud_t), 3)
    trace : SolveTrace

    Raises
    ------
    NumericalFailure
        If a loss becomes non-finite; the exception carries the trace.
    """
    if len(cloud_t) == 0 or len(cloud_t1) == 0:
        raise EmptyInputError("both clouds must be non-empty")
    if (target_depth is None) != (intr is None):
        raise ConfigError("target_depth and intr must be given together")
    use_dc_any = target_depth is not None and config.lambda_disp > 0

    pyr_t = build_pyramid(cloud_t, config)
    pyr_t1 = build_pyramid(cloud_t1, config)
    n_levels = len(pyr_t)
    trace = SolveTrace()
    reports: list[LossReport] = []

    flow = np.zeros((len(pyr_t.levels[0][0]), 3))
    prev = None
    for li in range(n_levels):
        src, src_index = pyr_t.levels[li]
        tgt, tgt_index = pyr_t1.levels[li]
        level = n_levels - 1 - li  # 0 = finest
        lw = config.level_weights[level]
        if prev is not None:
            flow = upsample_flow(prev[0], flow, src, config.upsample_k, prev[1])
        prev = (src, src_index)
        use_dc = use_dc_any and (config.disparity_levels == "all" or level == 0)

        lvl = _Level(src, tgt, tgt_index, config, target_depth, intr, use_dc)
        history: list[dict] = []
        entry = {"level": level, "n_points": len(src), "level_weight": lw, "iterations": history}
        trace.levels.append(entry)

        step = config.step
        window = 0
        since_refresh = 0
        lvl.freeze(flow)
        rep = lvl.evaluate(flow)
        for it in range(config.iterations):
            if since_refresh >= config.nn_refresh_interval:
                lvl.freeze(flow)
                rep = lvl.evaluate(flow)
                window += 1
                since_refresh = 0
            if not np.isfinite(rep.total) or not np.isfinite(rep.gradient).all():
                entry["disparity_count"] = rep.disparity_count
                raise NumericalFailure(f"non-finite loss at level {level}, iteration {it}", trace)
            history.append(_record(rep, lw, step, window))
            if rep.total == 0 or not rep.gradient.any():
                if since_refresh == 0:
                    break
                since_refresh = config.nn_refresh_interval
                continue

            accepted = None
            direction = lvl.direction(rep.gradient)
            s = step
            for _ in range(config.max_backtracks + 1):
                cand = flow - s * direction
                cand_rep = lvl.evaluate(cand)
                if np.isfinite(cand_rep.total) and cand_rep.total <= rep.total:
                    accepted = cand, cand_rep
                    break
                s *= config.decay
            first_in_window = since_refresh == 0
            since_refresh += 1
            if accepted is None:
                if first_in_window:
                    break
                since_refresh = config.nn_refresh_interval
                continue
            step = min(s / config.decay, config.step) if s == step else s
            gain = rep.total - accepted[1].total
            flow, rep = accepted
            if gain <= config.tolerance * max(abs(history[-1]["total"]), 1e-300):
                if first_in_window:
                    break
                since_refresh = config.nn_refresh_interval
        entry["disparity_count"] = rep.disparity_count
        entry["final"] = _record(rep, lw, step, window)
        trace.level_flows.append(flow)
        trace.level_clouds.append(src)
        reports.append(rep)
        log.debug("level %d: %d points, %d iterations, loss %.6g", level, len(src), len(history), rep.total)

    reports.reverse()  # finest first, matching level_weights
    trace.total = total_loss(reports, config.weights)
    return flow, trace
