"""Self-supervised scene-flow losses and their gradients.

All four losses return the scalar value together with its gradient with
respect to the flow field (equivalently the warped points, since
``warped = source + flow``). Losses that depend on discrete choices
(nearest neighbours, interpolation weights, bilinear cells) can be evaluated
against a *frozen* set of those choices, computed once by the matching
``*_match`` function. With a frozen match each loss is a smooth function of
the flow and the returned gradient is its exact derivative; without one the
match is computed from the current positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .camera import CameraIntrinsics, DepthMap, bilinear_cells
from .cloud import NNIndex, PointCloud
from .errors import EmptyInputError, MalformedInputError, ShapeError

__all__ = [
    "LossWeights",
    "LossReport",
    "warp",
    "chamfer_match",
    "chamfer_loss",
    "smoothness_neighbors",
    "smoothness_loss",
    "laplacian_vector",
    "laplacian_vectors",
    "laplacian_match",
    "laplacian_loss",
    "disparity_match",
    "disparity_consistency_loss",
    "total_loss",
    "smooth_l1_depth_error",
    "idw_weights",
]

IDW_EPS = 1e-8


class LossWeights(BaseModel):
    """Loss weights; ``level_weights`` are listed finest level first."""

    model_config = ConfigDict(extra="forbid", frozen=True, strict=True)

    lambda_chamfer: float = Field(default=1.0, ge=0, allow_inf_nan=False)
    lambda_smooth: float = Field(default=0.2, ge=0, allow_inf_nan=False)
    lambda_laplace: float = Field(default=0.2, ge=0, allow_inf_nan=False)
    lambda_disp: float = Field(default=1.0, ge=0, allow_inf_nan=False)
    level_weights: tuple[float, ...] = (0.02, 0.04, 0.08, 0.16)

    @field_validator("level_weights", mode="before")
    @classmethod
    def _as_tuple(cls, v):
        return tuple(v) if isinstance(v, list) else v

    @field_validator("level_weights")
    @classmethod
    def _nonnegative(cls, v):
        if any(not np.isfinite(w) or w < 0 for w in v):
            raise ValueError("level weights must be finite and >= 0")
        return v

    def combine(self, chamfer, smoothness, laplacian, disparity):
        return (
            self.lambda_chamfer * chamfer
            + self.lambda_smooth * smoothness
            + self.lambda_laplace * laplacian
            + self.lambda_disp * disparity
        )


@dataclass
class LossReport:
    """Per-level loss components; ``total`` is their lambda-weighted sum."""

    chamfer: float
    smoothness: float
    laplacian: float
    disparity_consistency: float
    total: float
    gradient: Optional[np.ndarray] = None
    disparity_count: int = 0

    def as_dict(self) -> dict:
        return {
            "chamfer": self.chamfer,
            "smoothness": self.smoothness,
            "laplacian": self.laplacian,
            "disparity_consistency": self.disparity_consistency,
            "total": self.total,
            "disparity_count": self.disparity_count,
        }


def _pts(x) -> np.ndarray:
    return x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64).reshape(-1, 3)


def _scatter_add(n: int, idx: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Sum rows of ``vals`` (M, 3) into ``n`` buckets given by ``idx`` (M,)."""
    idx = idx.ravel()
    vals = vals.reshape(-1, 3)
    return np.column_stack([np.bincount(idx, weights=vals[:, c], minlength=n) for c in range(3)])


def _check_flow(points: np.ndarray, flow) -> np.ndarray:
    flow = np.asarray(flow, dtype=np.float64)
    if flow.shape != points.shape:
        raise ShapeError(f"flow shape {flow.shape} does not match cloud shape {points.shape}")
    return flow


def warp(cloud: PointCloud, flow) -> PointCloud:
    """Move every point by its flow vector; source pixels are carried along."""
    flow = _check_flow(cloud.points, flow)
    if not np.isfinite(flow).all():
        raise MalformedInputError("flow vectors must be finite")
    return cloud.with_points(cloud.points + flow)


# ---------------------------------------------------------------- Chamfer


@dataclass(frozen=True)
class ChamferMatch:
    forward: np.ndarray  # nearest target index per warped point
    backward: np.ndarray  # nearest warped index per target point


def chamfer_match(warped, target, target_index: NNIndex | None = None, warped_index: NNIndex | None = None) -> ChamferMatch:
    w, t = _pts(warped), _pts(target)
    if len(w) == 0 or len(t) == 0:
        raise EmptyInputError("Chamfer distance needs two non-empty clouds")
    target_index = target_index or NNIndex(t)
    warped_index = warped_index or NNIndex(w)
    fwd, _ = target_index.query(w, 1)
    bwd, _ = warped_index.query(t, 1)
    return ChamferMatch(fwd[:, 0], bwd[:, 0])


def chamfer_loss(
    warped,
    target,
    target_index: NNIndex | None = None,
    warped_index: NNIndex | None = None,
    match: ChamferMatch | None = None,
    reduction: Literal["sum", "mean"] = "sum",
):
    """Two-sided Chamfer distance between the warped and the target cloud.

    ``sum_w min_t |w - t|^2 + sum_t min_w |w - t|^2``; with
    ``reduction="mean"`` each side is averaged over its points instead.

    Returns
    -------
    value : float
    grad : ndarray, shape (N, 3)
        Derivative with respect to the warped points.
    """
    w, t = _pts(warped), _pts(target)
    if match is None:
        match = chamfer_match(w, t, target_index, warped_index)
    d_fwd = w - t[match.forward]
    d_bwd = w[match.backward] - t
    sf, sb = (1.0, 1.0) if reduction == "sum" else (1.0 / len(w), 1.0 / len(t))
    value = sf * float((d_fwd**2).sum()) + sb * float((d_bwd**2).sum())
    grad = 2 * sf * d_fwd + _scatter_add(len(w), match.backward, 2 * sb * d_bwd)
    return value, grad


# ------------------------------------------------------------- smoothness


def smoothness_neighbors(source, k: int = 8, index: NNIndex | None = None) -> np.ndarray:
    """``(N, k)`` indices of each source point's k nearest other points."""
    pts = _pts(source)
    index = index or NNIndex(pts)
    idx, _ = index.query(pts, k, exclude=np.arange(len(pts)))
    return idx


def smoothness_loss(source, flow, k: int = 8, index: NNIndex | None = None, neighbors: np.ndarray | None = None):
    """Local flow smoothness ``sum_i mean_{j in R(i)} |f_i - f_j|^2``.

    Neighbourhoods come from the source positions, so they do not depend on
    the flow and the gradient is exact.
    """
    pts = _pts(source)
    flow = _check_flow(pts, flow)
    if neighbors is None:
        if len(pts) <= k:
            raise ShapeError(f"smoothness with k={k} needs more than {k} points, got {len(pts)}")
        neighbors = smoothness_neighbors(pts, k, index)
    kk = neighbors.shape[1]
    diff = flow[:, None, :] - flow[neighbors]
    value = float((diff**2).sum()) / kk
    grad = (2.0 / kk) * diff.sum(axis=1) - _scatter_add(len(pts), neighbors, (2.0 / kk) * diff)
    return value, grad


# -------------------------------------------------------------- Laplacian


def laplacian_vectors(cloud, k: int = 8, index: NNIndex | None = None, neighbors: np.ndarray | None = None) -> np.ndarray:
    """Laplacian coordinates ``p_i - centroid(kNN(p_i))`` of every point, shape (N, 3)."""
    pts = _pts(cloud)
    if neighbors is None:
        neighbors = smoothness_neighbors(pts, k, index)
    return pts - pts[neighbors].mean(axis=1)


def laplacian_vector(cloud, i: int, k: int = 8, index: NNIndex | None = None) -> np.ndarray:
    """Laplacian coordinate of point ``i``: the point minus its neighbours' centroid."""
    pts = _pts(cloud)
    index = index or NNIndex(pts)
    idx, _ = index.query(pts[i : i + 1], k, exclude=np.array([i]))
    return pts[i] - pts[idx[0]].mean(axis=0)


def idw_weights(sqdist: np.ndarray, eps: float = IDW_EPS) -> np.ndarray:
    """Row-normalised inverse-distance weights ``1 / (d + eps)``.

    A row containing an exact zero distance puts all its weight on the
    coincident point(s).
    """
    d = np.sqrt(sqdist)
    w = 1.0 / (d + eps)
    zero = d == 0
    w = np.where(zero.any(axis=1, keepdims=True), zero.astype(np.float64), w)
    return w / w.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class LaplacianMatch:
    warped_neighbors: np.ndarray  # (N, k) neighbours inside the warped cloud
    target_laplacian: np.ndarray  # (N, 3) IDW-interpolated target Laplacian at each warped point


def laplacian_match(
    warped,
    target,
    k: int = 8,
    target_index: NNIndex | None = None,
    target_laplacian: np.ndarray | None = None,
) -> LaplacianMatch:
    """Freeze warped-cloud neighbourhoods and the interpolated target Laplacian."""
    w, t = _pts(warped), _pts(target)
    if len(w) == 0 or len(t) == 0:
        raise EmptyInputError("Laplacian loss needs two non-empty clouds")
    target_index = target_index or NNIndex(t)
    if target_laplacian is None:
        target_laplacian = laplacian_vectors(t, k, target_index)
    wnb = smoothness_neighbors(w, k)
    idx, sq = target_index.query(w, k)
    weights = idw_weights(sq)
    obar = np.einsum("nk,nkc->nc", weights, target_laplacian[idx])
    return LaplacianMatch(wnb, obar)


def laplacian_loss(
    warped,
    target,
    k: int = 8,
    target_index: NNIndex | None = None,
    match: LaplacianMatch | None = None,
    per_point: bool = False,
):
    """Laplacian regularisation ``sum_w |o(w) - obar(w)|`` (unsquared Euclidean norm).

    ``o(w)`` is the Laplacian coordinate inside the warped cloud, ``obar(w)``
    the target cloud's Laplacian coordinates interpolated at ``w`` with
    inverse-distance weights over the k nearest target points.

    Returns ``(value, grad)``, or ``(value, grad, terms)`` with the per-point
    norms when ``per_point`` is set.
    """
    w = _pts(warped)
    if match is None:
        t = _pts(target)
        if len(w) <= k or len(t) <= k:
            raise ShapeError(f"Laplacian loss with k={k} needs more than {k} points per cloud")
        match = laplacian_match(w, t, k, target_index)
    nb = match.warped_neighbors
    kk = nb.shape[1]
    resid = w - w[nb].mean(axis=1) - match.target_laplacian
    norms = np.sqrt((resid**2).sum(axis=1))
    value = float(norms.sum())
    g = np.divide(resid, norms[:, None], out=np.zeros_like(resid), where=norms[:, None] > 0)
    grad = g - _scatter_add(len(w), nb, np.repeat(g / kk, kk, axis=0))
    if per_point:
        return value, grad, norms
    return value, grad


# -------------------------------------------------- disparity consistency


@dataclass(frozen=True)
class DisparityMatch:
    x0: np.ndarray
    y0: np.ndarray
    x1: np.ndarray
    y1: np.ndarray
    ok: np.ndarray  # points contributing to the mean


def disparity_match(source, flow, target_depth: DepthMap, intr: CameraIntrinsics) -> DisparityMatch:
    """Freeze the bilinear cell each warped point projects into."""
    w = _pts(source) + _check_flow(_pts(source), flow)
    z = w[:, 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    u = w[:, 0] * intr.fx / zs + intr.cx
    v = w[:, 1] * intr.fy / zs + intr.cy
    x0, y0, x1, y1, _, _, ok = bilinear_cells(target_depth, u, v)
    return DisparityMatch(x0, y0, x1, y1, ok & front)


def disparity_consistency_loss(
    source,
    flow,
    target_depth: DepthMap,
    intr: CameraIntrinsics,
    match: DisparityMatch | None = None,
    mode: Literal["warped", "literal"] = "warped",
):
    """Mean absolute gap between target depth and warped depth.

    Each warped point is projected into the target depth map and sampled
    bilinearly. The residual is ``sampled - z_warped`` (``mode="warped"``) or
    ``sampled - z_source`` (``mode="literal"``). Points projecting outside
    the image or onto invalid pixels are left out of the mean.

    Returns
    -------
    value : float
        0.0 when no point contributes.
    grad : ndarray, shape (N, 3)
    count : int
        Number of contributing points.
    """
    src = _pts(source)
    flow = _check_flow(src, flow)
    if match is None:
        match = disparity_match(src, flow, target_depth, intr)
    ok = match.ok
    n = int(ok.sum())
    grad = np.zeros_like(src)
    if n == 0:
        return 0.0, grad, 0

    w = (src + flow)[ok]
    x0, y0, x1, y1 = match.x0[ok], match.y0[ok], match.x1[ok], match.y1[ok]
    g = target_depth.values
    g00, g01, g10, g11 = g[y0, x0], g[y0, x1], g[y1, x0], g[y1, x1]

    x, y, z = w[:, 0], w[:, 1], w[:, 2]
    u = x * intr.fx / z + intr.cx
    v = y * intr.fy / z + intr.cy
    au = u - x0
    av = v - y0
    sampled = (1 - av) * ((1 - au) * g00 + au * g01) + av * ((1 - au) * g10 + au * g11)
    ref = z if mode == "warped" else src[ok, 2]
    r = sampled - ref
    value = float(np.abs(r).sum()) / n

    ds_du = (1 - av) * (g01 - g00) + av * (g11 - g10)
    ds_dv = (1 - au) * (g10 - g00) + au * (g11 - g01)
    dsdw = np.column_stack(
        [
            ds_du * intr.fx / z,
            ds_dv * intr.fy / z,
            -(ds_du * intr.fx * x + ds_dv * intr.fy * y) / z**2,
        ]
    )
    if mode == "warped":
        dsdw[:, 2] -= 1.0
    # a residual at rounding level sits at the kink of |r|; take the zero subgradient
    sign = np.where(np.abs(r) > 1e-12 * np.abs(ref), np.sign(r), 0.0)
    grad[ok] = (sign / n)[:, None] * dsdw
    return value, grad, n


# ------------------------------------------------------------ aggregates


def total_loss(per_level_reports: Sequence[LossReport], weights: LossWeights) -> float:
    """Level-weighted total; reports are ordered like ``weights.level_weights`` (finest first)."""
    if len(per_level_reports) != len(weights.level_weights):
        raise ShapeError(f"{len(per_level_reports)} level reports for {len(weights.level_weights)} level weights")
    return float(
        sum(
            lw * weights.combine(r.chamfer, r.smoothness, r.laplacian, r.disparity_consistency)
            for lw, r in zip(weights.level_weights, per_level_reports)
        )
    )


def smooth_l1_depth_error(pred: DepthMap, sparse_gt) -> tuple[float, int]:
    """Smooth-L1 depth error against sparse ground truth.

    Parameters
    ----------
    pred : DepthMap
    sparse_gt : array_like, shape (K, 3)
        Rows of integer pixel ``(u, v)`` and ground-truth depth.

    Returns
    -------
    value : float
        ``sum tau(gt - pred)`` with ``tau(e) = 0.5 e^2`` for ``|e| < 1`` and
        ``|e| - 0.5`` otherwise.
    skipped : int
        Samples dropped because the predicted pixel is invalid.
    """
    gt = np.asarray(sparse_gt, dtype=np.float64).reshape(-1, 3)
    u = gt[:, 0].astype(np.intp)
    v = gt[:, 1].astype(np.intp)
    if ((u < 0) | (u >= pred.width) | (v < 0) | (v >= pred.height)).any():
        raise MalformedInputError("ground-truth sample outside the image")
    ok = pred.valid[v, u]
    e = np.abs(gt[ok, 2] - pred.values[v[ok], u[ok]])
    tau = np.where(e < 1.0, 0.5 * e**2, e - 0.5)
    return float(tau.sum()), int((~ok).sum())
