"""Point clouds, exact nearest-neighbour search and cloud refinement.

Refinement follows the two stages used before flow estimation: cropping the
cloud to a bounding box (long depth tails accumulate at the scene edges) and
statistical outlier removal on mean neighbour distances.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.spatial import cKDTree

from .errors import EmptyInputError, InsufficientPointsError, MalformedInputError, ShapeError

__all__ = [
    "PointCloud",
    "NNIndex",
    "CropBox",
    "OutlierParams",
    "build_index",
    "knn",
    "crop_edges",
    "remove_outliers",
    "random_sample",
    "num_threads",
]


# squared distances between points within this range stay finite
MAX_COORD = 1e150


def num_threads() -> int:
    """Worker count for neighbour queries, capped by ``PSEUDOFLOW_THREADS`` (default 1)."""
    raw = os.environ.get("PSEUDOFLOW_THREADS")
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered camera-frame points (metres), optionally tagged with source pixels.

    Parameters
    ----------
    points : array_like, shape (N, 3)
    source_pixels : array_like, shape (N, 2), optional
        ``(u, v)`` pixel each point was back-projected from.
    """

    points: np.ndarray
    source_pixels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ShapeError(f"points must have shape (N, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise MalformedInputError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.source_pixels is not None:
            pix = np.asarray(self.source_pixels, dtype=np.float64).reshape(-1, 2)
            if len(pix) != len(pts):
                raise ShapeError(f"{len(pix)} source pixels for {len(pts)} points")
            object.__setattr__(self, "source_pixels", pix)

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        if not np.array_equal(self.points, other.points):
            return False
        if (self.source_pixels is None) != (other.source_pixels is None):
            return False
        return self.source_pixels is None or np.array_equal(self.source_pixels, other.source_pixels)

    __hash__ = None

    def select(self, which) -> "PointCloud":
        """Subset by boolean mask or index array, keeping source pixels aligned."""
        pix = None if self.source_pixels is None else self.source_pixels[which]
        return PointCloud(self.points[which], pix)

    def with_points(self, points) -> "PointCloud":
        return PointCloud(points, self.source_pixels)


class NNIndex:
    """Exact k-d tree index over a point cloud.

    Results are ordered by squared distance, ties broken by lower point index.
    Squared distances are recomputed from the coordinates so they agree with
    a brute-force scan to the last bit.
    """

    def __init__(self, cloud):
        pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
        if len(pts) == 0:
            raise EmptyInputError("cannot index an empty cloud")
        if np.abs(pts).max() > MAX_COORD:
            raise MalformedInputError(f"coordinates beyond {MAX_COORD:g} overflow squared distances")
        self.points = pts
        self._tree = cKDTree(pts)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, queries, k: int, exclude=None):
        """k nearest neighbours for a batch of query points.

        Parameters
        ----------
        queries : array_like, shape (Q, 3)
        k : int
            Clamped to the number of available points.
        exclude : array_like of int, shape (Q,), optional
            Index to drop from each row's result (the query's own point).

        Returns
        -------
        idx : ndarray of intp, shape (Q, k')
        sqdist : ndarray, shape (Q, k')
        """
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        if k < 1:
            raise ValueError("k must be >= 1")
        avail = n - (1 if exclude is not None else 0)
        k = min(k, avail)
        if len(q) == 0 or k <= 0:
            return np.zeros((len(q), max(k, 0)), np.intp), np.zeros((len(q), max(k, 0)))
        want = k + (1 if exclude is not None else 0)

        out_idx = np.empty((len(q), k), np.intp)
        out_sq = np.empty((len(q), k))
        rows = np.arange(len(q))
        kk = min(n, want + 4)
        while len(rows):
            d, i = self._tree.query(q[rows], k=kk, workers=num_threads())
            d = d.reshape(len(rows), kk)
            i = i.reshape(len(rows), kk)
            # a row is complete when the farthest fetched hit is strictly beyond
            # the want-th distance, i.e. no tie can straddle the cut
            done = (kk >= n) | (d[:, -1] > d[:, want - 1] * (1 + 1e-9) + 1e-300)
            if done.any():
                r = rows[done]
                cand = i[done]
                sq = ((self.points[cand] - q[r][:, None, :]) ** 2).sum(axis=2)
                rowid = np.repeat(np.arange(len(r)), kk)
                order = np.lexsort((cand.ravel(), sq.ravel(), rowid)).reshape(len(r), kk) % kk
                cand = np.take_along_axis(cand, order, axis=1)
                sq = np.take_along_axis(sq, order, axis=1)
                if exclude is not None:
                    hit = cand == np.asarray(exclude)[r][:, None]
                    first = np.where(hit.any(axis=1), hit.argmax(axis=1), kk - 1)
                    drop = np.zeros_like(hit)
                    drop[np.arange(len(r)), first] = True
                    order = np.argsort(drop, axis=1, kind="stable")
                    cand = np.take_along_axis(cand, order, axis=1)
                    sq = np.take_along_axis(sq, order, axis=1)
                out_idx[r] = cand[:, :k]
                out_sq[r] = sq[:, :k]
            rows = rows[~done]
            kk = min(n, kk * 2)
        return out_idx, out_sq

    def radius(self, query, r: float) -> np.ndarray:
        """Indices within distance ``r`` of ``query``, sorted by distance then index."""
        q = np.asarray(query, dtype=np.float64).reshape(3)
        cand = np.asarray(self._tree.query_ball_point(q, r), dtype=np.intp)
        sq = ((self.points[cand] - q) ** 2).sum(axis=1)
        return cand[np.lexsort((cand, sq))]


def build_index(cloud) -> NNIndex:
    return NNIndex(cloud)


def knn(index: NNIndex, query, k: int) -> list[tuple[int, float]]:
    """``min(k, N)`` nearest hits of a single query as ``(index, squared distance)`` pairs."""
    idx, sq = index.query(np.asarray(query, dtype=np.float64).reshape(1, 3), k)
    return [(int(i), float(s)) for i, s in zip(idx[0], sq[0])]


class CropBox(BaseModel):
    """Axis-aligned crop bounds in metres; ``None`` leaves a side unbounded."""

    model_config = ConfigDict(extra="forbid", frozen=True, strict=True)

    x_min: Optional[float] = None
    x_max: Optional[float] = None
    y_min: Optional[float] = None
    y_max: Optional[float] = None
    z_min: Optional[float] = None
    z_max: Optional[float] = None

    @model_validator(mode="after")
    def _ordered(self):
        for axis in "xyz":
            lo, hi = getattr(self, f"{axis}_min"), getattr(self, f"{axis}_max")
            if lo is not None and hi is not None and lo > hi:
                raise ValueError(f"{axis}_min > {axis}_max")
        return self

    @classmethod
    def driving(cls) -> "CropBox":
        """Default box for driving scenes (x right, y down, z forward)."""
        return cls(x_min=-30.0, x_max=30.0, y_min=-3.0, y_max=3.0, z_min=0.0, z_max=60.0)

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        inside = np.ones(len(pts), bool)
        for col, axis in enumerate("xyz"):
            lo, hi = getattr(self, f"{axis}_min"), getattr(self, f"{axis}_max")
            if lo is not None:
                inside &= pts[:, col] >= lo
            if hi is not None:
                inside &= pts[:, col] <= hi
        return inside


class OutlierParams(BaseModel):
    """Statistical outlier removal settings.

    ``m`` neighbours per point and scale factor ``alpha``. The defaults
    (8, 2.0) are the best setting of the published ablation grid.
    ``scope`` picks where the mean/deviation statistics are gathered; see
    :func:`remove_outliers`.
    """

    model_config = ConfigDict(extra="forbid", frozen=True, strict=True)

    m: int = Field(default=8, ge=1)
    alpha: float = Field(default=2.0, gt=0, allow_inf_nan=False)
    scope: Literal["global", "local", "per_point"] = "global"


def crop_edges(cloud: PointCloud, box: CropBox):
    """Keep the points inside ``box`` (closed bounds). Returns ``(cloud, kept_mask)``."""
    keep = box.contains(cloud.points)
    return cloud.select(keep), keep


def mean_neighbor_distance(cloud: PointCloud, m: int, index: NNIndex | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Mean Euclidean distance of every point to its ``m`` nearest other points."""
    index = index or NNIndex(cloud)
    idx, sq = index.query(cloud.points, m, exclude=np.arange(len(cloud)))
    return np.sqrt(sq).mean(axis=1), idx


def remove_outliers(cloud: PointCloud, params: OutlierParams = OutlierParams()):
    """Statistical outlier removal.

    Each point gets ``vbar``, its mean distance to the ``m`` nearest other
    points. The threshold is ``d_max = mean + alpha * std`` with the sample
    (n - 1) standard deviation, and a point is dropped iff ``vbar > d_max``.

    With ``scope="global"`` mean and std are taken over every point's
    ``vbar`` and ``d_max`` is a scalar. With ``scope="local"`` they are taken
    over the ``vbar`` values of each point's own ``m`` neighbours (``m - 1``
    normalisation), giving one threshold per point. With ``scope="per_point"``
    the threshold is ``vbar + alpha * std`` of the point's own ``m``
    neighbour distances; since that is never below ``vbar`` this reading
    removes nothing, and it is kept only for comparison.

    Returns
    -------
    cloud : PointCloud
        Surviving points, order preserved.
    kept : ndarray of bool
    d_max : float or ndarray
    """
    m = params.m
    if len(cloud) < m + 1:
        raise InsufficientPointsError(f"outlier removal with m={m} needs at least {m + 1} points, got {len(cloud)}")
    index = NNIndex(cloud)
    vbar, idx = mean_neighbor_distance(cloud, m, index)
    if params.scope == "global":
        d_max = float(vbar.mean() + params.alpha * vbar.std(ddof=1))
    elif params.scope == "per_point":
        _, sq = index.query(cloud.points, m, exclude=np.arange(len(cloud)))
        spread = np.sqrt(sq).std(axis=1, ddof=1) if m > 1 else np.zeros(len(cloud))
        d_max = vbar + params.alpha * spread
    else:
        nb = vbar[idx]
        spread = nb.std(axis=1, ddof=1) if m > 1 else np.zeros(len(nb))
        d_max = nb.mean(axis=1) + params.alpha * spread
    keep = ~(vbar > d_max)
    return cloud.select(keep), keep, d_max


def random_sample(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    """Uniform sample of ``n`` points without replacement, original order kept."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(cloud) <= n:
        return cloud
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(cloud), size=n, replace=False))
    return cloud.select(idx)
