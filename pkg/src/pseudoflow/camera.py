"""Pinhole camera model.

Back-projection of depth maps to pseudo-LiDAR clouds, stereo disparity to
depth conversion, forward projection and bilinear sampling of depth maps.

Pixel coordinates are zero-based indices addressing pixel centres: pixel
``(u, v)`` is column ``u``, row ``v`` and the pinhole model is applied to
these indices directly, with no half-pixel offset.

    x = d * (u - cx) / fx
    y = d * (v - cy) / fy
    z = d
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .cloud import PointCloud
from .errors import BehindCameraError, ConfigError, MalformedInputError, ShapeError

__all__ = [
    "CameraIntrinsics",
    "DepthMap",
    "DisparityMap",
    "backproject_depth_map",
    "disparity_to_depth",
    "project_points",
    "bilinear_sample",
    "bilinear_sample_many",
    "bilinear_cells",
]

# valid depth range used when converting disparities (metres)
DEFAULT_MIN_DEPTH = 0.1
DEFAULT_MAX_DEPTH = 90.0


class CameraIntrinsics(BaseModel):
    """Pinhole intrinsics plus optional stereo baseline (metres)."""

    model_config = ConfigDict(extra="forbid", frozen=True, strict=True)

    fx: float = Field(gt=0, allow_inf_nan=False)
    fy: float = Field(gt=0, allow_inf_nan=False)
    cx: float = Field(allow_inf_nan=False)
    cy: float = Field(allow_inf_nan=False)
    baseline: Optional[float] = Field(default=None, gt=0, allow_inf_nan=False)
    width: Optional[int] = Field(default=None, ge=1)
    height: Optional[int] = Field(default=None, ge=1)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class _Grid:
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 2:
            raise ShapeError(f"expected a 2-D grid, got shape {values.shape}")
        if valid.shape != values.shape:
            raise ShapeError(f"mask shape {valid.shape} != grid shape {values.shape}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_array(cls, values, valid=None):
        """Wrap a grid; by default every finite, strictly positive pixel is valid."""
        values = np.asarray(values, dtype=np.float64)
        if valid is None:
            with np.errstate(invalid="ignore"):
                valid = np.isfinite(values) & (values > 0)
        return cls(values, valid)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def masked(self) -> np.ndarray:
        """Values with invalid pixels replaced by NaN."""
        return np.where(self.valid, self.values, np.nan)

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return np.array_equal(self.valid, other.valid) and np.array_equal(
            self.masked(), other.masked(), equal_nan=True
        )

    __hash__ = None


class DepthMap(_Grid):
    """Dense H x W depth grid (metres) with a validity mask."""


class DisparityMap(_Grid):
    """Dense H x W disparity grid (pixels) with a validity mask."""


def backproject_depth_map(depth: DepthMap, intr: CameraIntrinsics, stride: int = 1) -> PointCloud:
    """Back-project every valid pixel on the stride grid into a 3-D camera-frame point.

    Points are emitted in row-major pixel order and remember their source pixel.
    """
    if int(stride) != stride or stride < 1:
        raise ConfigError(f"stride must be a positive integer, got {stride!r}")
    stride = int(stride)
    vv, uu = np.mgrid[0 : depth.height : stride, 0 : depth.width : stride]
    keep = depth.valid[vv, uu]
    u = uu[keep].astype(np.float64)
    v = vv[keep].astype(np.float64)
    d = depth.values[vv, uu][keep]
    bad = ~(np.isfinite(d) & (d > 0))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise MalformedInputError(
            f"valid-flagged pixel (u={int(u[i])}, v={int(v[i])}) has depth {d[i]!r}"
        )
    x = d * (u - intr.cx) / intr.fx
    y = d * (v - intr.cy) / intr.fy
    return PointCloud(np.column_stack([x, y, d]), np.column_stack([u, v]))


def disparity_to_depth(
    disp: DisparityMap,
    intr: CameraIntrinsics,
    min_depth: float = DEFAULT_MIN_DEPTH,
    max_depth: float = DEFAULT_MAX_DEPTH,
) -> DepthMap:
    """Convert disparity to depth with ``d = baseline * fx / z``.

    Pixels whose disparity is non-positive, or whose depth falls outside
    ``[min_depth, max_depth]``, are marked invalid. The max-range cap is the
    same thing as a minimum disparity of ``baseline * fx / max_depth``.
    """
    if intr.baseline is None:
        raise ConfigError("disparity conversion needs intrinsics with a baseline")
    bf = intr.baseline * intr.fx
    z = disp.values
    with np.errstate(invalid="ignore"):
        ok = disp.valid & np.isfinite(z) & (z > 0)
    safe = np.where(ok, z, 1.0)
    d = bf / safe
    ok &= (d >= min_depth) & (d <= max_depth)
    return DepthMap(np.where(ok, d, np.nan), ok)


def project_points(cloud, intr: CameraIntrinsics) -> np.ndarray:
    """Project camera-frame points to pixels.

    Parameters
    ----------
    cloud : PointCloud or array_like, shape (N, 3)
    intr : CameraIntrinsics

    Returns
    -------
    ndarray, shape (N, 3)
        Columns ``u``, ``v`` (fractional pixels) and depth ``z``.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    pts = pts.reshape(-1, 3)
    z = pts[:, 2]
    bad = ~(z > 0)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise BehindCameraError(i, float(z[i]))
    u = pts[:, 0] * intr.fx / z + intr.cx
    v = pts[:, 1] * intr.fy / z + intr.cy
    return np.column_stack([u, v, z])


def bilinear_cells(grid: _Grid, u, v):
    """Locate the bilinear cell of each sample.

    Returns ``(x0, y0, x1, y1, au, av, ok)`` where ``au``/``av`` are the
    fractional offsets inside the cell and ``ok`` is False for samples outside
    ``[0, W-1] x [0, H-1]`` or touching an invalid corner.
    """
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    h, w = grid.values.shape
    inside = np.isfinite(u) & np.isfinite(v) & (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    uc = np.where(inside, u, 0.0)
    vc = np.where(inside, v, 0.0)
    x0 = np.clip(np.floor(uc).astype(np.intp), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(vc).astype(np.intp), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    au = uc - x0
    av = vc - y0
    m = grid.valid
    ok = inside & m[y0, x0] & m[y0, x1] & m[y1, x0] & m[y1, x1]
    return x0, y0, x1, y1, au, av, ok


def bilinear_sample_many(grid: _Grid, u, v) -> np.ndarray:
    """Vectorised bilinear sampling; absent samples come back as NaN."""
    x0, y0, x1, y1, au, av, ok = bilinear_cells(grid, u, v)
    g = grid.values
    top = (1 - au) * g[y0, x0] + au * g[y0, x1]
    bot = (1 - au) * g[y1, x0] + au * g[y1, x1]
    out = (1 - av) * top + av * bot
    return np.where(ok, out, np.nan)


def bilinear_sample(grid: _Grid, u: float, v: float) -> Optional[float]:
    """Bilinearly interpolate ``grid`` at ``(u, v)``; None when the sample is absent."""
    val = bilinear_sample_many(grid, u, v)[0]
    return None if np.isnan(val) else float(val)
