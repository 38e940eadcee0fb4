"""Synthetic rigid scenes with exact ground-truth scene flow.

Planes, boxes and spheres are ray cast with z-buffering into a depth map for
each frame. Every primitive carries its own rigid motion, a rotation about
its centre followed by a translation, and an ego-motion is then applied to
the whole scene. The flow of a frame-t point is where that rigid motion
sends it, minus the point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.spatial.transform import Rotation

from .camera import CameraIntrinsics, DepthMap, backproject_depth_map
from .cloud import PointCloud
from .errors import ConfigError

__all__ = ["Primitive", "SceneSpec", "SyntheticFrame", "generate", "plant_outliers", "desk_scene"]

Vec3 = tuple[float, float, float]


def _vec3(v):
    return tuple(v) if isinstance(v, list) else v


class Primitive(BaseModel):
    """A scene primitive.

    ``plane``: the local y = 0 plane limited to ``|x| <= size[0]/2`` and
    ``|z| <= size[2]/2``. ``box``: local axis-aligned box of extent ``size``.
    ``sphere``: ball of ``radius``. ``rotation`` (rotation vector, radians)
    orients the local frame; ``motion_rotation`` and ``motion_translation``
    give the per-object rigid motion between the two frames.
    """

    model_config = ConfigDict(extra="forbid", frozen=True, strict=True)

    kind: Literal["plane", "box", "sphere"]
    center: Vec3
    size: Vec3 = (1.0, 1.0, 1.0)
    radius: float = Field(default=0.5, gt=0)
    rotation: Vec3 = (0.0, 0.0, 0.0)
    motion_rotation: Vec3 = (0.0, 0.0, 0.0)
    motion_translation: Vec3 = (0.0, 0.0, 0.0)

    @field_validator("center", "size", "rotation", "motion_rotation", "motion_translation", mode="before")
    @classmethod
    def _tuples(cls, v):
        return _vec3(v)


def _default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=63.5, cy=47.5, baseline=0.5, width=128, height=96)


def _default_objects() -> tuple[Primitive, ...]:
    # table-top scene, camera 0.4 m above the table looking along it
    return (
        Primitive(kind="plane", center=(0.0, 0.4, 1.6), size=(3.0, 0.0, 2.4)),
        Primitive(kind="box", center=(-0.3, 0.3, 1.2), size=(0.2, 0.2, 0.2), rotation=(0.0, 0.4, 0.0),
                  motion_translation=(0.15, 0.0, 0.1)),
        Primitive(kind="box", center=(0.35, 0.275, 1.5), size=(0.25, 0.25, 0.25),
                  motion_rotation=(0.0, 0.1745, 0.0)),
        Primitive(kind="sphere", center=(0.0, 0.28, 0.95), radius=0.12),
    )


class SceneSpec(BaseModel):
    """Everything needed to render a frame pair; defaults give the desk scene."""

    model_config = ConfigDict(extra="forbid", frozen=True, strict=True)

    intrinsics: CameraIntrinsics = Field(default_factory=_default_intrinsics)
    objects: tuple[Primitive, ...] = Field(default_factory=_default_objects)
    ego_rotation: Vec3 = (0.0, 0.0, 0.0)
    ego_translation: Vec3 = (0.0, 0.0, 0.0)
    noise_sigma: float = Field(default=0.0, ge=0)
    outlier_fraction: float = Field(default=0.0, ge=0, lt=1)
    outlier_sigma: float = Field(default=1.0, ge=0)
    stride: int = Field(default=1, ge=1)
    seed: int = 0

    @field_validator("objects", "ego_rotation", "ego_translation", mode="before")
    @classmethod
    def _tuples(cls, v):
        return _vec3(v)

    @model_validator(mode="after")
    def _check(self):
        if self.intrinsics.width is None or self.intrinsics.height is None:
            raise ValueError("intrinsics.width and intrinsics.height are required to render")
        return self


@dataclass
class SyntheticFrame:
    depth_t: DepthMap
    depth_t1: DepthMap
    cloud_t: PointCloud
    cloud_t1: PointCloud
    gt_flow: np.ndarray
    outlier_mask: np.ndarray
    occluded: np.ndarray
    object_ids: np.ndarray
    outlier_mask_t1: Optional[np.ndarray] = None


# ----------------------------------------------------------------- motion


@dataclass(frozen=True)
class _Pose:
    R: np.ndarray
    c: np.ndarray


def _rot(v) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(v, dtype=np.float64)).as_matrix()


class _Motion:
    """p -> E_R (M_R (p - c) + c + M_t) + E_t."""

    def __init__(self, prim: Primitive, spec: SceneSpec):
        self.c = np.asarray(prim.center, dtype=np.float64)
        self.mr = _rot(prim.motion_rotation)
        self.mt = np.asarray(prim.motion_translation, dtype=np.float64)
        self.er = _rot(spec.ego_rotation)
        self.et = np.asarray(spec.ego_translation, dtype=np.float64)

    def __call__(self, p: np.ndarray) -> np.ndarray:
        q = (p - self.c) @ self.mr.T + self.c + self.mt
        return q @ self.er.T + self.et

    def pose(self, prim: Primitive) -> _Pose:
        return _Pose(self.er @ self.mr @ _rot(prim.rotation), self(self.c[None])[0])


def _pose(prim: Primitive) -> _Pose:
    return _Pose(_rot(prim.rotation), np.asarray(prim.center, dtype=np.float64))


def _corners(prim: Primitive, pose: _Pose) -> np.ndarray:
    if prim.kind == "sphere":
        return pose.c[None] + np.array([[0, 0, -prim.radius]])
    sx, sy, sz = (np.asarray(prim.size) / 2).tolist()
    if prim.kind == "plane":
        sy = 0.0
    local = np.array([[a, b, c] for a in (-sx, sx) for b in (-sy, sy) for c in (-sz, sz)])
    return local @ pose.R.T + pose.c


# --------------------------------------------------------------- ray cast


def _intersect(prim: Primitive, pose: _Pose, rays: np.ndarray) -> np.ndarray:
    """Ray parameter of the first hit along each ray from the origin (inf if none)."""
    o = -pose.c @ pose.R  # origin in local frame
    d = rays @ pose.R
    t = np.full(len(rays), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        if prim.kind == "plane":
            tt = -o[1] / d[:, 1]
            hit = o + tt[:, None] * d
            ok = (tt > 0) & (np.abs(hit[:, 0]) <= prim.size[0] / 2) & (np.abs(hit[:, 2]) <= prim.size[2] / 2)
            t[ok] = tt[ok]
        elif prim.kind == "box":
            half = np.asarray(prim.size) / 2
            t1 = (-half - o) / d
            t2 = (half - o) / d
            tmin = np.nanmax(np.minimum(t1, t2), axis=1)
            tmax = np.nanmin(np.maximum(t1, t2), axis=1)
            ok = (tmax >= tmin) & (tmin > 0)
            t[ok] = tmin[ok]
        else:
            b = d @ o
            a = (d * d).sum(axis=1)
            cc = o @ o - prim.radius**2
            disc = b * b - a * cc
            ok = disc >= 0
            tt = (-b - np.sqrt(np.where(ok, disc, 0))) / a
            ok &= tt > 0
            t[ok] = tt[ok]
    return t


def _render(spec: SceneSpec, poses: list[_Pose]):
    intr = spec.intrinsics
    h, w = intr.height, intr.width
    vv, uu = np.mgrid[0:h, 0:w]
    rays = np.column_stack(
        [((uu - intr.cx) / intr.fx).ravel(), ((vv - intr.cy) / intr.fy).ravel(), np.ones(h * w)]
    )
    best = np.full(h * w, np.inf)
    ids = np.full(h * w, -1)
    for i, (prim, pose) in enumerate(zip(spec.objects, poses)):
        t = _intersect(prim, pose, rays)
        closer = t < best
        best[closer] = t[closer]
        ids[closer] = i
    valid = np.isfinite(best)
    return np.where(valid, best, np.nan).reshape(h, w), valid.reshape(h, w), ids.reshape(h, w)


# ---------------------------------------------------------------- outliers


def plant_outliers(cloud: PointCloud, fraction: float, sigma: float, seed):
    """Displace ``round(fraction * N)`` random points by isotropic Gaussian offsets.

    Returns ``(cloud, mask)`` where ``mask`` flags the displaced points.
    """
    if not 0 <= fraction < 1:
        raise ConfigError("outlier fraction must be in [0, 1)")
    n = len(cloud)
    count = int(np.floor(fraction * n + 0.5))
    mask = np.zeros(n, bool)
    if count == 0:
        return cloud, mask
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=count, replace=False)
    pts = cloud.points.copy()
    pts[idx] += rng.normal(0.0, sigma, size=(count, 3))
    mask[idx] = True
    return cloud.with_points(pts), mask


# ---------------------------------------------------------------- generate


def generate(spec: SceneSpec = SceneSpec()) -> SyntheticFrame:
    """Render both frames and the ground-truth flow of every frame-t point."""
    intr = spec.intrinsics
    motions = [_Motion(p, spec) for p in spec.objects]
    poses_t = [_pose(p) for p in spec.objects]
    poses_t1 = [m.pose(p) for m, p in zip(motions, spec.objects)]
    for i, (prim, p0, p1) in enumerate(zip(spec.objects, poses_t, poses_t1)):
        for frame, pose in (("t", p0), ("t+1", p1)):
            if (_corners(prim, pose)[:, 2] <= 0).any():
                raise ConfigError(f"object {i} ({prim.kind}) reaches behind the camera in frame {frame}")

    ss = np.random.SeedSequence(spec.seed)
    noise_t, noise_t1, out_t, out_t1 = ss.spawn(4)

    d_t, valid_t, ids_t = _render(spec, poses_t)
    d_t1, valid_t1, _ = _render(spec, poses_t1)
    if spec.noise_sigma > 0:
        d_t = d_t + np.random.default_rng(noise_t).normal(0.0, spec.noise_sigma, d_t.shape)
        d_t1 = d_t1 + np.random.default_rng(noise_t1).normal(0.0, spec.noise_sigma, d_t1.shape)
        with np.errstate(invalid="ignore"):
            valid_t &= d_t > 0
            valid_t1 &= d_t1 > 0
    depth_t = DepthMap(np.where(valid_t, d_t, np.nan), valid_t)
    depth_t1 = DepthMap(np.where(valid_t1, d_t1, np.nan), valid_t1)

    cloud_t = backproject_depth_map(depth_t, intr, spec.stride)
    cloud_t1 = backproject_depth_map(depth_t1, intr, spec.stride)
    pix = cloud_t.source_pixels.astype(np.intp)
    obj = ids_t[pix[:, 1], pix[:, 0]]

    moved = np.empty_like(cloud_t.points)
    for i, m in enumerate(motions):
        sel = obj == i
        moved[sel] = m(cloud_t.points[sel])
    gt_flow = moved - cloud_t.points
    occluded = _occlusion(moved, depth_t1, intr)

    cloud_t, mask_t = plant_outliers(cloud_t, spec.outlier_fraction, spec.outlier_sigma, out_t)
    cloud_t1, mask_t1 = plant_outliers(cloud_t1, spec.outlier_fraction, spec.outlier_sigma, out_t1)
    return SyntheticFrame(depth_t, depth_t1, cloud_t, cloud_t1, gt_flow, mask_t, occluded, obj, mask_t1)


def _occlusion(moved: np.ndarray, depth_t1: DepthMap, intr: CameraIntrinsics) -> np.ndarray:
    """Moved points that leave the image or sit behind the frame-t+1 surface."""
    z = moved[:, 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    u = np.rint(moved[:, 0] * intr.fx / zs + intr.cx)
    v = np.rint(moved[:, 1] * intr.fy / zs + intr.cy)
    inside = front & (u >= 0) & (u < depth_t1.width) & (v >= 0) & (v < depth_t1.height)
    occ = ~inside
    ui = np.where(inside, u, 0).astype(np.intp)
    vi = np.where(inside, v, 0).astype(np.intp)
    seen = depth_t1.values[vi, ui]
    ok = depth_t1.valid[vi, ui]
    # surface slope across half a pixel: allow a few percent of depth
    occ |= inside & (~ok | (seen < z - (0.03 * z + 0.02)))
    return occ


def desk_scene(**overrides) -> SceneSpec:
    """Default desk scene with field overrides."""
    return SceneSpec(**overrides)
