"""Shared fixtures for the gradient checks and scene-based tests."""

import functools

import numpy as np

from oracles import central_difference, gradient_error
from pseudoflow.camera import CameraIntrinsics, DepthMap
from pseudoflow.losses import (
    chamfer_loss,
    chamfer_match,
    disparity_consistency_loss,
    disparity_match,
    laplacian_loss,
    laplacian_match,
    smoothness_loss,
    smoothness_neighbors,
)
from pseudoflow.solver import solve
from pseudoflow.synth import SceneSpec, generate

LOSSES = ("chamfer", "smoothness", "laplacian", "disparity")
FD_INTR = CameraIntrinsics(fx=30.0, fy=30.0, cx=20.0, cy=20.0)


def smooth_depth(r, size=41):
    vv, uu = np.mgrid[0:size, 0:size] / size
    a = r.uniform(-1, 1, 4)
    return DepthMap.from_array(3 + 0.5 * np.sin(3 * uu + a[0]) * np.cos(2 * vv + a[1]) + 0.3 * a[2] * uu + 0.2 * a[3] * vv)


def gradient_trial(name: str, seed: int, n: int = 64) -> float:
    """Relative error between analytic and central-difference gradients for one random problem."""
    r = np.random.default_rng(seed)
    if name == "disparity":
        z = r.uniform(2.0, 4.0, n)
        uv = r.uniform(4, 36, (n, 2))
        src = np.column_stack([(uv[:, 0] - 20) * z / 30, (uv[:, 1] - 20) * z / 30, z])
        flow = r.normal(0, 0.02, (n, 3))
        depth = smooth_depth(r)
        match = disparity_match(src, flow, depth, FD_INTR)

        def f(fl):
            return disparity_consistency_loss(src, fl, depth, FD_INTR, match=match)[0]

        g = disparity_consistency_loss(src, flow, depth, FD_INTR, match=match)[1]
        return gradient_error(g, central_difference(f, flow.copy()))

    src = r.normal(size=(n, 3))
    tgt = src + r.normal(0, 0.1, (n, 3)) + r.normal(0, 0.2, 3)
    flow = r.normal(0, 0.05, (n, 3))
    warped = src + flow
    if name == "chamfer":
        match = chamfer_match(warped, tgt)

        def f(fl):
            return chamfer_loss(src + fl, tgt, match=match)[0]

        g = chamfer_loss(warped, tgt, match=match)[1]
    elif name == "smoothness":
        nb = smoothness_neighbors(src, 8)

        def f(fl):
            return smoothness_loss(src, fl, neighbors=nb)[0]

        g = smoothness_loss(src, flow, neighbors=nb)[1]
    elif name == "laplacian":
        match = laplacian_match(warped, tgt, k=8)

        def f(fl):
            return laplacian_loss(src + fl, tgt, match=match)[0]

        g = laplacian_loss(warped, tgt, match=match)[1]
    else:
        raise ValueError(name)
    return gradient_error(g, central_difference(f, flow.copy()))


DESK_SEEDS = (0, 1, 2)
DESK_POINTS = 4096


@functools.lru_cache(maxsize=None)
def desk_runs(n: int = DESK_POINTS, seeds: tuple = DESK_SEEDS):
    """Solve the default two-motion desk scene once per sampling seed.

    Returns ``[(flow, gt_flow, visible, object_ids), ...]`` on the sampled
    frame-t points. Cached so every test module shares one set of solves.
    """
    fr = generate(SceneSpec())
    runs = []
    for s in seeds:
        idx = np.sort(np.random.default_rng(s).choice(len(fr.cloud_t), n, replace=False))
        rest = np.sort(np.random.default_rng(s + 1).choice(len(fr.cloud_t1), n, replace=False))
        flow, _ = solve(fr.cloud_t.select(idx), fr.cloud_t1.select(rest))
        runs.append((flow, fr.gt_flow[idx], ~fr.occluded[idx], fr.object_ids[idx]))
    return runs


def pooled(runs):
    """Concatenate the per-seed arrays of :func:`desk_runs`."""
    return [np.concatenate(parts) for parts in zip(*runs)]
