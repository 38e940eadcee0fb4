"""Depth maps, back-projection and sampling.

Run: python3 demos/01_depth_to_points.py
"""

# %%
import numpy as np

from pseudoflow.camera import (
    CameraIntrinsics,
    DepthMap,
    DisparityMap,
    backproject_depth_map,
    bilinear_sample,
    disparity_to_depth,
    project_points,
)

intr = CameraIntrinsics(fx=100.0, fy=100.0, cx=3.5, cy=2.5, baseline=0.5, width=8, height=6)

# %% a tilted wall 2 m away with one hole
vv, uu = np.mgrid[0:6, 0:8]
depth = 2.0 + 0.05 * uu
depth[3, 4] = np.nan
depth = DepthMap.from_array(depth)
print("valid pixels:", depth.valid.sum(), "of", depth.valid.size)

# %% every valid pixel becomes one point, row by row
cloud = backproject_depth_map(depth, intr)
print("points:", len(cloud))
print("first three:\n", cloud.points[:3])

# %% projecting the points lands back on the pixel centres
uvz = project_points(cloud, intr)
print("max reprojection error (px):", np.abs(uvz[:, :2] - cloud.source_pixels).max())

# %% stride keeps every s-th row and column
print("stride 2:", len(backproject_depth_map(depth, intr, stride=2)), "points")

# %% stereo disparity converts to depth through the baseline
disp = DisparityMap.from_array(np.array([[25.0, 50.0], [0.0, 12.5]]))
print("depth from disparity:\n", disparity_to_depth(disp, intr).masked())

# %% bilinear lookups need all four surrounding pixels to be valid
print("depth at (1.5, 1.5):", bilinear_sample(depth, 1.5, 1.5))
print("depth next to the hole:", bilinear_sample(depth, 3.5, 2.5))
