"""The four flow losses and their gradients.

Each loss returns its value and the gradient with respect to the flow (or
the warped points). A central-difference check confirms the gradients with
the correspondences held fixed.

Run: python3 demos/03_losses.py
"""

# %%
import numpy as np

from pseudoflow.losses import (
    chamfer_loss,
    chamfer_match,
    disparity_consistency_loss,
    laplacian_loss,
    smoothness_loss,
)
from pseudoflow.cloud import random_sample
from pseudoflow.synth import SceneSpec, generate

spec = SceneSpec()
frame = generate(spec)
idx = np.sort(np.random.default_rng(0).choice(len(frame.cloud_t), 1024, replace=False))
src = frame.cloud_t.select(idx)
tgt = random_sample(frame.cloud_t1, 1024, seed=1)
zero = np.zeros((len(src), 3))

# %% loss values with no motion, then with the true motion
gt = frame.gt_flow[idx]
for name, flow in (("zero flow", zero), ("true flow", gt)):
    warped = src.points + flow
    print(name)
    print(f"  chamfer     {chamfer_loss(warped, tgt.points)[0]:.4f}")
    print(f"  smoothness  {smoothness_loss(src.points, flow)[0]:.4f}")
    print(f"  laplacian   {laplacian_loss(warped, tgt.points)[0]:.4f}")
    print(f"  disparity   {disparity_consistency_loss(src.points, flow, frame.depth_t1, spec.intrinsics)[0]:.4f}")

# %% central differences agree with the analytic Chamfer gradient
rng = np.random.default_rng(2)
w = rng.normal(size=(32, 3))
t = w + rng.normal(0, 0.1, (32, 3))
match = chamfer_match(w, t)
_, grad = chamfer_loss(w, t, match=match)
h = 1e-6
numeric = np.zeros_like(w)
for i in range(w.shape[0]):
    for j in range(3):
        step = np.zeros_like(w)
        step[i, j] = h
        numeric[i, j] = (chamfer_loss(w + step, t, match=match)[0] - chamfer_loss(w - step, t, match=match)[0]) / (2 * h)
print("max gradient mismatch:", np.abs(grad - numeric).max())
