"""Nearest neighbours, cropping and statistical outlier removal.

Run: python3 demos/02_neighbours_and_cleaning.py
"""

# %%
import numpy as np

from pseudoflow.cloud import CropBox, OutlierParams, build_index, crop_edges, knn, random_sample, remove_outliers
from pseudoflow.synth import SceneSpec, generate, plant_outliers

frame = generate(SceneSpec())
cloud = random_sample(frame.cloud_t, 4096, seed=0)
print("desk scene sampled to", len(cloud), "points")

# %% exact k nearest neighbours, ascending squared distance
index = build_index(cloud)
for i, d2 in knn(index, cloud.points[0], 4):
    print(f"  neighbour {i:5d}  squared distance {d2:.2e}")

# %% crop to the region in front of the camera
box = CropBox(x_min=-1.5, x_max=1.5, y_min=-0.5, y_max=0.45, z_min=0.3, z_max=3.0)
cropped, kept = crop_edges(cloud, box)
print("crop kept", kept.sum(), "points")

# %% scatter 5 % of the points far away, then remove them again
noisy, planted = plant_outliers(cloud, fraction=0.05, sigma=10.0, seed=1)
cleaned, kept, d_max = remove_outliers(noisy, OutlierParams(m=8, alpha=2.0))
print(f"threshold d_max = {d_max:.4f} m")
print("planted removed:", (planted & ~kept).sum(), "of", planted.sum())
print("clean points lost:", (~planted & ~kept).sum())

# %% a looser alpha keeps more of the planted points
for alpha in (1.0, 2.0, 4.0):
    _, kept, _ = remove_outliers(noisy, OutlierParams(m=8, alpha=alpha))
    print(f"alpha {alpha}: recall {(planted & ~kept).sum() / planted.sum():.3f}")
