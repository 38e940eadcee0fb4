"""The file-based pipeline, driven through the command line entry point.

Equivalent shell session:

    pseudoflow synth scene.json scene/
    pseudoflow clean scene/cloud_t.ply t.ply --crop=-1.5,1.5,-0.5,0.45,0.3,3
    pseudoflow clean scene/cloud_t1.ply t1.ply --crop=-1.5,1.5,-0.5,0.45,0.3,3
    pseudoflow estimate t.ply t1.ply solver.json flow.ply \\
        --target-depth scene/depth_t1.pfm --intrinsics scene/manifest.json
    pseudoflow eval flow.ply scene/gt_flow.ply metrics.json \\
        --intrinsics scene/manifest.json --source scene/cloud_t.ply

Run: python3 demos/05_file_pipeline.py
"""

# %%
import json
import tempfile
from pathlib import Path

from pseudoflow.cli import main

work = Path(tempfile.mkdtemp())
(work / "scene.json").write_text(json.dumps({"noise_sigma": 0.002, "outlier_fraction": 0.03, "outlier_sigma": 0.5}))
(work / "solver.json").write_text("{}")
scene = work / "scene"
crop = "--crop=-1.5,1.5,-0.5,0.45,0.3,3"

# %%
steps = [
    ["synth", work / "scene.json", scene],
    ["clean", scene / "cloud_t.ply", work / "t.ply", crop],
    ["clean", scene / "cloud_t1.ply", work / "t1.ply", crop],
    ["estimate", work / "t.ply", work / "t1.ply", work / "solver.json", work / "flow.ply",
     "--n-sample", "2048", "--target-depth", scene / "depth_t1.pfm", "--intrinsics", scene / "manifest.json"],
    ["eval", work / "flow.ply", scene / "gt_flow.ply", work / "metrics.json",
     "--intrinsics", scene / "manifest.json", "--source", scene / "cloud_t.ply"],
]
for step in steps:
    print("$ pseudoflow", " ".join(str(a) for a in step))
    assert main([str(a) for a in step]) == 0

# %% every stage leaves a manifest with the resolved config and its hash
manifest = json.loads((work / "flow.manifest.json").read_text())
print("\nestimate seeds:", manifest["seeds"])
print("config hash:", manifest["config_hash"][:16], "...")
print("files:", sorted(p.name for p in work.iterdir()))
