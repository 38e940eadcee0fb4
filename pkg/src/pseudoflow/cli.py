"""Command line pipeline: synth, backproject, clean, estimate, eval.

Each stage reads and writes plain PFM/PLY/JSON files so the stages compose in
shell pipelines. Every run writes a manifest holding the resolved config, its
hash and the seeds used. Timings go to standard error only, which keeps the
files byte-identical between runs.

Exit codes: 0 success, 2 bad input or schema, 3 degenerate data (too few
points), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .camera import backproject_depth_map, disparity_to_depth
from .cloud import CropBox, OutlierParams, crop_edges, random_sample, remove_outliers
from .errors import ConfigError, MalformedInputError, NumericalFailure, PseudoFlowError, ShapeError
from .io import (
    dumps_report,
    read_config,
    read_intrinsics,
    read_pfm,
    read_ply,
    write_pfm,
    write_ply,
    write_report,
)
from .metrics import evaluate
from .solver import SolverConfig, solve
from .synth import SceneSpec, generate

log = logging.getLogger("pseudoflow")

SYNTH_FILES = ("depth_t.pfm", "depth_t1.pfm", "cloud_t.ply", "cloud_t1.ply", "gt_flow.ply", "manifest.json")


def _hash(config) -> str:
    text = json.dumps(json.loads(dumps_report(config)), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _manifest(command: str, config, seeds: dict, inputs, outputs, **extra) -> dict:
    doc = {
        "command": command,
        "version": __version__,
        "config": config,
        "config_hash": _hash(config),
        "seeds": seeds,
        "inputs": [Path(p).name for p in inputs],
        "outputs": [Path(p).name for p in outputs],
    }
    doc.update(extra)
    return doc


def _sidecar(path, suffix: str) -> Path:
    p = Path(path)
    return p.with_name(p.stem + suffix)


@contextmanager
def _timed(name: str):
    t0 = time.perf_counter()
    yield
    log.info("%s: %.3f s", name, time.perf_counter() - t0)


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    spec = read_config(args.spec, SceneSpec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with _timed("generate"):
        frame = generate(spec)
    paths = [out / name for name in SYNTH_FILES]
    write_pfm(paths[0], frame.depth_t)
    write_pfm(paths[1], frame.depth_t1)
    write_ply(paths[2], frame.cloud_t)
    write_ply(paths[3], frame.cloud_t1)
    write_ply(
        paths[4],
        frame.cloud_t,
        flow=frame.gt_flow,
        extra={
            "outlier": frame.outlier_mask.astype(np.float64),
            "occluded": frame.occluded.astype(np.float64),
            "object": frame.object_ids.astype(np.float64),
        },
    )
    manifest = _manifest(
        "synth", spec, {"scene": spec.seed}, [args.spec], paths[:-1],
        intrinsics=spec.intrinsics, n_points=len(frame.cloud_t), n_points_t1=len(frame.cloud_t1),
    )
    write_report(paths[5], manifest)
    print(f"wrote {len(paths)} files to {out} ({len(frame.cloud_t)} points at t, {len(frame.cloud_t1)} at t+1)")
    return 0


def cmd_backproject(args) -> int:
    intr = read_intrinsics(args.intrinsics)
    if args.disparity:
        if intr.baseline is None:
            raise ConfigError("--disparity needs a stereo baseline in the intrinsics")
        depth = disparity_to_depth(read_pfm(args.depth, kind="disparity"), intr)
    else:
        depth = read_pfm(args.depth)
    cloud = backproject_depth_map(depth, intr, stride=args.stride)
    if len(cloud) == 0:
        print("warning: no valid pixels, writing an empty cloud", file=sys.stderr)
    write_ply(args.out, cloud)
    write_report(
        _sidecar(args.out, ".manifest.json"),
        _manifest("backproject", {"stride": args.stride, "disparity": args.disparity, "intrinsics": intr},
                  {}, [args.depth, args.intrinsics], [args.out], n_points=len(cloud)),
    )
    print(f"{len(cloud)} points")
    return 0


def _crop_box(text: str) -> CropBox | None:
    if text == "none":
        return None
    if text == "driving":
        return CropBox.driving()
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        vals = []
    if len(vals) != 6:
        raise ConfigError("--crop expects 'none', 'driving' or six numbers xmin,xmax,ymin,ymax,zmin,zmax")
    try:
        return CropBox(x_min=vals[0], x_max=vals[1], y_min=vals[2], y_max=vals[3], z_min=vals[4], z_max=vals[5])
    except ValueError as exc:
        raise ConfigError(f"bad --crop: {exc}") from None


def cmd_clean(args) -> int:
    data = read_ply(args.input)
    cloud = data.cloud
    n_in = len(cloud)
    box = _crop_box(args.crop)
    try:
        params = OutlierParams(m=args.m, alpha=args.alpha)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    kept = np.arange(n_in)
    if box is not None:
        cloud, mask = crop_edges(cloud, box)
        kept = kept[mask]
    n_crop = len(cloud)
    cloud, mask, d_max = remove_outliers(cloud, params)
    kept = kept[mask]
    flow = None if data.flow is None else data.flow[kept]
    extra = {k: v[kept] for k, v in data.extra.items()}
    write_ply(args.output, cloud, flow=flow, extra=extra)
    config = {"crop": None if box is None else box, "outliers": params}
    write_report(
        _sidecar(args.output, ".manifest.json"),
        _manifest("clean", config, {}, [args.input], [args.output],
                  n_input=n_in, removed_crop=n_in - n_crop, removed_outliers=n_crop - len(cloud), d_max=d_max),
    )
    print(f"input {n_in}  cropped {n_in - n_crop}  outliers {n_crop - len(cloud)}  kept {len(cloud)}")
    print(f"d_max {d_max:.6g} m")
    return 0


def sample_seeds(seed: int) -> tuple[int, int]:
    """Per-cloud sampling seeds derived from the run seed."""
    a, b = np.random.SeedSequence(seed).generate_state(2)
    return int(a), int(b)


def cmd_estimate(args) -> int:
    config = read_config(args.config, SolverConfig)
    if args.seed is not None:
        config = config.model_copy(update={"seed": args.seed})
    if (args.target_depth is None) != (args.intrinsics is None):
        raise ConfigError("--target-depth and --intrinsics must be given together")
    if args.n_sample < 1:
        raise ConfigError("--n-sample must be positive")
    seed_t, seed_t1 = sample_seeds(config.seed)
    cloud_t = random_sample(read_ply(args.cloud_t).cloud, args.n_sample, seed_t)
    cloud_t1 = random_sample(read_ply(args.cloud_t1).cloud, args.n_sample, seed_t1)
    depth = intr = None
    if args.target_depth is not None:
        depth = read_pfm(args.target_depth)
        intr = read_intrinsics(args.intrinsics)

    trace_path = _sidecar(args.out, ".trace.json")
    seeds = {"run": config.seed, "sample_t": seed_t, "sample_t1": seed_t1, "pyramid": config.seed}
    manifest = _manifest(
        "estimate", {"solver": config, "n_sample": args.n_sample},
        seeds, [p for p in (args.cloud_t, args.cloud_t1, args.config, args.target_depth) if p],
        [args.out, trace_path],
    )
    write_report(_sidecar(args.out, ".manifest.json"), manifest)
    try:
        with _timed("solve"):
            flow, trace = solve(cloud_t, cloud_t1, depth, intr, config)
    except NumericalFailure as exc:
        if exc.trace is not None:
            write_report(trace_path, exc.trace)
        raise
    write_ply(args.out, cloud_t, flow=flow)
    write_report(trace_path, trace)
    print(f"{len(cloud_t)} points, final loss {trace.total:.6g}")
    return 0


def _align(pred, gt):
    """Rows of ``gt`` matching the points of ``pred`` (exact coordinates)."""
    if np.array_equal(pred.cloud.points, gt.cloud.points):
        return np.arange(len(gt.cloud))
    lookup = {}
    for i, row in enumerate(gt.cloud.points):
        lookup.setdefault(row.tobytes(), i)
    rows = [lookup.get(row.tobytes(), -1) for row in pred.cloud.points]
    if -1 in rows:
        raise ShapeError(
            f"prediction ({len(pred.cloud)} points) is not aligned with ground truth ({len(gt.cloud)} points)"
        )
    return np.asarray(rows, dtype=np.intp)


def cmd_eval(args) -> int:
    pred = read_ply(args.pred)
    gt = read_ply(args.gt)
    if pred.flow is None or gt.flow is None:
        raise MalformedInputError("both PLY files must carry flow_x, flow_y, flow_z")
    rows = _align(pred, gt)
    gt_flow = gt.flow[rows]
    source = intr = None
    if args.intrinsics is not None and args.source is not None:
        intr = read_intrinsics(args.intrinsics)
        src = read_ply(args.source).cloud
        if len(src) == len(gt.cloud):
            source = src.points[rows]
        elif len(src) == len(rows):
            source = src.points
        else:
            raise ShapeError(f"source has {len(src)} points, flow has {len(rows)}")
    report = evaluate(pred.flow, gt_flow, source, intr)
    out = args.out if args.out is not None else _sidecar(args.pred, ".metrics.json")
    write_report(out, report)
    print(report.table())
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pseudoflow", description="Scene flow on pseudo-LiDAR point clouds.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log stage timings to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic frame pair with ground-truth flow")
    s.add_argument("spec", help="scene spec JSON ({} for the default desk scene)")
    s.add_argument("out_dir")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("backproject", help="depth (or disparity) PFM to a point cloud PLY")
    s.add_argument("depth")
    s.add_argument("intrinsics", help="intrinsics JSON, bare or under an 'intrinsics' key")
    s.add_argument("out")
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--disparity", action="store_true", help="input is a disparity map; convert with the baseline")
    s.set_defaults(func=cmd_backproject)

    s = sub.add_parser("clean", help="crop to a box, then remove statistical outliers")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--crop", default="driving", help="'none', 'driving' or xmin,xmax,ymin,ymax,zmin,zmax")
    s.add_argument("--m", type=int, default=8)
    s.add_argument("--alpha", type=float, default=2.0)
    s.set_defaults(func=cmd_clean)

    s = sub.add_parser("estimate", help="estimate the flow between two clouds")
    s.add_argument("cloud_t")
    s.add_argument("cloud_t1")
    s.add_argument("config", help="solver config JSON ({} for defaults)")
    s.add_argument("out", help="output flow PLY; trace and manifest are written beside it")
    s.add_argument("--target-depth", help="frame t+1 depth PFM for the disparity-consistency term")
    s.add_argument("--intrinsics")
    s.add_argument("--n-sample", type=int, default=4096)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("eval", help="score a predicted flow PLY against ground truth")
    s.add_argument("pred")
    s.add_argument("gt")
    s.add_argument("out", nargs="?", help="metrics JSON (default: <pred>.metrics.json)")
    s.add_argument("--intrinsics")
    s.add_argument("--source", help="source cloud PLY, enables the 2-D metrics with --intrinsics")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "stride", 1) < 1:
        print("error: --stride must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except PseudoFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
