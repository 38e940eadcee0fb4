import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pseudoflow.camera import CameraIntrinsics, DepthMap, DisparityMap
from pseudoflow.cloud import OutlierParams, PointCloud
from pseudoflow.errors import ParseError, SchemaError
from pseudoflow.io import (
    decode_pfm,
    decode_ply,
    dumps_report,
    encode_pfm,
    encode_ply,
    parse_config,
    read_config,
    read_intrinsics,
    read_pfm,
    read_ply,
    write_pfm,
    write_ply,
    write_report,
)
from pseudoflow.metrics import evaluate_3d
from pseudoflow.solver import SolverConfig
from pseudoflow.synth import SceneSpec

seeds = st.integers(0, 2**32 - 1)


def random_grid(r, invalid=0.2):
    h, w = r.integers(1, 12, 2)
    values = r.uniform(0.01, 100, (h, w)).astype(np.float32).astype(np.float64)
    values[r.random((h, w)) < invalid] = np.nan
    return DepthMap.from_array(values)


# -------------------------------------------------------------------- PFM


def test_pfm_header_layout_and_row_order():
    data = encode_pfm(DepthMap.from_array(np.array([[1.0, 2.0], [3.0, 4.0]])))
    assert data.startswith(b"Pf\n2 2\n-1.0\n")
    payload = np.frombuffer(data[len(b"Pf\n2 2\n-1.0\n"):], "<f4")
    np.testing.assert_array_equal(payload, [3, 4, 1, 2])  # bottom row first


def test_pfm_one_nan_gives_one_invalid_pixel():
    grid = decode_pfm(encode_pfm(np.array([[1.0, np.nan], [2.0, 3.0]])))
    assert (~grid.valid).sum() == 1 and not grid.valid[0, 1]


def test_pfm_nonpositive_and_inf_are_invalid():
    grid = decode_pfm(encode_pfm(np.array([[0.0, -1.0, np.inf, 5.0]])))
    np.testing.assert_array_equal(grid.valid, [[False, False, False, True]])


def test_pfm_canonical_file_is_byte_stable(tmp_path):
    raw = encode_pfm(np.array([[1.5, np.nan, 2.25], [0.125, 7.0, np.nan]]))
    path = tmp_path / "a.pfm"
    path.write_bytes(raw)
    write_pfm(tmp_path / "b.pfm", read_pfm(path))
    assert (tmp_path / "b.pfm").read_bytes() == raw


def test_pfm_big_endian_twin():
    values = np.array([[1.0, 2.5, np.nan], [4.0, 0.5, 6.0]])
    little = decode_pfm(encode_pfm(values, little_endian=True))
    big_bytes = encode_pfm(values, little_endian=False)
    assert big_bytes.startswith(b"Pf\n3 2\n1.0\n")
    assert decode_pfm(big_bytes) == little


def test_pfm_disparity_kind():
    assert isinstance(decode_pfm(encode_pfm(np.ones((2, 2))), kind="disparity"), DisparityMap)


@pytest.mark.parametrize(
    "data, offset",
    [
        (b"P5\n2 2\n-1.0\n" + bytes(16), 0),
        (b"PF\n2 2\n-1.0\n" + bytes(48), 0),
        (b"Pf\nx 2\n-1.0\n" + bytes(16), 3),
        (b"Pf\n2 y\n-1.0\n" + bytes(16), 5),
        (b"Pf\n2 2\nabc\n" + bytes(16), 7),
        (b"Pf\n2 2\n0\n" + bytes(16), 7),
        (b"Pf\n2 2\n-1.0\n" + bytes(10), 22),
        (b"Pf\n2 2", 6),
    ],
)
def test_pfm_errors_report_offsets(data, offset):
    with pytest.raises(ParseError) as exc:
        decode_pfm(data)
    assert exc.value.offset == offset


@given(seeds, st.booleans())
def test_pfm_fuzz_round_trip(seed, little):
    grid = random_grid(np.random.default_rng(seed))
    back = decode_pfm(encode_pfm(grid, little_endian=little))
    assert back == grid
    assert encode_pfm(back, little) == encode_pfm(grid, little)


# -------------------------------------------------------------------- PLY

ASCII_FIXTURE = b"""ply
format ascii 1.0
comment three points
element vertex 3
property float x
property float y
property float z
property uchar red
end_header
0 0 1 255
0.5 -0.25 2 0
1e-3 4 8.5 17
"""


def test_ascii_fixture():
    data = decode_ply(ASCII_FIXTURE)
    np.testing.assert_array_equal(data.cloud.points, [[0, 0, 1], [0.5, -0.25, 2], [0.001, 4, 8.5]])
    assert data.flow is None and data.cloud.source_pixels is None
    np.testing.assert_array_equal(data.extra["red"], [255, 0, 17])


def test_binary_typed_properties_and_leading_element():
    header = (b"ply\nformat binary_little_endian 1.0\nelement camera 1\nproperty int id\n"
              b"element vertex 2\nproperty float x\nproperty float y\nproperty double z\n"
              b"property short u\nproperty short v\nend_header\n")
    rec = np.array([(0.5, 1.5, 2.25, 3, 4), (-1.0, 0.0, 9.0, 10, 11)],
                   dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f8"), ("u", "<i2"), ("v", "<i2")])
    data = decode_ply(header + np.int32(7).tobytes() + rec.tobytes())
    np.testing.assert_array_equal(data.cloud.points, [[0.5, 1.5, 2.25], [-1.0, 0.0, 9.0]])
    np.testing.assert_array_equal(data.cloud.source_pixels, [[3, 4], [10, 11]])


def test_big_endian_ply():
    header = b"ply\nformat binary_big_endian 1.0\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nend_header\n"
    data = decode_ply(header + np.array([1.0, 2.0, 3.0], ">f8").tobytes())
    np.testing.assert_array_equal(data.cloud.points, [[1, 2, 3]])


def test_ascii_and_binary_agree(rng):
    cloud = PointCloud(rng.normal(size=(40, 3)), rng.uniform(0, 100, (40, 2)))
    flow = rng.normal(size=(40, 3))
    a = decode_ply(encode_ply(cloud, flow, binary=False))
    b = decode_ply(encode_ply(cloud, flow, binary=True))
    assert a.cloud == b.cloud == cloud
    np.testing.assert_array_equal(a.flow, b.flow)
    np.testing.assert_array_equal(a.flow, flow)


def test_flow_and_extras_round_trip(tmp_path, rng):
    cloud = PointCloud(rng.normal(size=(25, 3)))
    flow = rng.normal(size=(25, 3))
    mask = (rng.random(25) < 0.5).astype(float)
    write_ply(tmp_path / "f.ply", cloud, flow=flow, extra={"outlier": mask})
    data = read_ply(tmp_path / "f.ply")
    assert data.cloud == cloud
    np.testing.assert_array_equal(data.flow, flow)
    np.testing.assert_array_equal(data.extra["outlier"], mask)


def test_writer_defaults_to_binary():
    assert b"format binary_little_endian 1.0" in encode_ply(PointCloud(np.zeros((1, 3))))


def test_empty_cloud_round_trip():
    data = decode_ply(encode_ply(PointCloud(np.zeros((0, 3)))))
    assert len(data.cloud) == 0


def test_missing_coordinate_lists_expected_properties():
    bad = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n"
    with pytest.raises(SchemaError, match="x, y, z"):
        decode_ply(bad)


def test_partial_flow_is_a_schema_error():
    bad = (b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
           b"property float z\nproperty float flow_x\nend_header\n1 2 3 4\n")
    with pytest.raises(SchemaError, match="flow_y"):
        decode_ply(bad)


@pytest.mark.parametrize(
    "data",
    [
        b"not a ply",
        b"ply\nelement vertex 1\nproperty float x\nend_header\n",
        b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n",
        b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty double x\nproperty double y\n"
        b"property double z\nend_header\n" + bytes(20),
        b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 b 3\n",
    ],
)
def test_malformed_ply(data):
    with pytest.raises(ParseError):
        decode_ply(data)


@given(seeds, st.booleans(), st.booleans(), st.booleans())
def test_ply_fuzz_round_trip(seed, binary, with_pixels, with_flow):
    r = np.random.default_rng(seed)
    n = int(r.integers(0, 60))
    # raw bit patterns cover subnormals, huge and tiny magnitudes
    pts = r.normal(size=(n, 3)) * 10.0 ** r.integers(-300, 300, (n, 3))
    pix = r.uniform(0, 2000, (n, 2)) if with_pixels else None
    flow = r.normal(size=(n, 3)) if with_flow else None
    cloud = PointCloud(pts, pix)
    data = decode_ply(encode_ply(cloud, flow, binary=binary))
    assert data.cloud == cloud
    if with_flow:
        np.testing.assert_array_equal(data.flow, flow)
    else:
        assert data.flow is None


# ------------------------------------------------------------------- JSON


def test_empty_config_gives_defaults():
    cfg = parse_config("{}", SolverConfig)
    assert (cfg.lambda_chamfer, cfg.lambda_smooth, cfg.lambda_laplace, cfg.lambda_disp) == (1.0, 0.2, 0.2, 1.0)
    assert cfg.level_weights == (0.02, 0.04, 0.08, 0.16)


def test_cleaning_config():
    params = parse_config('{"m": 8, "alpha": 2}', OutlierParams)
    assert params == OutlierParams()


def test_unknown_key_is_named():
    with pytest.raises(SchemaError, match="unknown key 'lambda_smoth'") as exc:
        parse_config('{"lambda_smoth": 0.2}', SolverConfig)
    assert exc.value.path == "$.lambda_smoth"


def test_type_mismatch_names_json_path():
    with pytest.raises(SchemaError) as exc:
        parse_config('{"level_weights": [0.1, "x", 0.3, 0.4]}', SolverConfig)
    assert exc.value.path == "$.level_weights[1]"
    with pytest.raises(SchemaError) as exc:
        parse_config('{"objects": [{"kind": "box", "center": [0, 0, "far"]}]}', SceneSpec)
    assert exc.value.path == "$.objects[0].center[2]"


def test_malformed_json_reports_offset():
    with pytest.raises(ParseError) as exc:
        parse_config('{"step": 0.0.5}', SolverConfig)
    assert exc.value.offset == 12
    with pytest.raises(SchemaError):
        parse_config("[1, 2]", SolverConfig)


def test_defaults_are_echoed_and_round_trip(tmp_path):
    write_report(tmp_path / "c.json", SolverConfig(step=0.01))
    doc = json.loads((tmp_path / "c.json").read_text())
    assert doc["lambda_smooth"] == 0.2 and doc["step"] == 0.01
    assert read_config(tmp_path / "c.json", SolverConfig) == SolverConfig(step=0.01)


def test_report_is_deterministic():
    rep = evaluate_3d(np.ones((3, 3)), np.ones((3, 3)))
    assert dumps_report(rep) == dumps_report(rep)
    assert list(json.loads(dumps_report(rep))) == sorted(rep.as_dict())


def test_intrinsics_bare_or_nested(tmp_path):
    intr = CameraIntrinsics(fx=1.0, fy=2.0, cx=3.0, cy=4.0, baseline=0.5)
    (tmp_path / "a.json").write_text(intr.model_dump_json())
    (tmp_path / "b.json").write_text(json.dumps({"intrinsics": intr.model_dump(), "other": 1}))
    assert read_intrinsics(tmp_path / "a.json") == read_intrinsics(tmp_path / "b.json") == intr
    (tmp_path / "c.json").write_text(json.dumps({"intrinsics": {"fx": -1.0, "fy": 1, "cx": 0, "cy": 0}}))
    with pytest.raises(SchemaError) as exc:
        read_intrinsics(tmp_path / "c.json")
    assert exc.value.path == "$.intrinsics.fx"
