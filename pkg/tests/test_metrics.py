import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from pseudoflow.camera import CameraIntrinsics
from pseudoflow.errors import BehindCameraError, ShapeError
from pseudoflow.metrics import evaluate, evaluate_2d, evaluate_3d

seeds = st.integers(0, 2**32 - 1)


def four_point_fixture():
    gt = np.tile([1.0, 0.0, 0.0], (4, 1))
    pred = gt + np.array([[0.0, 0, 0], [0.0, 0.06, 0], [0.0, 0.2, 0], [0.0, 0.5, 0]])
    return pred, gt


def test_perfect_prediction(rng):
    gt = rng.normal(size=(30, 3))
    rep = evaluate_3d(gt, gt)
    assert (rep.epe3d, rep.acc3ds, rep.acc3dr, rep.outliers3d, rep.n_points) == (0.0, 1.0, 1.0, 0.0, 30)


def test_four_point_fixture_against_oracle():
    pred, gt = four_point_fixture()
    rep = evaluate_3d(pred, gt)
    epe, acc_s, acc_r, out = oracles.metrics(pred, gt)
    assert rep.epe3d == pytest.approx(0.19, rel=1e-12)
    assert rep.epe3d == pytest.approx(epe, rel=1e-15)
    assert (rep.acc3ds, rep.acc3dr) == (0.25, 0.5) == (acc_s, acc_r)
    # errors 0.2 and 0.5 on unit flows are both above 10 % relative
    assert rep.outliers3d == out == 0.5


def test_both_branches_are_evaluated():
    gt = np.array([[2.0, 0.0, 0.0]])
    rep = evaluate_3d(gt + [0.0, 0.08, 0.0], gt)
    assert rep.acc3dr == 1.0
    assert rep.acc3ds == 1.0  # 0.08 m fails the absolute branch, 4 % passes the relative one
    assert rep.outliers3d == 0.0


def test_zero_ground_truth_with_zero_error_is_accurate():
    rep = evaluate_3d(np.zeros((2, 3)), np.zeros((2, 3)))
    assert rep.acc3ds == 1.0 and rep.outliers3d == 0.0


def test_length_mismatch():
    with pytest.raises(ShapeError):
        evaluate_3d(np.zeros((3, 3)), np.zeros((4, 3)))
    with pytest.raises(ShapeError):
        evaluate_3d(np.zeros((0, 3)), np.zeros((0, 3)))


@given(seeds)
def test_matches_oracle_and_nesting(seed):
    r = np.random.default_rng(seed)
    gt = r.normal(size=(50, 3)) * r.uniform(0.01, 2)
    pred = gt + r.normal(size=(50, 3)) * r.uniform(0.001, 0.5)
    rep = evaluate_3d(pred, gt)
    epe, acc_s, acc_r, out = oracles.metrics(pred, gt)
    assert rep.epe3d == pytest.approx(epe, rel=1e-12)
    assert (rep.acc3ds, rep.acc3dr, rep.outliers3d) == (acc_s, acc_r, out)
    assert 0 <= rep.acc3ds <= rep.acc3dr <= 1


@given(seeds)
def test_permutation_invariance(seed):
    r = np.random.default_rng(seed)
    gt, pred = r.normal(size=(40, 3)), r.normal(size=(40, 3))
    perm = r.permutation(40)
    a, b = evaluate_3d(pred, gt), evaluate_3d(pred[perm], gt[perm])
    assert a.epe3d == pytest.approx(b.epe3d, rel=1e-12)
    assert (a.acc3ds, a.acc3dr, a.outliers3d) == (b.acc3ds, b.acc3dr, b.outliers3d)


@given(seeds, st.floats(0.1, 10))
def test_scaling(seed, s):
    r = np.random.default_rng(seed)
    gt = r.normal(size=(40, 3))
    pred = gt + r.normal(size=(40, 3)) * 0.1
    a, b = evaluate_3d(pred, gt), evaluate_3d(s * pred, s * gt)
    assert b.epe3d == pytest.approx(s * a.epe3d, rel=1e-12)
    err = np.linalg.norm(pred - gt, axis=1)
    rel = err / np.linalg.norm(gt, axis=1)
    # relative-branch membership is scale free
    rel_scaled = np.linalg.norm(s * pred - s * gt, axis=1) / np.linalg.norm(s * gt, axis=1)
    for cut in (0.05, 0.1):
        np.testing.assert_array_equal(rel < cut, rel_scaled < cut * (1 + 1e-12))


def test_2d_perfect_and_on_axis():
    intr = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0)
    src = np.array([[0.0, 0.0, 1.0]])
    gt = np.array([[0.0, 0.0, 0.0]])
    assert evaluate_2d(gt, gt, src, intr) == (0.0, 1.0)
    epe, acc = evaluate_2d(np.array([[0.01, 0.0, 0.0]]), gt, src, intr)
    assert epe == pytest.approx(1.0, rel=1e-12)
    assert acc == 1.0
    wide = CameraIntrinsics(fx=200.0, fy=100.0, cx=50.0, cy=50.0)
    assert evaluate_2d(np.array([[0.01, 0.0, 0.0]]), gt, src, wide)[0] == pytest.approx(2.0, rel=1e-12)


def test_2d_behind_camera():
    intr = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0)
    src = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    with pytest.raises(BehindCameraError):
        evaluate_2d(np.array([[0, 0, 0.0], [0, 0, -2.0]]), np.zeros((2, 3)), src, intr)


def test_report_json_fields():
    pred, gt = four_point_fixture()
    d = evaluate(pred, gt).as_dict()
    assert set(d) == {"epe3d", "acc3ds", "acc3dr", "outliers3d", "n_points"}
    intr = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0)
    src = np.tile([0.0, 0.0, 5.0], (4, 1))
    d = evaluate(pred, gt, src, intr).as_dict()
    assert {"epe2d", "acc2d"} <= set(d)
    assert "EPE3D" in evaluate(pred, gt).table()
