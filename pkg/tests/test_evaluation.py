import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from egopose.errors import MissingWeights, ShapeMismatch
from egopose.evaluation import (
    METRICS,
    aggregate,
    body_dimension_errors,
    evaluate,
    evaluate_sequence,
    floating_feet,
    fov_strategy_compare,
    ground_penetration,
    mpjpe,
    mpjve,
    mve,
    offset_sweep,
    shape_strategy_compare,
)
from egopose.network import ModelConfig, PoseNet
from egopose.skeleton import NUM_BETAS

from oracles import ff_brute_force, gp_brute_force

TINY = ModelConfig(tau=8, embed_dim=8, num_layers=1, num_heads=2, mlp_hidden=16)


def test_mpjpe_examples(rng):
    gt = rng.normal(size=(5, 22, 3))
    assert mpjpe(gt, gt) == 0.0
    assert mpjpe(gt + [0.01, 0, 0], gt) == pytest.approx(1.0, abs=1e-9)
    pred = gt.copy()
    pred[2, 7, 1] += 0.22
    assert mpjpe(pred, gt) == pytest.approx(22 / (22 * 5), abs=1e-9)
    with pytest.raises(ShapeMismatch):
        mpjpe(gt, gt[:4])


def test_mpjve_examples(rng):
    gt = rng.normal(size=(6, 22, 3))
    assert mpjve(gt, gt, 60) == 0.0
    assert mpjve(gt + 0.3, gt, 60) == pytest.approx(0.0, abs=1e-9)
    static = np.zeros((6, 22, 3))
    drift = static + np.arange(6)[:, None, None] * np.array([0.01, 0, 0])
    assert mpjve(drift, static, 60) == pytest.approx(60.0, abs=1e-9)
    with pytest.raises(ShapeMismatch):
        mpjve(gt[:1], gt[:1], 60)


def test_mve_examples(rng):
    gt = rng.normal(size=(4, 51, 3))
    assert mve(gt, gt) == 0.0
    assert mve(gt + [0, 0.02, 0], gt) == pytest.approx(2.0, abs=1e-9)
    pred = gt.copy()
    pred[1, 3, 2] += 0.5
    assert mve(pred, gt) == pytest.approx(50 / (51 * 4), abs=1e-9)


def test_ground_metric_examples():
    above = np.abs(np.random.default_rng(0).normal(size=(3, 10, 3))) + 0.001
    assert ground_penetration(above) == 0.0
    frame = np.zeros((1, 2, 3))
    frame[0, :, 2] = [-0.01, -0.03]
    assert ground_penetration(frame) == pytest.approx(2.0, abs=1e-12)
    grounded = np.zeros((4, 5, 3))
    grounded[:, 1:, 2] = 1.0
    assert floating_feet(grounded) == 0.0
    floating = grounded.copy()
    floating[:, 0, 2] = 0.05
    assert floating_feet(floating) == pytest.approx(5.0, abs=1e-12)
    mixed = floating.copy()
    mixed[0, 2, 2] = -0.04
    assert floating_feet(mixed) == pytest.approx(5.0, abs=1e-12)
    assert ground_penetration(mixed) == pytest.approx(4.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8), st.just(3)),
              elements=st.floats(-1, 1, allow_nan=False)))
def test_ground_metrics_match_brute_force(v):
    assert ground_penetration(v) == gp_brute_force(v)
    assert floating_feet(v) == ff_brute_force(v)
    assert ground_penetration(v) >= 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_translation_invariance_of_errors(seed):
    rng = np.random.default_rng(seed)
    p, g = rng.normal(size=(2, 5, 22, 3))
    t = rng.normal(size=3) * 10
    assert mpjpe(p + t, g + t) == pytest.approx(mpjpe(p, g), rel=1e-9)
    assert mpjve(p + t, g + t, 60) == pytest.approx(mpjve(p, g, 60), rel=1e-9)


def test_body_dimension_errors(skel):
    zero = np.zeros(NUM_BETAS)
    assert body_dimension_errors(zero, zero, skel) == (0.0, 0.0)
    one = np.eye(NUM_BETAS)[0]  # +5% on every offset
    h, a = body_dimension_errors(one, zero, skel)
    assert h == pytest.approx(0.05 * 170.0, abs=1e-9)
    assert a == pytest.approx(0.05 * 51.0, abs=1e-9)
    inactive = np.zeros(NUM_BETAS)
    inactive[3:] = 2.5
    assert body_dimension_errors(inactive, zero, skel) == (0.0, 0.0)


def test_aggregate_is_frame_weighted():
    rows = [dict({m: 1.0 for m in METRICS}, frames=10), dict({m: 4.0 for m in METRICS}, frames=30)]
    agg = aggregate(rows)
    assert agg["frames"] == 40 and agg["mpjpe"] == pytest.approx(3.25)


@pytest.fixture(scope="module")
def tiny_net():
    return PoseNet(TINY).eval()


def test_evaluate_sequence_metrics_are_sane(tiny_net, walk_seq, skel):
    for strategy in ("mean", "calib", "estimate"):
        row = evaluate_sequence(tiny_net, walk_seq, skel, shape_strategy=strategy)
        assert row["frames"] == walk_seq.n_frames - TINY.tau + 1
        assert all(row[m] >= 0 for m in METRICS)
    with pytest.raises(ValueError):
        evaluate_sequence(tiny_net, walk_seq, skel, shape_strategy="guess")


def test_offset_sweep_is_flat(tiny_net, walk_seq, reach_seq, skel):
    rep = offset_sweep(tiny_net, [walk_seq, reach_seq], skel)
    assert [r["offset_m"] for r in rep.offsets] == [0, 2, 5, 10, 50]
    for r in rep.offsets:
        for m in METRICS:
            assert round(r[m], 6) == round(rep.offsets[0][m], 6)
    plain = evaluate(tiny_net, [walk_seq, reach_seq], skel)
    for m in METRICS:
        assert rep.offsets[0][m] == plain.aggregate[m]


def test_report_files(tiny_net, walk_seq, skel, tmp_path):
    rep = evaluate(tiny_net, [walk_seq], skel)
    rep.to_json(tmp_path / "r.json")
    rep.to_csv(tmp_path / "r.csv")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["aggregate"]["mpjpe"] == rep.aggregate["mpjpe"]
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert rows[-1]["sequence"] == "ALL" and len(rows) == 2


def test_fov_strategy_grid(tiny_net, reach_seq, skel):
    nets = {"full": tiny_net, "random": tiny_net, "fov": tiny_net}
    rows = fov_strategy_compare(nets, [reach_seq], skel)
    assert len(rows) == 9 and {(r["strategy"], r["fov_deg"]) for r in rows} == {
        (s, a) for s in nets for a in (180.0, 120.0, 90.0)}
    assert all(set(r) == {"strategy", "fov_deg", "mpjpe", "mpjve"} for r in rows)
    assert rows == fov_strategy_compare(nets, [reach_seq], skel)
    with pytest.raises(MissingWeights):
        fov_strategy_compare({"full": tiny_net}, [reach_seq], skel)


def test_shape_strategy_rows(tiny_net, walk_seq, skel):
    rows = shape_strategy_compare({"mean": tiny_net, "calib": tiny_net, "estimate": tiny_net}, [walk_seq], skel)
    assert [r["strategy"] for r in rows] == ["mean", "calib", "estimate"]
    # calibration recovers the true size of a beta[0]-only subject exactly
    assert rows[1]["height_err"] == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(MissingWeights):
        shape_strategy_compare({"mean": tiny_net}, [walk_seq], skel)
