import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egopose.core_math import rot_z
from egopose.fov import PRESETS, FovConfig, is_in_fov, random_mask, to_head_frame, visibility_mask, visible_fraction
from egopose.ingest import ThreePointTrack, extract_three_point

from oracles import random_rotations


def test_to_head_frame_examples():
    h = np.array([1.0, 2.0, 1.6])
    np.testing.assert_array_equal(to_head_frame(h, np.eye(3), h), 0)
    np.testing.assert_array_equal(to_head_frame(np.zeros(3), np.eye(3), [1, 2, 3]), [1, 2, 3])
    # yawed 90 degrees: gaze points along world +y
    np.testing.assert_allclose(to_head_frame(h, rot_z(np.pi / 2), h + [0, 1, 0]), [1, 0, 0], atol=1e-15)


@pytest.mark.parametrize("cfg", list(PRESETS.values()) + [FovConfig(10, 5)])
def test_straight_ahead_and_behind(cfg):
    assert is_in_fov(cfg, [1, 0, 0]) is True
    assert is_in_fov(cfg, [-1, 0, 0]) is False


def test_boundary_is_inclusive():
    assert is_in_fov(FovConfig(90, 90), [1, 1, 0]) is True
    assert is_in_fov(FovConfig(90, 90), [1, 0, 1]) is True
    assert is_in_fov(FovConfig(90, 90), [1, 1.001, 0]) is False


def test_config_validation():
    for h, v in ((0, 90), (360, 90), (90, 0), (90, 180)):
        with pytest.raises(ValueError):
            FovConfig(h, v)
    assert FovConfig.symmetric(180) == PRESETS["fisheye180"]


def _track(head_p, head_R, hands):
    F = len(head_p)
    pos = np.concatenate([head_p[:, None], hands], axis=1)
    ori = np.repeat(head_R[:, None], 3, axis=1)
    return ThreePointTrack(60.0, pos, ori, np.ones((F, 2), bool))


def test_wide_fov_keeps_front_hemisphere_only():
    head = np.zeros((3, 3))
    R = np.tile(np.eye(3), (3, 1, 1))
    hands = np.array([[[0.5, 0.3, -0.4], [-0.3, 0.2, 0.0]],
                      [[0.01, 5.0, 0.0], [0.2, -1.0, 1.0]],
                      [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]])
    mask = visibility_mask(FovConfig(359.9, 179.9), _track(head, R, hands))
    np.testing.assert_array_equal(mask, [[True, False], [True, True], [False, False]])


def test_reach_sequence_in_band(skel, reach_seq):
    frac = visible_fraction(visibility_mask(PRESETS["quest2"], extract_three_point(reach_seq, skel)))
    assert 0.1 <= 1 - frac <= 0.9


def test_presets_are_nested(skel, reach_seq, walk_seq):
    for seq in (reach_seq, walk_seq):
        track = extract_three_point(seq, skel)
        counts = [visibility_mask(PRESETS[k], track).sum() for k in ("fisheye180", "quest2", "hololens2")]
        assert counts[0] >= counts[1] >= counts[2]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.floats(1, 359), st.floats(1, 179),
       st.floats(0, 50), st.floats(0, 50))
def test_enlarging_fov_never_hides(p, h, v, dh, dv):
    small = FovConfig(h, v)
    big = FovConfig(min(h + dh, 359.99), min(v + dv, 179.99))
    if is_in_fov(small, p):
        assert is_in_fov(big, p)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    head_p = rng.uniform(-2, 2, size=(50, 3))
    head_R = random_rotations(rng, 50)
    local = rng.uniform(-1, 1, size=(50, 2, 3))
    hands = head_p[:, None] + np.einsum("fab,fhb->fha", head_R, local)
    cfg = FovConfig(rng.uniform(30, 200), rng.uniform(30, 170))
    base = visibility_mask(cfg, _track(head_p, head_R, hands))
    W = random_rotations(rng, 1)[0]
    t = rng.uniform(-10, 10, 3)
    moved = _track(head_p @ W.T + t, W @ head_R, hands @ W.T + t)
    m = visibility_mask(cfg, moved)
    # only points within round-off of a boundary may flip
    ang = np.stack([np.abs(np.arctan2(local[..., 1], local[..., 0])) - np.radians(cfg.alpha_h) / 2,
                    np.abs(np.arctan2(local[..., 2], local[..., 0])) - np.radians(cfg.alpha_v) / 2])
    safe = (np.abs(ang) > 1e-9).all(axis=0) & (np.abs(local[..., 0]) > 1e-9)
    np.testing.assert_array_equal(m[safe], base[safe])


def test_random_mask():
    assert random_mask(0.0, 1, 1000).all()
    assert not random_mask(1.0, 1, 1000).any()
    m = random_mask(0.2, 42, 100_000)
    assert m.shape == (100_000, 2)
    assert abs((1 - m.mean()) - 0.2) <= 0.01
    np.testing.assert_array_equal(m, random_mask(0.2, 42, 100_000))
    with pytest.raises(ValueError):
        random_mask(1.5, 0, 10)
