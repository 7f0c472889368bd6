import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from egopose.core_math import (
    IDENTITY_6D,
    LATTICE,
    compose,
    is_rotation,
    matrix_to_rot6d,
    relative_rotation,
    rot6d_to_matrix,
    rot_z,
    rotation_angle,
    snap_to_lattice,
)
from egopose.errors import DegenerateInput

from oracles import random_rotations

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize("r6", [(1, 0, 0, 0, 1, 0), (2, 0, 0, 0, 3, 0)])
def test_rot6d_identity_cases(r6):
    np.testing.assert_allclose(rot6d_to_matrix(r6), np.eye(3), atol=1e-15)


def test_rot6d_swapped_axes_has_cross_product_third_column():
    R = rot6d_to_matrix([0, 1, 0, 1, 0, 0])
    # cross((0,1,0), (1,0,0)) = (0*0 - 0*0, 0*1 - 0*0, 0*0 - 1*1)
    columns = np.array([[0, 1, 0], [1, 0, 0], [0, 0, -1]], dtype=float)
    np.testing.assert_array_equal(R, columns.T)
    np.testing.assert_array_equal(R[:, 2], [0, 0, -1])
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("r6", [(0, 0, 0, 0, 1, 0), (1e-10, 0, 0, 0, 1, 0), (1, 2, 3, 2, 4, 6), (0, 0, 1, 0, 0, -5)])
def test_rot6d_degenerate_inputs(r6):
    with pytest.raises(DegenerateInput):
        rot6d_to_matrix(r6)


def test_matrix_to_rot6d_read_off():
    np.testing.assert_array_equal(matrix_to_rot6d(np.eye(3)), IDENTITY_6D)
    R = rot_z(np.pi / 2)
    np.testing.assert_array_equal(matrix_to_rot6d(R), np.concatenate([R[:, 0], R[:, 1]]))
    np.testing.assert_allclose(matrix_to_rot6d(R), [0, 1, 0, -1, 0, 0], atol=1e-15)


def test_round_trip_1000_rotations(rng):
    R = random_rotations(rng, 1000)
    back = rot6d_to_matrix(matrix_to_rot6d(R))
    assert np.max(np.abs(back - R)) < 1e-9
    assert is_rotation(back)


def test_compose_examples(rng):
    R = random_rotations(rng, 1)[0]
    np.testing.assert_allclose(compose(np.eye(3), R), R, atol=0)
    np.testing.assert_allclose(compose(R, R.T), np.eye(3), atol=1e-9)
    c = np.sqrt(0.5)
    yaw45 = np.array([[c, -c, 0], [c, c, 0], [0, 0, 1]])
    np.testing.assert_allclose(compose(yaw45, yaw45), [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)


def test_relative_rotation_examples(rng):
    R = random_rotations(rng, 1)[0]
    np.testing.assert_allclose(relative_rotation(R, R), np.eye(3), atol=1e-12)
    np.testing.assert_allclose(relative_rotation(np.eye(3), R), R, atol=0)
    d = relative_rotation(rot_z(np.radians(10)), rot_z(np.radians(25)))
    assert np.degrees(rotation_angle(d)) == pytest.approx(15.0, abs=1e-9)
    np.testing.assert_allclose(d, rot_z(np.radians(15)), atol=1e-12)


def test_compose_associative(rng):
    a, b, c = random_rotations(rng, 3)
    assert np.max(np.abs(compose(compose(a, b), c) - compose(a, compose(b, c)))) < 1e-9


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 6, elements=finite), st.floats(0.01, 100), st.floats(-5, 5))
def test_gram_schmidt_invariances(r6, scale, along):
    try:
        R = rot6d_to_matrix(r6)
    except DegenerateInput:
        return
    assert abs(np.linalg.det(R) - 1) < 1e-6
    assert is_rotation(R)
    first_dir = r6[:3] / np.linalg.norm(r6[:3])
    second = r6[3:] - (r6[3:] @ first_dir) * first_dir
    if np.linalg.norm(second) < 1e-3:
        return
    scaled = np.concatenate([r6[:3] * scale, r6[3:]])
    shifted = np.concatenate([r6[:3], r6[3:] + along * r6[:3]])
    np.testing.assert_allclose(rot6d_to_matrix(scaled), R, atol=1e-9)
    np.testing.assert_allclose(rot6d_to_matrix(shifted), R, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_operations_preserve_determinant(seed):
    a, b = random_rotations(np.random.default_rng(seed), 2)
    for R in (compose(a, b), relative_rotation(a, b), rot6d_to_matrix(matrix_to_rot6d(a))):
        assert abs(np.linalg.det(R) - 1) < 1e-6


def test_lattice_snapping_makes_shifts_exact(rng):
    p = snap_to_lattice(rng.uniform(-3, 3, size=(100, 3)))
    assert np.all(np.round(p / LATTICE) * LATTICE == p)
    for d in (2.0, 5.0, 10.0, 50.0):
        q = p + d
        np.testing.assert_array_equal(q - d, p)
        np.testing.assert_array_equal(np.diff(q, axis=0), np.diff(p, axis=0))
