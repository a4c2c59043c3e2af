"""Quaternion/transform math against scipy oracles and algebraic
properties."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from batchsim.spatial import (cross3, quat_conjugate, quat_exp_map,
                              quat_from_axis_angle, quat_from_matrix,
                              quat_log_map, quat_mul, quat_normalize,
                              quat_rotate, quat_rotate_inverse,
                              quat_to_matrix, rot_dist)


def random_quats(n, seed=0):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def test_quat_mul_matches_scipy():
    qa, qb = random_quats(200, 1), random_quats(200, 2)
    got = quat_mul(qa, qb)
    want = (Rotation.from_quat(qa) * Rotation.from_quat(qb)).as_quat()
    sign = np.sign(np.sum(got * want, axis=-1, keepdims=True))
    assert np.max(np.abs(got - want * sign)) < 1e-12


def test_quat_rotate_matches_scipy():
    q = random_quats(200, 3)
    rng = np.random.default_rng(4)
    v = rng.normal(size=(200, 3))
    assert np.max(np.abs(quat_rotate(q, v)
                         - Rotation.from_quat(q).apply(v))) < 1e-12
    assert np.max(np.abs(quat_rotate_inverse(q, v)
                         - Rotation.from_quat(q).apply(v, inverse=True))) \
        < 1e-12


def test_quat_to_matrix_roundtrip():
    q = random_quats(500, 5)
    m = quat_to_matrix(q)
    assert np.max(np.abs(m - Rotation.from_quat(q).as_matrix())) < 1e-12
    back = quat_from_matrix(m)
    sign = np.sign(np.sum(back * q, axis=-1, keepdims=True))
    assert np.max(np.abs(back - q * sign)) < 1e-9


def test_exp_log_inverse():
    rng = np.random.default_rng(6)
    v = rng.normal(0, 0.8, size=(300, 3))
    assert np.max(np.abs(quat_log_map(quat_exp_map(v)) - v)) < 1e-10


def test_axis_angle():
    q = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), np.pi / 2)
    got = quat_rotate(q[None], np.array([[1.0, 0.0, 0.0]]))[0]
    assert np.max(np.abs(got - [0.0, 1.0, 0.0])) < 1e-12


def test_rot_dist_matches_matrix_log_oracle():
    qa, qb = random_quats(10_000, 7), random_quats(10_000, 8)
    got = rot_dist(qa, qb)
    R = Rotation.from_quat(qa).as_matrix() @ \
        Rotation.from_quat(qb).as_matrix().swapaxes(-1, -2)
    tr = np.clip((np.einsum("nii->n", R) - 1.0) / 2.0, -1.0, 1.0)
    want = np.arccos(tr)
    assert np.max(np.abs(got - want)) < 1e-6


def test_rot_dist_identity_and_pi():
    e = np.array([[0.0, 0.0, 0.0, 1.0]])
    flip = np.array([[1.0, 0.0, 0.0, 0.0]])  # pi about x
    assert rot_dist(e, e)[0] == 0.0
    assert abs(rot_dist(e, flip)[0] - np.pi) < 1e-12
    # q and -q are the same rotation
    assert rot_dist(e, -e)[0] < 1e-12


def test_cross3_matches_numpy():
    rng = np.random.default_rng(9)
    a, b = rng.normal(size=(100, 3)), rng.normal(size=(100, 3))
    assert np.max(np.abs(cross3(a, b) - np.cross(a, b))) < 1e-15


finite3 = st.lists(
    st.floats(-10, 10, allow_nan=False, allow_infinity=False),
    min_size=3, max_size=3)
quat4 = st.lists(
    st.floats(-1, 1, allow_nan=False, allow_infinity=False),
    min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 1e-3)


@settings(max_examples=200, deadline=None)
@given(quat4, finite3)
def test_rotation_preserves_norm(q, v):
    q = quat_normalize(np.asarray([q]))
    v = np.asarray([v])
    assert abs(np.linalg.norm(quat_rotate(q, v))
               - np.linalg.norm(v)) < 1e-9


@settings(max_examples=200, deadline=None)
@given(quat4)
def test_normalize_idempotent_and_conjugate_inverts(q):
    q = quat_normalize(np.asarray([q]))
    assert np.max(np.abs(quat_normalize(q) - q)) < 1e-12
    ident = quat_mul(q, quat_conjugate(q))
    assert np.max(np.abs(ident - [[0.0, 0.0, 0.0, 1.0]])) < 1e-12


@settings(max_examples=100, deadline=None)
@given(quat4, quat4, finite3)
def test_mul_then_rotate_composes(qa, qb, v):
    qa = quat_normalize(np.asarray([qa]))
    qb = quat_normalize(np.asarray([qb]))
    v = np.asarray([v])
    lhs = quat_rotate(quat_mul(qa, qb), v)
    rhs = quat_rotate(qa, quat_rotate(qb, v))
    assert np.max(np.abs(lhs - rhs)) < 1e-9
