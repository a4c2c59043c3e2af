"""Tensor-API facade: error contract, aliasing, indexed isolation."""

import numpy as np
import pytest

from batchsim import models as M
from batchsim.buffers import (IndexOutOfRange, ModeMismatch, NonFiniteWrite,
                              ShapeMismatch, SimBuffers, UnknownKind)
from batchsim.physics import Scene, SimParams


def quad_scene(E=4):
    s = Scene([M.quadruped()], E, SimParams(dt=1 / 120))
    return s, SimBuffers(s)


def test_acquire_aliases_canonical_storage():
    s, buf = quad_scene()
    assert buf.acquire("root_state") is s.root_state
    assert buf.acquire("dof_state") is s.dof_state
    assert buf.acquire("body_state") is s.body_state
    ctrl = buf.acquire("controls")
    assert ctrl["dof_pos_target"] is s.ctrl_dof_pos_target


def test_unknown_kind():
    _, buf = quad_scene(1)
    with pytest.raises(UnknownKind):
        buf.acquire("bogus")
    with pytest.raises(UnknownKind):
        buf.submit_controls("bogus", np.zeros(1))


def test_shape_mismatch():
    s, buf = quad_scene(2)
    with pytest.raises(ShapeMismatch):
        buf.set_root_state(np.zeros((3, 13)))
    with pytest.raises(ShapeMismatch):
        buf.submit_controls("dof_force", np.zeros(s.num_dofs + 1))


def test_index_out_of_range():
    s, buf = quad_scene(2)
    with pytest.raises(IndexOutOfRange):
        buf.set_root_state(s.root_state.copy(), [s.num_actors])
    with pytest.raises(IndexOutOfRange):
        buf.set_dof_state(s.dof_state.copy(), [-3])


def test_non_finite_write_rejected():
    s, buf = quad_scene(2)
    bad = s.root_state.copy()
    bad[0, 7] = np.nan
    with pytest.raises(NonFiniteWrite):
        buf.set_root_state(bad, [0])
    degenerate = s.root_state.copy()
    degenerate[1, 3:7] = 0.0
    with pytest.raises(NonFiniteWrite):
        buf.set_root_state(degenerate, [1])
    # untouched rows may carry junk without tripping the check
    elsewhere = s.root_state.copy()
    elsewhere[1, 0] = np.inf
    buf.set_root_state(elsewhere, [0])


def test_mode_mismatch():
    s, buf = quad_scene(1)  # position-mode drives
    with pytest.raises(ModeMismatch):
        buf.submit_controls("dof_force", np.zeros(s.num_dofs))
    c = Scene([M.cartpole()], 1, SimParams(dt=1 / 120))
    cbuf = SimBuffers(c)
    with pytest.raises(ModeMismatch):
        cbuf.submit_controls("dof_pos_target", np.zeros(c.num_dofs))
    cbuf.submit_controls("dof_force", np.ones(c.num_dofs))
    assert np.all(c.ctrl_dof_force == 1.0)


def test_teleport_preserves_dof_pose():
    s, buf = quad_scene(2)
    dof = s.dof_state.copy()
    dof[:, 0] = 0.3
    buf.set_dof_state(dof)
    q_before = s.dof_state[:, 0].copy()
    root = s.root_state.copy()
    root[0, 0:3] += [1.0, 2.0, 0.5]
    buf.set_root_state(root, [0])
    assert np.array_equal(s.dof_state[:, 0], q_before)
    assert np.allclose(s.root_state[0, 0:3] - s.env_origins[0],
                       root[0, 0:3] - s.env_origins[0])


def test_set_dof_state_leaves_root_untouched():
    s, buf = quad_scene(2)
    root_before = s.root_state.copy()
    dof = s.dof_state.copy()
    dof[:, 0] = 0.2
    buf.set_dof_state(dof, [1])
    assert np.array_equal(s.root_state, root_before)


def test_pendulum_dof_write_moves_bob():
    s = Scene([M.pendulum()], 1, SimParams(dt=1 / 120), ground=False)
    buf = SimBuffers(s)
    dof = s.dof_state.copy()
    dof[0, 0] = np.pi / 2
    buf.set_dof_state(dof)
    assert abs(abs(s.pos[1, 0]) - 0.5) < 1e-12
    assert abs(s.pos[1, 2]) < 1e-12


WATCHED = ("pos", "quat", "linvel", "angvel", "dof_state", "root_state",
           "body_state")


def complement_checksums(s, envs):
    B, D, A = s.bodies_per_env, s.dofs_per_env, s.actors_per_env
    keep = {"body": np.ones(s.num_bodies, dtype=bool),
            "dof": np.ones(s.num_dofs, dtype=bool),
            "actor": np.ones(s.num_actors, dtype=bool)}
    for e in envs:
        keep["body"][e * B:(e + 1) * B] = False
        keep["dof"][e * D:(e + 1) * D] = False
        keep["actor"][e * A:(e + 1) * A] = False
    domain = {"pos": "body", "quat": "body", "linvel": "body",
              "angvel": "body", "body_state": "body", "dof_state": "dof",
              "root_state": "actor"}
    return {k: getattr(s, k)[keep[domain[k]]].tobytes() for k in WATCHED}


def test_indexed_isolation_random_sets():
    s, buf = quad_scene(8)
    rng = np.random.default_rng(0)
    for _ in range(10):
        s.ctrl_dof_pos_target[:] = rng.uniform(-0.3, 0.3, s.num_dofs)
        s.step()
    for trial in range(100):
        k = rng.integers(1, 5)
        envs = rng.choice(8, size=k, replace=False)
        before = complement_checksums(s, envs)
        if trial % 2 == 0:
            root = s.root_state.copy()
            root[envs, 0:3] = s.env_origins[envs] + rng.uniform(
                [-1, -1, 0.3], [1, 1, 0.6], (k, 3))
            root[envs, 7:13] = rng.uniform(-0.5, 0.5, (k, 6))
            buf.set_root_state(root, envs)
        else:
            dof = s.dof_state.copy()
            view = dof.reshape(8, -1, 2)
            view[envs] = rng.uniform(-0.5, 0.5, view[envs].shape)
            buf.set_dof_state(dof, envs)
        after = complement_checksums(s, envs)
        assert before == after, f"trial {trial} touched complement rows"
