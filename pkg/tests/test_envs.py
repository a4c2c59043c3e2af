"""Env batch behavior: decimation equivalence, auto-reset, poisoning,
determinism, task registry."""

import numpy as np
import pytest

from batchsim.envs import ALL, EnvConfig, make_env, TASKS


def fixed_actions(env, scale=0.3):
    rng = np.random.default_rng(42)
    return scale * rng.uniform(-1, 1, (env.config.num_envs, env.act_dim))


def test_registry_names():
    assert set(TASKS) == {"cartpole", "flyer", "quadruped",
                          "quadruped-anymal-obs"}
    with pytest.raises(KeyError):
        make_env("nope")


def test_config_rejects_non_integer_decimation():
    with pytest.raises(ValueError):
        EnvConfig(sim_dt=1 / 120, control_dt=1 / 100).validate()
    assert EnvConfig(sim_dt=1 / 120, control_dt=1 / 60).decimation == 2


@pytest.mark.parametrize("name", sorted(TASKS))
def test_obs_shapes_and_reset(name):
    env = make_env(name, num_envs=3, seed=1)
    obs = env.reset()
    assert obs.shape == (3, env.obs_dim)
    assert np.isfinite(obs).all()
    out = env.step(np.zeros((3, env.act_dim)))
    assert out.obs.shape == (3, env.obs_dim)
    assert out.reward.shape == (3,)
    assert out.done.shape == (3,)


def test_decimated_step_equals_manual_substeps():
    a = make_env("quadruped", num_envs=2, seed=7)
    b = make_env("quadruped", num_envs=2, seed=7)
    act = fixed_actions(a)
    a.step(act)
    b.actions = np.clip(act, -1, 1)
    b._apply_actions(b.actions)
    for _ in range(b.config.decimation):
        b.sim.step()
    for k in ("pos", "quat", "linvel", "angvel", "dof_state"):
        assert np.array_equal(getattr(a.scene, k), getattr(b.scene, k)), k


def test_same_seed_same_trajectory():
    a = make_env("cartpole", num_envs=4, seed=5)
    b = make_env("cartpole", num_envs=4, seed=5)
    act = fixed_actions(a)
    for _ in range(30):
        oa = a.step(act)
        ob = b.step(act)
    assert np.array_equal(oa.obs, ob.obs)
    assert np.array_equal(oa.reward, ob.reward)


def test_auto_reset_returns_fresh_obs():
    env = make_env("cartpole", num_envs=3, seed=0)
    # tip env 1 past the angle limit
    dof = env.scene.dof_state.copy()
    view = dof.reshape(3, 2, 2)
    view[1, 1, 0] = 2.0
    env.buffers.set_dof_state(dof, [1])
    out = env.step(np.zeros((3, 1)))
    assert out.done[1] and not out.done[0] and not out.done[2]
    assert env.episode_steps[1] == 0 and env.episode_steps[0] == 1
    # obs row 1 is post-reset: back inside the spawn distribution
    # (pole angle U[-0.8, 0.8], cart position U[-1, 1])
    assert abs(out.obs[1, 2]) <= 0.8
    assert abs(out.obs[1, 0]) <= 1.0


def test_no_done_carryover():
    env = make_env("cartpole", num_envs=2, seed=0)
    dof = env.scene.dof_state.copy()
    dof.reshape(2, 2, 2)[0, 1, 0] = 2.0
    env.buffers.set_dof_state(dof, [0])
    out1 = env.step(np.zeros((2, 1)))
    assert out1.done[0]
    out2 = env.step(np.zeros((2, 1)))
    assert not out2.done[0]


def test_timeout_sets_done():
    env = make_env("cartpole", num_envs=2, seed=0, episode_length=3)
    for i in range(3):
        out = env.step(np.zeros((2, 1)))
    assert out.done.all()
    assert out.info["timeout"].all()


def test_poisoned_env_is_reset_and_masked():
    env = make_env("cartpole", num_envs=3, seed=0)
    env.scene.nonfinite[1] = True
    out = env.step(np.zeros((3, 1)))
    assert out.done[1]
    assert out.reward[1] == 0.0
    assert out.info["poisoned"][1]
    assert not env.scene.nonfinite[1]
    assert np.isfinite(out.obs).all()


def test_action_clamping():
    env = make_env("cartpole", num_envs=2, seed=0)
    env.step(np.full((2, 1), 100.0))
    assert np.all(env.actions == 1.0)
    with pytest.raises(ValueError):
        env.step(np.zeros((3, 1)))


def test_cartpole_obs_matches_dof_state():
    env = make_env("cartpole", num_envs=2, seed=0)
    out = env.step(np.full((2, 1), 0.5))
    d = env.scene.dof_state.reshape(2, 2, 2)
    want = np.stack([d[:, 0, 0], d[:, 0, 1], d[:, 1, 0], d[:, 1, 1]], axis=-1)
    assert np.array_equal(out.obs, want)


def test_flyer_zero_action_near_hover():
    env = make_env("flyer", num_envs=2, seed=0)
    z0 = env.local_root()[:, 2].copy()
    for _ in range(50):
        env.step(np.zeros((2, 6)))
    z1 = env.local_root()[:, 2]
    assert np.all(np.abs(z1 - z0) < 0.05)


def test_flyer_goal_teleports_on_schedule():
    env = make_env("flyer", num_envs=1, seed=0, episode_length=10_000)
    period = int(round(env.goal_period_s / env.config.control_dt))
    start = env.targets.copy()
    for _ in range(period - 1):
        env.step(np.zeros((1, 6)))
    assert np.array_equal(env.targets, start)
    env.step(np.zeros((1, 6)))
    assert not np.array_equal(env.targets, start)


def test_quadruped_termination_height():
    env = make_env("quadruped", num_envs=2, seed=0)
    root = env.scene.root_state.copy()
    root[0, 2] = 0.1  # drop torso below 0.26
    env.buffers.set_root_state(root, [0])
    out = env.step(np.zeros((2, 8)))
    assert out.done[0] and not out.done[1]


def test_quadruped_obs_layout():
    env = make_env("quadruped", num_envs=2, seed=3)
    obs = env.reset()
    # spawn: near rest height, nearly level, heading along +x to target
    assert np.all(np.abs(obs[:, 0] - 0.37) < 0.05)   # height
    assert np.all(obs[:, 10] > 0.9)                  # up projection
    assert np.all(obs[:, 11] > 0.9)                  # heading projection
    act = fixed_actions(env)
    out = env.step(act)
    assert np.array_equal(out.obs[:, 52:60], env.actions)


def test_anymal_obs_commands_constant_within_episode():
    env = make_env("quadruped-anymal-obs", num_envs=2, seed=0)
    obs1 = env.reset()
    cmd = obs1[:, 9:12].copy()
    assert np.all(np.abs(cmd) <= 1.0)
    out = env.step(np.zeros((2, 12)))
    assert np.array_equal(out.obs[:, 9:12], cmd)


def test_obs_noise_applied():
    clean = make_env("cartpole", num_envs=2, seed=0)
    noisy = make_env("cartpole", num_envs=2, seed=0, obs_noise=True)
    oc = clean.step(np.zeros((2, 1))).obs
    on = noisy.step(np.zeros((2, 1))).obs
    assert not np.array_equal(oc, on)
    assert np.max(np.abs(oc - on)) < 0.05


def test_randomize_flag_changes_dynamics():
    base = make_env("quadruped", num_envs=2, seed=0)
    rand = make_env("quadruped", num_envs=2, seed=0, randomize=True)
    assert np.array_equal(base.scene.gravity[0], base.scene.gravity[1])
    assert not np.array_equal(rand.scene.gravity[0], rand.scene.gravity[1])


def test_indexed_reset_isolation():
    env = make_env("quadruped", num_envs=3, seed=0)
    for _ in range(5):
        env.step(fixed_actions(env))
    before = {k: getattr(env.scene, k).copy()
              for k in ("pos", "quat", "dof_state")}
    env.reset([1])
    B = env.scene.bodies_per_env
    D = env.scene.dofs_per_env
    keep_b = np.ones(env.scene.num_bodies, dtype=bool)
    keep_b[B:2 * B] = False
    keep_d = np.ones(env.scene.num_dofs, dtype=bool)
    keep_d[D:2 * D] = False
    assert np.array_equal(before["pos"][keep_b], env.scene.pos[keep_b])
    assert np.array_equal(before["quat"][keep_b], env.scene.quat[keep_b])
    assert np.array_equal(before["dof_state"][keep_d],
                          env.scene.dof_state[keep_d])
    assert not np.array_equal(before["pos"][B:2 * B],
                              env.scene.pos[B:2 * B])
