"""Vectorized RL environments over batched scenes.

Each task owns one articulation per env. Control runs at an integer
multiple of the sim step (decimation); actions are clamped to [-1, 1],
scaled, and held constant across the sub-steps. Finished envs are reset
in place through the indexed buffer setters before observations are
returned, so policies never see a stale terminal state.
"""

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import models as M
from .buffers import SimBuffers
from .parallel import ShardedScene
from .physics import Scene, SimParams
from .randomize import (DEFAULT_SCHEDULE, DomainRandomizer,
                        perturb_observations, sample_correlated_noise)
from .rewards import (LocomotionRewardParams, AnymalRewardParams,
                      anymal_reward, ingenuity_reward, locomotion_reward)
from .spatial import quat_rotate, quat_rotate_inverse

ALL = None


def dof_limits(model):
    """Per-DOF (lower, upper) arrays; unlimited DOFs get +-inf."""
    lo, hi = [], []
    for j in model.joints:
        for _ in range(j.dof_count):
            lo.append(j.limits[0] if j.limits else -np.inf)
            hi.append(j.limits[1] if j.limits else np.inf)
    return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


@dataclass
class EnvConfig:
    num_envs: int = 16
    seed: int = 0
    sim_dt: float = 1.0 / 120.0
    control_dt: float = 1.0 / 60.0
    episode_length: int = 1000
    workers: int = 1
    randomize: bool = False
    obs_noise: bool = False
    obs_noise_uncorr: float = 0.002
    obs_noise_corr: float = 0.001
    extra: dict = field(default_factory=dict)

    def validate(self):
        if self.num_envs < 1:
            raise ValueError("num_envs must be >= 1")
        ratio = self.control_dt / self.sim_dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError(
                "control_dt must be a positive integer multiple of sim_dt")
        return self

    @property
    def decimation(self):
        return int(round(self.control_dt / self.sim_dt))


class StepOutput(NamedTuple):
    obs: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    info: dict


class EnvBatch:
    """Base class: scene construction, decimated stepping, auto-reset,
    optional domain randomization and observation noise."""

    name = "base"
    obs_dim = 0
    act_dim = 0

    def __init__(self, config: EnvConfig):
        self.config = config.validate()
        E = config.num_envs
        params = self._sim_params()
        model = self._model()
        if config.workers > 1:
            self.sim = ShardedScene([model], E, params,
                                    workers=config.workers)
            self.scene = self.sim.scene
        else:
            self.sim = self.scene = Scene([model], E, params)
        self.buffers = SimBuffers(self.scene)
        self.model = model
        self.randomizer = (DomainRandomizer(self.scene, DEFAULT_SCHEDULE,
                                            seed=config.seed)
                           if config.randomize else None)
        self._rng = np.random.default_rng([config.seed, 0xE7])
        self.episode_steps = np.zeros(E, dtype=np.int64)
        self.reset_count = np.zeros(E, dtype=np.int64)
        self.actions = np.zeros((E, self.act_dim))
        self._corr_noise = np.zeros((E, self.obs_dim))
        self.reset()

    # -------------------------------------------------- task hooks

    def _model(self):
        raise NotImplementedError

    def _sim_params(self):
        raise NotImplementedError

    def _apply_actions(self, actions):
        raise NotImplementedError

    def _reset_envs(self, envs, rngs):
        """Write reset states for the given env rows through the buffer
        setters. rngs[i] is the per-env stream for envs[i]."""
        raise NotImplementedError

    def _compute_obs(self):
        raise NotImplementedError

    def _compute_reward_done(self):
        """Returns (reward, done) before timeout/poison handling."""
        raise NotImplementedError

    # -------------------------------------------------- shared machinery

    def _env_rng(self, e):
        # keyed (seed, env, episode) so resets are reproducible regardless
        # of grouping or worker count
        return np.random.default_rng(
            [self.config.seed, int(e), int(self.reset_count[e])])

    def local_root(self):
        """Root states with env origins removed from the position."""
        root = self.scene.root_state.copy()
        root[:, 0:3] -= self.scene.env_origins
        return root

    def dof_view(self):
        E = self.config.num_envs
        return self.scene.dof_state.reshape(E, -1, 2)

    def reset(self, env_indices=ALL):
        E = self.config.num_envs
        envs = (np.arange(E) if env_indices is None
                else np.atleast_1d(np.asarray(env_indices, dtype=np.int64)))
        if envs.size == 0:
            return self._observe()
        poisoned = envs[self.scene.nonfinite[envs]]
        if poisoned.size:
            self.scene.clear_nonfinite(poisoned)
        if self.randomizer is not None:
            self.randomizer.randomize(envs, self.scene.step_count)
        rngs = [self._env_rng(e) for e in envs]
        self._reset_envs(envs, rngs)
        self.episode_steps[envs] = 0
        self.reset_count[envs] += 1
        self.actions[envs] = 0.0
        if self.config.obs_noise:
            for e, rng in zip(envs, rngs):
                self._corr_noise[e] = sample_correlated_noise(
                    self.obs_dim, self.config.obs_noise_corr, rng)
        self._post_reset(envs)
        return self._observe()

    def _post_reset(self, envs):
        pass

    def _observe(self):
        obs = self._compute_obs()
        if self.config.obs_noise:
            obs = perturb_observations(obs, self.config.obs_noise_uncorr,
                                       self._corr_noise, self._rng)
        return obs

    def step(self, actions):
        cfg = self.config
        actions = np.clip(np.asarray(actions, dtype=np.float64), -1.0, 1.0)
        if actions.shape != (cfg.num_envs, self.act_dim):
            raise ValueError("actions must have shape "
                             f"({cfg.num_envs}, {self.act_dim})")
        self.actions = actions
        self._apply_actions(actions)
        for _ in range(cfg.decimation):
            self.sim.step()
        self.episode_steps += 1
        reward, done = self._compute_reward_done()
        timeout = self.episode_steps >= cfg.episode_length
        poisoned = self.scene.nonfinite.copy()
        done = done | timeout | poisoned
        reward = np.where(poisoned, 0.0, reward)
        obs = self._observe()
        if np.any(done):
            idx = np.nonzero(done)[0]
            fresh = self.reset(idx)
            obs[idx] = fresh[idx]
        return StepOutput(obs, reward, done.copy(),
                          {"timeout": timeout, "poisoned": poisoned})

    def close(self):
        if self.sim is not self.scene:
            self.sim.close()


# ------------------------------------------------------------------ cartpole


class CartpoleEnv(EnvBatch):
    """Force-controlled cart, passive pole starting near upright.
    obs = [cart pos, cart vel, pole angle, pole vel]."""

    name = "cartpole"
    obs_dim = 4
    act_dim = 1
    max_push = 10.0

    def __init__(self, config=None):
        cfg = config or EnvConfig()
        cfg = replace(cfg, sim_dt=1.0 / 120.0, control_dt=1.0 / 60.0)
        super().__init__(cfg)

    def _model(self):
        return M.cartpole()

    def _sim_params(self):
        return SimParams(dt=self.config.sim_dt)

    def _reset_envs(self, envs, rngs):
        dof = self.scene.dof_state.copy()
        view = dof.reshape(self.config.num_envs, 2, 2)
        for e, rng in zip(envs, rngs):
            view[e, 0] = rng.uniform([-1.0, -0.5], [1.0, 0.5])  # cart
            view[e, 1] = rng.uniform([-0.8, -1.0], [0.8, 1.0])  # pole
        self.buffers.set_dof_state(dof, envs)

    def _apply_actions(self, actions):
        force = self.buffers.acquire("controls")["dof_force"]
        view = force.reshape(self.config.num_envs, 2)
        view[:, 0] = self.max_push * actions[:, 0]
        view[:, 1] = 0.0

    def _compute_obs(self):
        d = self.dof_view()
        return np.stack([d[:, 0, 0], d[:, 0, 1], d[:, 1, 0], d[:, 1, 1]],
                        axis=-1)

    def _compute_reward_done(self):
        d = self.dof_view()
        cart, cart_vel = d[:, 0, 0], d[:, 0, 1]
        angle, angle_vel = d[:, 1, 0], d[:, 1, 1]
        reward = (1.0 - angle ** 2 - 0.01 * np.abs(cart_vel)
                  - 0.005 * np.abs(angle_vel))
        done = (np.abs(angle) > np.pi / 2) | (np.abs(cart) > 3.0)
        reward = np.where(done, reward - 2.0, reward)
        return reward, done


# -------------------------------------------------------------------- flyer


class FlyerEnv(EnvBatch):
    """Twin-rotor hover under reduced gravity. Actions are per-rotor body
    frame forces: z thrust around the hover point plus small lateral
    components. The goal teleports every 3 seconds.
    obs = [goal offset 3, quat 4, linvel 3, angvel 3]."""

    name = "flyer"
    obs_dim = 13
    act_dim = 6
    gravity_z = -3.721
    lateral_scale = 0.6
    goal_period_s = 3.0

    def __init__(self, config=None):
        cfg = config or EnvConfig()
        cfg = replace(cfg, sim_dt=1.0 / 200.0, control_dt=1.0 / 100.0)
        super().__init__(cfg)

    def _model(self):
        return M.flyer()

    def _sim_params(self):
        return SimParams(dt=self.config.sim_dt,
                         gravity=(0.0, 0.0, self.gravity_z))

    def _post_reset(self, envs):
        if not hasattr(self, "targets"):
            self.targets = np.zeros((self.config.num_envs, 3))
            self.targets[:, 2] = 1.0
        for e in envs:
            self.targets[e] = [0.0, 0.0, 1.0]

    def _reset_envs(self, envs, rngs):
        root = self.scene.root_state.copy()
        root[:, 0:3] -= self.scene.env_origins
        for e, rng in zip(envs, rngs):
            root[e] = 0.0
            root[e, 0:3] = rng.uniform([-0.5, -0.5, 0.8], [0.5, 0.5, 1.5])
            root[e, 6] = 1.0
        root[:, 0:3] += self.scene.env_origins
        self.buffers.set_root_state(root, envs)

    def _teleport_goals(self):
        period = int(round(self.goal_period_s / self.config.control_dt))
        due = np.nonzero((self.episode_steps > 0)
                         & (self.episode_steps % period == 0))[0]
        for e in due:
            rng = np.random.default_rng(
                [self.config.seed, int(e), int(self.reset_count[e]),
                 int(self.episode_steps[e])])
            self.targets[e] = rng.uniform([-2.0, -2.0, 1.0], [2.0, 2.0, 2.5])

    def _apply_actions(self, actions):
        s = self.scene
        E = self.config.num_envs
        mass = 1.0 / s.inv_mass.reshape(E, -1)[:, 0]
        hover = -self.gravity_z * mass / 2.0  # per-rotor share
        quat = s.root_state[:, 3:7]
        force = np.zeros((E, 3))
        torque = np.zeros((E, 3))
        for i, off in enumerate(M.FLYER_ROTOR_OFFSETS):
            a = actions[:, 3 * i:3 * i + 3]
            f_body = np.stack([self.lateral_scale * a[:, 0],
                               self.lateral_scale * a[:, 1],
                               hover * (1.0 + a[:, 2])], axis=-1)
            f_world = quat_rotate(quat, f_body)
            r_world = quat_rotate(quat, np.broadcast_to(off, (E, 3)))
            force += f_world
            torque += np.cross(r_world, f_world)
        ctrl = self.buffers.acquire("controls")
        ctrl["body_force"][:] = force
        ctrl["body_torque"][:] = torque

    def _compute_obs(self):
        root = self.local_root()
        offset = self.targets - root[:, 0:3]
        return np.concatenate([offset, root[:, 3:7], root[:, 7:10],
                               root[:, 10:13]], axis=-1)

    def _compute_reward_done(self):
        self._teleport_goals()
        root = self.local_root()
        up_z = quat_rotate(root[:, 3:7],
                           np.broadcast_to([0.0, 0.0, 1.0],
                                           (len(root), 3)))[:, 2]
        tilt = np.abs(1.0 - up_z)
        spin = root[:, 12:13]
        reward = ingenuity_reward(root[:, 0:3], self.targets, tilt, spin)
        dist = np.linalg.norm(self.targets - root[:, 0:3], axis=-1)
        done = (dist > 8.0) | (root[:, 2] < 0.1)
        return reward, done


# ---------------------------------------------------------------- quadruped


class QuadrupedEnv(EnvBatch):
    """8-DOF walker chasing a far-away waypoint along +x with the potential
    based locomotion reward. 60-dim observation: height, body-frame
    velocities, heading angles, projections, scaled DOF state, foot force
    sensors, previous actions."""

    name = "quadruped"
    obs_dim = 60
    act_dim = 8
    action_scale = 0.6
    dof_vel_scale = 0.05
    sensor_scale = 0.01
    target_x = 1000.0

    def __init__(self, config=None):
        cfg = config or EnvConfig()
        cfg = replace(cfg, sim_dt=1.0 / 120.0, control_dt=1.0 / 60.0)
        super().__init__(cfg)
        assert self.scene.sensors_per_env == 4

    def _model(self):
        return M.quadruped()

    def _sim_params(self):
        return SimParams(dt=self.config.sim_dt)

    def _post_reset(self, envs):
        if not hasattr(self, "potentials"):
            E = self.config.num_envs
            self.potentials = np.zeros(E)
            self.reward_params = LocomotionRewardParams(
                dt=self.config.control_dt)
            lo, hi = dof_limits(self.model)
            self.dof_lower, self.dof_upper = lo, hi
            self.motor_strength = np.ones((E, lo.size))
        root = self.local_root()
        dist = np.linalg.norm(
            self._targets(root)[envs] - root[envs, 0:3], axis=-1)
        self.potentials[envs] = -dist / self.config.control_dt

    def _targets(self, local_root):
        t = np.zeros((len(local_root), 3))
        t[:, 0] = self.target_x
        return t

    def _reset_envs(self, envs, rngs):
        E = self.config.num_envs
        root = self.scene.root_state.copy()
        root[:, 0:3] -= self.scene.env_origins
        dof = self.scene.dof_state.copy()
        dview = dof.reshape(E, self.act_dim, 2)
        for e, rng in zip(envs, rngs):
            root[e] = 0.0
            root[e, 2] = M.QUADRUPED_REST_HEIGHT + 0.02
            yaw = rng.uniform(-0.1, 0.1)
            root[e, 3:7] = [0.0, 0.0, np.sin(yaw / 2), np.cos(yaw / 2)]
            dview[e, :, 0] = rng.uniform(-0.1, 0.1, self.act_dim)
            dview[e, :, 1] = 0.0
        root[:, 0:3] += self.scene.env_origins
        self.buffers.set_root_state(root, envs)
        self.buffers.set_dof_state(dof, envs)

    def _apply_actions(self, actions):
        targets = self.buffers.acquire("controls")["dof_pos_target"]
        targets.reshape(self.config.num_envs, self.act_dim)[:] = \
            self.action_scale * actions

    def _frame_quantities(self):
        root = self.local_root()
        quat = root[:, 3:7]
        E = len(root)
        lin_b = quat_rotate_inverse(quat, root[:, 7:10])
        ang_b = quat_rotate_inverse(quat, root[:, 10:13])
        up = quat_rotate(quat, np.broadcast_to([0.0, 0.0, 1.0], (E, 3)))
        heading = quat_rotate(quat, np.broadcast_to([1.0, 0.0, 0.0], (E, 3)))
        to_target = self._targets(root) - root[:, 0:3]
        to_dir = to_target[:, 0:2]
        to_dir = to_dir / np.maximum(
            np.linalg.norm(to_dir, axis=-1, keepdims=True), 1e-9)
        heading_proj = np.sum(heading[:, 0:2] * to_dir, axis=-1)
        return root, lin_b, ang_b, up[:, 2], heading, heading_proj

    def _compute_obs(self):
        E = self.config.num_envs
        root, lin_b, ang_b, up_z, heading, heading_proj = \
            self._frame_quantities()
        x, y, z, w = root[:, 3], root[:, 4], root[:, 5], root[:, 6]
        yaw = np.arctan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
        roll = np.arctan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
        to_target = self._targets(root) - root[:, 0:3]
        angle_to = np.arctan2(to_target[:, 1], to_target[:, 0]) - yaw
        angle_to = np.arctan2(np.sin(angle_to), np.cos(angle_to))
        d = self.dof_view()
        span = self.dof_upper - self.dof_lower
        dof_scaled = 2.0 * (d[:, :, 0] - self.dof_lower) / span - 1.0
        sensors = self.scene.sensor_forces.reshape(E, -1) * self.sensor_scale
        return np.concatenate([
            root[:, 2:3], lin_b, ang_b,
            yaw[:, None], roll[:, None], angle_to[:, None],
            up_z[:, None], heading_proj[:, None],
            dof_scaled, d[:, :, 1] * self.dof_vel_scale,
            sensors, self.actions,
        ], axis=-1)

    def _compute_reward_done(self):
        root, _, _, up_z, _, heading_proj = self._frame_quantities()
        d = self.dof_view()
        reward, self.potentials = locomotion_reward(
            root[:, 0:3], self._targets(root), up_z, heading_proj,
            self.actions, d[:, :, 0], d[:, :, 1],
            self.dof_lower, self.dof_upper, self.motor_strength,
            self.potentials, self.reward_params)
        done = root[:, 2] <= self.reward_params.termination_height
        return reward, done

    def progress_reward(self):
        """Potential delta alone, for training diagnostics."""
        root = self.local_root()
        dist = np.linalg.norm(self._targets(root) - root[:, 0:3], axis=-1)
        return -dist / self.config.control_dt - self.potentials


# ---------------------------------------------------- anymal-style variant


class AnymalObsEnv(EnvBatch):
    """12-DOF walker with velocity-command tracking. 48-dim observation:
    body-frame velocities, projected gravity, commands, DOF state relative
    to the stance pose, previous actions."""

    name = "quadruped-anymal-obs"
    obs_dim = 48
    act_dim = 12
    action_scale = 0.5
    dof_vel_scale = 0.05

    def __init__(self, config=None):
        cfg = config or EnvConfig()
        cfg = replace(cfg, sim_dt=1.0 / 120.0, control_dt=1.0 / 60.0)
        super().__init__(cfg)

    def _model(self):
        return M.quadruped12()

    def _sim_params(self):
        return SimParams(dt=self.config.sim_dt)

    def _post_reset(self, envs):
        if not hasattr(self, "commands"):
            E = self.config.num_envs
            self.commands = np.zeros((E, 3))
            self.reward_params = AnymalRewardParams(dt=self.config.control_dt)
        for e in envs:
            rng = np.random.default_rng(
                [self.config.seed, int(e), int(self.reset_count[e]), 0xC])
            self.commands[e] = rng.uniform([-1.0, -1.0, -1.0],
                                           [1.0, 1.0, 1.0])

    def _reset_envs(self, envs, rngs):
        E = self.config.num_envs
        root = self.scene.root_state.copy()
        root[:, 0:3] -= self.scene.env_origins
        dof = self.scene.dof_state.copy()
        dview = dof.reshape(E, self.act_dim, 2)
        for e, rng in zip(envs, rngs):
            root[e] = 0.0
            root[e, 2] = M.QUADRUPED12_REST_HEIGHT + 0.02
            root[e, 6] = 1.0
            dview[e, :, 0] = rng.uniform(-0.1, 0.1, self.act_dim)
            dview[e, :, 1] = 0.0
        root[:, 0:3] += self.scene.env_origins
        self.buffers.set_root_state(root, envs)
        self.buffers.set_dof_state(dof, envs)

    def _apply_actions(self, actions):
        targets = self.buffers.acquire("controls")["dof_pos_target"]
        targets.reshape(self.config.num_envs, self.act_dim)[:] = \
            self.action_scale * actions

    def _compute_obs(self):
        root = self.local_root()
        quat = root[:, 3:7]
        E = len(root)
        lin_b = quat_rotate_inverse(quat, root[:, 7:10])
        ang_b = quat_rotate_inverse(quat, root[:, 10:13])
        grav = quat_rotate_inverse(
            quat, np.broadcast_to([0.0, 0.0, -1.0], (E, 3)))
        d = self.dof_view()
        return np.concatenate([
            lin_b, ang_b, grav, self.commands,
            d[:, :, 0], d[:, :, 1] * self.dof_vel_scale, self.actions,
        ], axis=-1)

    def _compute_reward_done(self):
        root = self.local_root()
        quat = root[:, 3:7]
        E = len(root)
        lin_b = quat_rotate_inverse(quat, root[:, 7:10])
        ang_b = quat_rotate_inverse(quat, root[:, 10:13])
        torques = self.scene.dof_force.reshape(E, self.act_dim)
        reward = anymal_reward(lin_b, ang_b, self.commands, None, None,
                               torques, None, None, None,
                               self.reward_params, variant="flat")
        up_z = quat_rotate(quat,
                           np.broadcast_to([0.0, 0.0, 1.0], (E, 3)))[:, 2]
        done = (up_z < 0.3) | (root[:, 2] < 0.18)
        return reward, done


TASKS = {
    "cartpole": CartpoleEnv,
    "flyer": FlyerEnv,
    "quadruped": QuadrupedEnv,
    "quadruped-anymal-obs": AnymalObsEnv,
}


def make_env(name, config=None, **overrides):
    try:
        cls = TASKS[name]
    except KeyError:
        raise KeyError(f"unknown task {name!r}; have {sorted(TASKS)}") \
            from None
    cfg = config or EnvConfig()
    if overrides:
        cfg = replace(cfg, **overrides)
    return cls(cfg)
