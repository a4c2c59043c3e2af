"""Batched reward kernels.

Every kernel is a pure function over flat per-env arrays: no simulator
state, no side effects beyond explicit counters passed in and out. All of
them are checked against independent scalar reference implementations in
the test suite.
"""

from dataclasses import dataclass, field

import numpy as np

from .spatial import rot_dist


@dataclass
class LocomotionRewardParams:
    heading_weight: float = 0.5
    alive_bonus: float = 0.5
    death_penalty: float = -1.0
    termination_height: float = 0.26
    upright_threshold: float = 0.93
    upright_weight: float = 0.1
    action_cost_weight: float = 0.005
    effort_weight: float = 0.05
    dof_limit_weight: float = 0.1
    dt: float = 1 / 60


@dataclass
class CubeRewardParams:
    dist_reward_scale: float = -10.0
    rot_reward_scale: float = 1.0
    rot_eps: float = 0.1
    action_penalty_scale: float = -0.0002
    success_tolerance: float = 0.4
    reach_goal_bonus: float = 250.0
    fall_dist: float = 0.24
    fall_penalty: float = 0.0


@dataclass
class TrifingerRewardParams:
    w_og: float = 1.0
    w_fo: float = 0.2
    w_fv: float = -0.05
    kernel_a: float = 50.0
    kernel_b: float = 2.0
    fingertip_term_cutoff: int = int(5e7)


@dataclass
class AnymalRewardParams:
    # Raw per-term coefficients; each is multiplied by dt in the kernel.
    w_vel_xy: float = 1.0
    w_vel_yaw: float = 0.5
    w_vel_z: float = 4.0
    w_pitch_roll: float = 0.05
    w_joint_motion: float = 0.001
    w_torque: float = 0.00002
    w_action_rate: float = 0.25
    w_collision: float = 0.001
    w_air_time: float = 2.0
    dt: float = 0.02


@dataclass
class FrankaStackParams:
    w_stack: float = 16.0
    w_align: float = 2.0
    w_lift: float = 1.5
    w_reach: float = 0.1
    lift_height: float = 0.04
    align_tolerance: float = 0.02
    away_distance: float = 0.04


def locomotion_reward(torso_pos, target_pos, up_proj, heading_proj, actions,
                      dof_pos, dof_vel, dof_lower, dof_upper, motor_strength,
                      prev_potential, params):
    """R = R_progress + R_alive + R_upright + R_heading + R_effort + R_act
    + R_dof + R_death, with potential = -dist/dt.

    Returns (reward, potential); feed the potential back as prev_potential
    on the next step. R_dof counts DOFs within 1% of a finite limit.
    """
    p = params
    dist = np.linalg.norm(np.asarray(target_pos) - np.asarray(torso_pos),
                          axis=-1)
    potential = -dist / p.dt
    reward = potential - prev_potential
    height = np.asarray(torso_pos)[:, 2]
    reward = reward + np.where(height >= p.termination_height,
                               p.alive_bonus, 0.0)
    reward = reward + np.where(height <= p.termination_height,
                               p.death_penalty, 0.0)
    reward = reward + np.where(up_proj > p.upright_threshold,
                               p.upright_weight, 0.0)
    reward = reward + p.heading_weight * np.where(
        np.asarray(heading_proj) >= 0.8, 1.0, np.asarray(heading_proj) / 0.8)
    actions = np.asarray(actions)
    reward = reward - p.action_cost_weight * np.sum(actions ** 2, axis=-1)
    reward = reward + p.effort_weight * np.sum(
        actions * np.asarray(motor_strength) * np.asarray(dof_vel), axis=-1)
    lo = np.asarray(dof_lower, dtype=float)
    hi = np.asarray(dof_upper, dtype=float)
    limited = np.isfinite(lo) & np.isfinite(hi)
    span = np.where(limited, hi - lo, 1.0)
    frac = (np.asarray(dof_pos) - lo) / span
    near = ((frac < 0.01) | (frac > 0.99)) & limited
    reward = reward - p.dof_limit_weight * np.sum(near, axis=-1)
    return reward, potential


def ingenuity_reward(pos, target, local_up_z, spin_rate):
    """R = R_pos * (1 + R_upright + R_spin), each term 1/(1+x^2)-shaped."""
    d2 = np.sum((np.asarray(pos) - np.asarray(target)) ** 2, axis=-1)
    r_pos = 1.0 / (1.0 + d2)
    r_spin = 1.0 / (1.0 + np.sum(np.asarray(spin_rate) ** 2, axis=-1))
    r_up = 1.0 / (1.0 + np.asarray(local_up_z) ** 2)
    return r_pos * (1.0 + r_up + r_spin)


def _phi(err_sq):
    # phi(x) = exp(-||x||^2 / 0.25)
    return np.exp(-err_sq / 0.25)


def anymal_reward(base_lin_vel, base_ang_vel, commands, dof_vel, dof_acc,
                  torques, action_rate, collisions, feet_air_time, params,
                  variant="flat"):
    """Velocity-tracking reward; `flat` uses the three-term sum, `rough`
    the full nine-term sum. commands = (vx*, vy*, wyaw*)."""
    p = params
    dt = p.dt
    lin = np.asarray(base_lin_vel)
    ang = np.asarray(base_ang_vel)
    cmd = np.asarray(commands)
    err_xy = np.sum((cmd[:, 0:2] - lin[:, 0:2]) ** 2, axis=-1)
    err_yaw = (cmd[:, 2] - ang[:, 2]) ** 2
    reward = (p.w_vel_xy * dt * _phi(err_xy)
              + p.w_vel_yaw * dt * _phi(err_yaw)
              - p.w_torque * dt * np.sum(np.asarray(torques) ** 2, axis=-1))
    if variant == "rough":
        reward = reward - p.w_vel_z * dt * lin[:, 2] ** 2
        reward = reward - p.w_pitch_roll * dt * np.sum(ang[:, 0:2] ** 2,
                                                       axis=-1)
        reward = reward - p.w_joint_motion * dt * (
            np.sum(np.asarray(dof_acc) ** 2, axis=-1)
            + np.sum(np.asarray(dof_vel) ** 2, axis=-1))
        reward = reward - p.w_action_rate * dt * np.sum(
            np.asarray(action_rate) ** 2, axis=-1)
        reward = reward - p.w_collision * dt * np.asarray(collisions)
        reward = reward + p.w_air_time * dt * np.sum(
            np.asarray(feet_air_time) - 0.5, axis=-1)
    elif variant != "flat":
        raise ValueError(f"unknown variant {variant!r}")
    return reward


def cube_reorientation_reward(object_pos, object_quat, target_pos,
                              target_quat, actions, params):
    """Returns (reward, goal_reset flags, success flags)."""
    p = params
    goal_dist = np.linalg.norm(np.asarray(object_pos) - np.asarray(target_pos),
                               axis=-1)
    rd = rot_dist(np.asarray(object_quat), np.asarray(target_quat))
    reward = (goal_dist * p.dist_reward_scale
              + (1.0 / (np.abs(rd) + p.rot_eps)) * p.rot_reward_scale
              + np.sum(np.asarray(actions) ** 2, axis=-1)
              * p.action_penalty_scale)
    success = np.abs(rd) <= p.success_tolerance
    reward = np.where(success, reward + p.reach_goal_bonus, reward)
    reward = np.where(goal_dist >= p.fall_dist, reward + p.fall_penalty,
                      reward)
    return reward, success.copy(), success


def trifinger_reward(cube_pos, prev_cube_pos, cube_quat, target_pos,
                     target_quat, fingertip_pos, prev_fingertip_pos,
                     fingertip_vel, timestep, params):
    """R = w_og [K(dist) + 1/(3 rot_dist + 0.01)] + w_fo sum(delta_i)
    1(t <= cutoff) + w_fv sum ||fingertip speed||^2, K the logistic kernel."""
    p = params
    x = np.linalg.norm(np.asarray(cube_pos) - np.asarray(target_pos), axis=-1)
    kern = 1.0 / (np.exp(p.kernel_a * x) + p.kernel_b + np.exp(-p.kernel_a * x))
    rd = rot_dist(np.asarray(cube_quat), np.asarray(target_quat))
    r_og = kern + 1.0 / (3.0 * np.abs(rd) + 0.01)
    d_now = np.linalg.norm(np.asarray(fingertip_pos)
                           - np.asarray(cube_pos)[:, None, :], axis=-1)
    d_prev = np.linalg.norm(np.asarray(prev_fingertip_pos)
                            - np.asarray(prev_cube_pos)[:, None, :], axis=-1)
    delta = np.sum(d_now - d_prev, axis=-1)
    active = np.asarray(timestep) <= p.fingertip_term_cutoff
    r_fo = np.where(active, delta, 0.0)
    r_fv = np.sum(np.asarray(fingertip_vel) ** 2, axis=(-2, -1))
    return p.w_og * r_og + p.w_fo * r_fo + p.w_fv * r_fv


def franka_stack_reward(cubeA_pos, cubeB_pos, gripper_pos, lfinger_pos,
                        rfinger_pos, params):
    """R = max(R_stack, R_align + R_lift + R_reach) per the cited weights."""
    p = params
    ca = np.asarray(cubeA_pos)
    cb = np.asarray(cubeB_pos)
    gp = np.asarray(gripper_pos)
    xy = np.linalg.norm(ca[:, 0:2] - cb[:, 0:2], axis=-1)
    lifted = ca[:, 2] > p.lift_height
    aligned = xy < p.align_tolerance
    d_grip = np.linalg.norm(gp - ca, axis=-1)
    away = d_grip > p.away_distance
    stacked = (ca[:, 2] > cb[:, 2]) & aligned & away
    r_stack = np.where(stacked, p.w_stack, 0.0)
    r_align = np.where(lifted, p.w_align * (1.0 - np.tanh(10.0 * xy)), 0.0)
    r_lift = np.where(lifted, p.w_lift, 0.0)
    d_sum = (d_grip + np.linalg.norm(np.asarray(lfinger_pos) - ca, axis=-1)
             + np.linalg.norm(np.asarray(rfinger_pos) - ca, axis=-1))
    r_reach = p.w_reach * (1.0 - np.tanh((10.0 / 3.0) * d_sum))
    return np.maximum(r_stack, r_align + r_lift + r_reach)


def amp_imitation_reward(d_score):
    """r = -ln(1 - D), with D clamped to [1e-4, 1 - 1e-4]."""
    d = np.clip(np.asarray(d_score, dtype=float), 1e-4, 1.0 - 1e-4)
    return -np.log(1.0 - d)
