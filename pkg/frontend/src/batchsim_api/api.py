"""Thin scripting layer over :mod:`batchsim`.

Only the package's external interfaces are used: the task registry and
environment constructors from :mod:`batchsim.envs` and the flat buffer API
from :mod:`batchsim.buffers`. Nothing here reaches into solver internals.
"""

from typing import NamedTuple

import numpy as np

from batchsim.buffers import ShapeMismatch, UnknownKind
from batchsim.envs import TASKS, make_env

__all__ = [
    "BoundBuffer", "ShapeMismatch", "SimHandle", "StepResult",
    "UnknownKind", "create_sim", "reset", "step_env", "task_names", "wrap",
]


class StepResult(NamedTuple):
    obs: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    info: dict


class BoundBuffer:
    """Zero-copy view over one of the simulation's flat buffers.

    ``array`` aliases the core storage: reads always see the latest step
    and in-place writes feed back into the simulation.
    """

    def __init__(self, kind, array):
        self.kind = kind
        self.array = array

    def copy(self):
        if isinstance(self.array, dict):
            return {k: v.copy() for k, v in self.array.items()}
        return self.array.copy()

    def __repr__(self):
        if isinstance(self.array, dict):
            shape = {k: v.shape for k, v in self.array.items()}
        else:
            shape = self.array.shape
        return f"BoundBuffer(kind={self.kind!r}, shape={shape})"


class SimHandle:
    """One batched task simulation plus its buffer API."""

    def __init__(self, task, env):
        self.task = task
        self.env = env
        self.buffers = env.buffers

    @property
    def num_envs(self):
        return self.env.config.num_envs

    @property
    def obs_dim(self):
        return self.env.obs_dim

    @property
    def act_dim(self):
        return self.env.act_dim

    def close(self):
        self.env.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def task_names():
    """Registered task names, identical to the command-line registry."""
    return sorted(TASKS)


def create_sim(task, num_envs=16, seed=0, **options):
    """Build a batched simulation for a registered task.

    Extra keyword options map onto the environment config (for example
    ``episode_length`` or ``randomize``).
    """
    if task not in TASKS:
        raise KeyError(f"unknown task {task!r}; have {task_names()}")
    env = make_env(task, num_envs=num_envs, seed=seed, **options)
    handle = SimHandle(task, env)
    env.reset()
    return handle


def wrap(handle, kind):
    """Zero-copy view over one of the simulation's flat buffers.

    Raises :class:`UnknownKind` for anything the core does not expose.
    """
    return BoundBuffer(kind, handle.buffers.acquire(kind))


def step_env(handle, actions):
    """Advance one control step. Returned arrays are fresh copies."""
    actions = np.asarray(actions, dtype=np.float64)
    expected = (handle.num_envs, handle.act_dim)
    if actions.shape != expected:
        raise ShapeMismatch(
            f"actions expect shape {expected}, got {actions.shape}")
    out = handle.env.step(actions)
    return StepResult(out.obs.copy(), out.reward.copy(), out.done.copy(),
                      {k: v.copy() for k, v in out.info.items()})


def reset(handle, env_indices=None):
    """Reset all envs (default) or the given indices; returns a fresh
    observation copy for the whole batch."""
    return handle.env.reset(env_indices).copy()
