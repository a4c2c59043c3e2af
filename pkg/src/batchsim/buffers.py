"""Flat global state/control buffer facade over a Scene.

All simulation state is exposed as live views of single canonical arrays:
root state (N_A, 13), DOF state (N_D, 2), rigid body state (N_B, 13), DOF
generalized forces (N_D,), net contact force (N_B, 3) and force/torque
sensors (N_F, 6). Setters accept an index set of actors so a subset of
environments can be reset without touching the rest; complement rows are
never written.

All set/submit calls must happen between steps from one control thread.
"""

import numpy as np

ALL = None

STATE_KINDS = ("root_state", "dof_state", "body_state", "dof_force",
               "net_contact", "sensor")
CONTROL_KINDS = ("dof_force", "dof_pos_target", "dof_vel_target",
                 "body_force", "body_torque")


class BufferApiError(Exception):
    pass


class UnknownKind(BufferApiError):
    pass


class IndexOutOfRange(BufferApiError):
    pass


class NonFiniteWrite(BufferApiError):
    pass


class ShapeMismatch(BufferApiError):
    pass


class ModeMismatch(BufferApiError):
    pass


class SimBuffers:
    """Zero-copy buffer API for one Scene (or ShardedScene)."""

    def __init__(self, scene):
        self.scene = scene

    # ------------------------------------------------------------- acquire

    def acquire(self, kind):
        """Live view over the canonical buffer; repeated calls alias the
        same storage. `controls` returns a dict of the five control views."""
        s = self.scene
        views = {
            "root_state": lambda: s.root_state,
            "dof_state": lambda: s.dof_state,
            "body_state": lambda: s.body_state,
            "dof_force": lambda: s.dof_force,
            "net_contact": lambda: s.net_contact,
            "sensor": lambda: s.sensor_forces,
            "controls": lambda: {
                "dof_force": s.ctrl_dof_force,
                "dof_pos_target": s.ctrl_dof_pos_target,
                "dof_vel_target": s.ctrl_dof_vel_target,
                "body_force": s.ctrl_body_force,
                "body_torque": s.ctrl_body_torque,
            },
        }
        try:
            return views[kind]()
        except KeyError:
            raise UnknownKind(f"unknown buffer kind {kind!r}; "
                              f"have {sorted(views)}") from None

    # ------------------------------------------------------------- helpers

    def _actor_indices(self, indices):
        s = self.scene
        n_actors = s.num_actors
        if indices is ALL:
            return np.arange(n_actors)
        idx = np.atleast_1d(np.asarray(indices, dtype=int))
        if idx.size and (idx.min() < 0 or idx.max() >= n_actors):
            raise IndexOutOfRange(
                f"actor indices must be in [0, {n_actors}), got "
                f"[{idx.min()}, {idx.max()}]")
        return np.unique(idx)

    def _actor_rows(self, actor_idx):
        """(env, local actor, body rows, dof rows) for each selected actor."""
        s = self.scene
        A = s.actors_per_env
        envs = actor_idx // A
        locals_ = actor_idx % A
        return envs, locals_

    def _check_values(self, values, shape, what):
        values = np.asarray(values, dtype=float)
        if values.shape != shape:
            raise ShapeMismatch(f"{what} expects shape {shape}, "
                                f"got {values.shape}")
        return values

    def _refresh_derived(self, envs, actors):
        """Repack body_state/root_state rows for the touched actors only."""
        s = self.scene
        env_arr = np.asarray(sorted(envs))
        mask = np.zeros(s.num_envs, dtype=bool)
        mask[env_arr] = True
        for a in sorted(actors):
            m = s.models[a]
            base = s.env_body_base[mask] + s.actor_body_offset[a]
            rows = (base[:, None] + np.arange(m.num_bodies)).ravel()
            s.body_state[rows, 0:3] = s.pos[rows]
            s.body_state[rows, 3:7] = s.quat[rows]
            s.body_state[rows, 7:10] = s.linvel[rows]
            s.body_state[rows, 10:13] = s.angvel[rows]
            s.root_state[env_arr * s.actors_per_env + a] = s.body_state[base]

    # --------------------------------------------------------------- state

    def set_root_state(self, values, indices=ALL):
        """Overwrite selected actors' root pose/velocity; descendant links
        are recomputed from the unchanged DOF positions (teleport)."""
        s = self.scene
        values = self._check_values(values, s.root_state.shape, "root state")
        idx = self._actor_indices(indices)
        rows = values[idx]
        if not np.isfinite(rows).all():
            raise NonFiniteWrite("non-finite values in root state write")
        quat = rows[:, 3:7]
        norm = np.linalg.norm(quat, axis=-1, keepdims=True)
        if np.any(norm < 0.5):
            raise NonFiniteWrite("degenerate quaternion in root state write")
        rows = rows.copy()
        rows[:, 3:7] = quat / norm
        envs, locals_ = self._actor_rows(idx)
        s.root_state[idx] = rows
        base = s.env_body_base[envs] + np.asarray(s.actor_body_offset)[locals_]
        s.pos[base] = rows[:, 0:3]
        s.quat[base] = rows[:, 3:7]
        s.linvel[base] = rows[:, 7:10]
        s.angvel[base] = rows[:, 10:13]
        mask = np.zeros(s.num_envs, dtype=bool)
        mask[envs] = True
        s.forward_kinematics(env_mask=mask, actors=set(locals_.tolist()))
        self._refresh_derived(set(envs.tolist()), set(locals_.tolist()))

    def set_dof_state(self, values, indices=ALL):
        """Overwrite selected actors' DOF positions/velocities; link poses
        recomputed by forward kinematics, root state untouched."""
        s = self.scene
        values = self._check_values(values, s.dof_state.shape, "dof state")
        idx = self._actor_indices(indices)
        envs, locals_ = self._actor_rows(idx)
        touched_envs, touched_actors = set(), set()
        for env, a in zip(envs, locals_):
            m = s.models[a]
            if m.num_dofs == 0:
                continue
            doff = env * s.dofs_per_env + s.actor_dof_offset[a]
            drows = doff + np.arange(m.num_dofs)
            if not np.isfinite(values[drows]).all():
                raise NonFiniteWrite("non-finite values in dof state write")
            s.dof_state[drows] = values[drows]
            touched_envs.add(int(env))
            touched_actors.add(int(a))
        if not touched_envs:
            return
        mask = np.zeros(s.num_envs, dtype=bool)
        mask[sorted(touched_envs)] = True
        s.forward_kinematics(env_mask=mask, actors=touched_actors)
        self._refresh_derived(touched_envs, touched_actors)

    # ------------------------------------------------------------ controls

    def submit_controls(self, kind, buffer, indices=ALL):
        """Stage controls for the next step. Later submissions of the same
        kind before a step overwrite earlier ones."""
        from .physics import MODE_FORCE

        s = self.scene
        targets = {
            "dof_force": (s.ctrl_dof_force, "dof"),
            "dof_pos_target": (s.ctrl_dof_pos_target, "dof"),
            "dof_vel_target": (s.ctrl_dof_vel_target, "dof"),
            "body_force": (s.ctrl_body_force, "body"),
            "body_torque": (s.ctrl_body_torque, "body"),
        }
        try:
            dest, domain = targets[kind]
        except KeyError:
            raise UnknownKind(f"unknown control kind {kind!r}; "
                              f"have {sorted(targets)}") from None
        buffer = self._check_values(buffer, dest.shape, f"control {kind}")
        if not np.isfinite(buffer).all():
            raise NonFiniteWrite(f"non-finite values in control {kind}")
        idx = self._actor_indices(indices)
        envs, locals_ = self._actor_rows(idx)
        for env, a in zip(envs, locals_):
            m = s.models[a]
            if domain == "dof":
                if m.num_dofs == 0:
                    continue
                doff = env * s.dofs_per_env + s.actor_dof_offset[a]
                rows = doff + np.arange(m.num_dofs)
                mode = s.dof_mode[rows]
                if kind == "dof_pos_target" and np.any(mode == MODE_FORCE):
                    raise ModeMismatch(
                        "position target submitted for force-mode DOFs")
                if kind == "dof_vel_target" and np.any(mode == MODE_FORCE):
                    raise ModeMismatch(
                        "velocity target submitted for force-mode DOFs")
                if kind == "dof_force" and np.any(mode != MODE_FORCE):
                    raise ModeMismatch(
                        "dof force submitted for position/velocity-mode DOFs")
            else:
                boff = env * s.bodies_per_env + s.actor_body_offset[a]
                rows = boff + np.arange(m.num_bodies)
            dest[rows] = buffer[rows]
