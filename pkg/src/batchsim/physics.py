"""Batched rigid-body stepping with a Temporal Gauss-Seidel constraint solver.

A :class:`Scene` replicates a set of actor models over many environments and
steps them all at once. Bodies live in maximal coordinates in flat arrays
shaped (total_bodies, ...); constraints are solved Gauss-Seidel over a fixed
row order, with every row vectorized across environments. Environments are
disjoint constraint islands, so solving one row for all environments at once
is exactly per-island sequential Gauss-Seidel and the result is independent
of how environments would be partitioned across workers.

Each step:
  1. external forces (gravity, body forces/torques, tendons, damping) are
     integrated into velocities (semi-implicit);
  2. constraint geometry is frozen (anchors, Jacobians, contact set);
  3. ``position_iterations`` biased passes run; after each pass the velocities
     are accumulated, scaled by dt/N, into per-body delta buffers, and the
     deltas feed back into the positional error terms. Joint rows get the
     rotational anchor correction (delta rotation crossed into the anchor
     arms); contact rows use only the translational delta along the normal;
  4. deltas are applied to poses;
  5. ``velocity_iterations`` unbiased (velocity-error-only) passes run;
  6. velocities are clamped and the state buffers refreshed.

Sub-step equivalence: a single step with N position iterations approximates N
sub-steps of dt/N with one biased iteration each; running this Scene with
``position_iterations=1`` at dt/N *is* that sub-stepped solver, which the
tests use as the convergence oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ArticulationModel
from .spatial import (
    cross3,
    quat_exp_map,
    quat_log_map,
    quat_mul,
    quat_conjugate,
    quat_normalize,
    quat_rotate,
    quat_to_matrix,
)
from . import tendons as _tendons


class NonFiniteState(RuntimeError):
    pass


@dataclass
class SimParams:
    dt: float = 1.0 / 120.0
    gravity: tuple = (0.0, 0.0, -9.81)
    position_iterations: int = 8
    velocity_iterations: int = 1
    max_bias: float = 0.2  # cap on contact error-correction velocity, x depth/dt
    restitution: float = 0.0
    static_friction: float = 1.0
    dynamic_friction: float = 1.0
    bounce_threshold: float = 0.2  # m/s
    rest_offset: float = 0.0
    friction_offset_threshold: float = 0.04
    solver_offset_slop: float = 0.0
    friction_correlation_distance: float = 0.025
    max_force: float = 1.0e6
    linear_damping: float = 0.0
    angular_damping: float = 0.0
    max_linear_velocity: float = 1.0e3
    max_angular_velocity: float = 100.0

    def validate(self):
        if not (self.dt > 0):
            raise ValueError("dt must be positive")
        if self.position_iterations < 1:
            raise ValueError("position_iterations must be >= 1")
        if self.velocity_iterations < 0:
            raise ValueError("velocity_iterations must be >= 0")
        if not (0.0 <= self.restitution <= 1.0):
            raise ValueError("restitution must be in [0, 1]")
        vals = [self.max_bias, self.static_friction, self.dynamic_friction,
                self.bounce_threshold, self.rest_offset, self.max_force,
                self.linear_damping, self.angular_damping,
                self.max_linear_velocity, self.max_angular_velocity, *self.gravity]
        if not np.all(np.isfinite(vals)):
            raise ValueError("params must be finite")
        if self.max_linear_velocity <= 0 or self.max_angular_velocity <= 0:
            raise ValueError("velocity limits must be positive")
        return self


@dataclass
class ContactPoint:
    body_a: int  # -1 for the static ground plane
    body_b: int
    normal: np.ndarray  # unit, from a into b
    depth: float  # positive = penetrating beyond rest_offset
    point: np.ndarray
    friction_anchor: np.ndarray | None = None


MODE_FORCE, MODE_POSITION, MODE_VELOCITY = 0, 1, 2
_MODES = {"force": MODE_FORCE, "position": MODE_POSITION, "velocity": MODE_VELOCITY}


def _skew(v):
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def _mv(M, v):
    """Batched matrix-vector product over (..., 3, 3) x (..., 3)."""
    return (M @ v[..., None])[..., 0]


def _vMv(a, M, b):
    """Batched a . M b -> (...,)."""
    return np.sum(a * _mv(M, b), axis=-1)


def _orthonormal_tangents(n):
    """Two unit tangents per normal, deterministic in the normal."""
    ref = np.where(np.abs(n[..., 2:3]) < 0.9, np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    t1 = cross3(ref, n)
    t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
    t2 = cross3(n, t1)
    return t1, t2


class Scene:
    """A batch of identical environments stepped together."""

    def __init__(self, models, num_envs, params: SimParams, spacing=4.0,
                 ground=True, env_origins=None):
        if isinstance(models, ArticulationModel):
            models = [models]
        self.models = list(models)
        self.num_envs = int(num_envs)
        self.params = params.validate()
        self.ground = bool(ground)
        self.step_count = 0

        E = self.num_envs
        self.actors_per_env = len(self.models)
        self.bodies_per_env = sum(m.num_bodies for m in self.models)
        self.dofs_per_env = sum(m.num_dofs for m in self.models)
        self.sensors_per_env = sum(len(self._sensor_links(m)) for m in self.models)
        B, D = self.bodies_per_env, self.dofs_per_env
        self.num_bodies = E * B
        self.num_dofs = E * D
        self.num_actors = E * self.actors_per_env

        if env_origins is None:
            cols = int(np.ceil(np.sqrt(E)))
            env_origins = np.stack(
                [spacing * (np.arange(E) % cols), spacing * (np.arange(E) // cols), np.zeros(E)],
                axis=-1,
            )
        self.env_origins = np.asarray(env_origins, dtype=float)

        # Maximal-coordinate body state.
        self.pos = np.zeros((self.num_bodies, 3))
        self.quat = np.zeros((self.num_bodies, 4))
        self.quat[:, 3] = 1.0
        self.linvel = np.zeros((self.num_bodies, 3))
        self.angvel = np.zeros((self.num_bodies, 3))
        self.inv_mass = np.zeros(self.num_bodies)
        self.inertia_local = np.zeros((self.num_bodies, 3))

        # Tensor-API buffers (canonical storage, refreshed every step).
        self.root_state = np.zeros((self.num_actors, 13))
        self.body_state = np.zeros((self.num_bodies, 13))
        self.dof_state = np.zeros((self.num_dofs, 2))
        self.net_contact = np.zeros((self.num_bodies, 3))
        self.dof_force = np.zeros(self.num_dofs)
        # Control buffers (staged; mutating them is submitting).
        self.ctrl_dof_force = np.zeros(self.num_dofs)
        self.ctrl_dof_pos_target = np.zeros(self.num_dofs)
        self.ctrl_dof_vel_target = np.zeros(self.num_dofs)
        self.ctrl_body_force = np.zeros((self.num_bodies, 3))
        self.ctrl_body_torque = np.zeros((self.num_bodies, 3))
        self.dof_mode = np.zeros(self.num_dofs, dtype=np.int8)

        self.nonfinite = np.zeros(E, dtype=bool)

        # Per-env physical parameters; domain randomization writes these.
        self.gravity = np.broadcast_to(np.asarray(params.gravity, dtype=float), (E, 3)).copy()
        self.mu_static = np.full(E, params.static_friction)
        self.mu_dynamic = np.full(E, params.dynamic_friction)

        self._build_layout()
        self._build_joints()
        self._build_contacts()
        self._init_poses()
        self.sensor_forces = np.zeros((E * max(self.sensors_per_env, 1), 6))
        if self.sensors_per_env == 0:
            self.sensor_forces = np.zeros((0, 6))
        self.refresh_buffers()

    # ---------------------------------------------------------------- layout

    @staticmethod
    def _sensor_links(model):
        return tuple(getattr(model, "sensor_links", ()) or ())

    def _build_layout(self):
        E, B, D = self.num_envs, self.bodies_per_env, self.dofs_per_env
        env_idx = np.arange(E)
        self.actor_body_offset = []  # per actor: local body offset within env
        self.actor_dof_offset = []
        self.actor_model = []
        bo = do = 0
        for m in self.models:
            self.actor_body_offset.append(bo)
            self.actor_dof_offset.append(do)
            self.actor_model.append(m)
            bo += m.num_bodies
            do += m.num_dofs
        self.env_body_base = env_idx * B  # global body index = base + local
        self.env_dof_base = env_idx * D

        for a, m in enumerate(self.models):
            off = self.actor_body_offset[a]
            for li, link in enumerate(m.links):
                gi = self.env_body_base + off + li
                static = m.fixed_base and li == 0
                self.inv_mass[gi] = 0.0 if static else 1.0 / link.mass
                self.inertia_local[gi] = 0.0 if static else np.asarray(link.inertia)
        self.inv_inertia_local = np.where(self.inertia_local > 0, 1.0 / np.where(self.inertia_local > 0, self.inertia_local, 1.0), 0.0)

        # Per-env body->env map for contact force readout and NaN flags.
        self.body_env = np.repeat(np.arange(E), B)

        # Sensors: one 6-axis wrench per flagged link.
        self.sensor_body = []
        for a, m in enumerate(self.models):
            for name in self._sensor_links(m):
                li = m.link_index(name)
                self.sensor_body.append(self.actor_body_offset[a] + li)
        self.sensor_body = np.asarray(self.sensor_body, dtype=int)

    def _build_joints(self):
        """Per-joint slot arrays: one slot per (actor, joint), vectorized over envs.

        Gains and limits are (n_slots, num_envs) so randomization can retune
        individual environments in place.
        """
        self.joint_slots = []
        self.dof_slots = []  # one per scalar DOF, in global DOF order per env
        E = self.num_envs
        specs = []
        for a, m in enumerate(self.models):
            boff = self.actor_body_offset[a]
            doff = self.actor_dof_offset[a]
            dof_cursor = 0
            for j in m.joints:
                slot = {
                    "index": len(self.joint_slots),
                    "actor": a,
                    "kind": j.kind,
                    "parent": self.env_body_base + boff + m.link_index(j.parent),
                    "child": self.env_body_base + boff + m.link_index(j.child),
                    "axis_local": np.asarray(j.axis),
                    "origin_pos": np.asarray(j.origin_pos),
                    "origin_quat": np.asarray(j.origin_quat),
                    "child_pos": np.asarray(j.child_pos),
                    "child_quat": np.asarray(j.child_quat),
                    "has_limits": j.limits is not None,
                    "dof_offset": None,
                }
                if j.dof_count:
                    slot["dof_offset"] = self.env_dof_base + doff + dof_cursor
                    for d in range(j.dof_count):
                        self.dof_slots.append((slot, d))
                    dof_cursor += j.dof_count
                self.joint_slots.append(slot)
                specs.append(j)
                if j.stiffness > 0 and slot["dof_offset"] is not None:
                    self.dof_mode[slot["dof_offset"]] = MODE_POSITION
        n = len(specs)
        self.joint_stiffness = np.array([[j.stiffness] * E for j in specs]).reshape(n, E)
        self.joint_damping = np.array([[j.damping] * E for j in specs]).reshape(n, E)
        self.joint_armature = np.array([[j.armature] * E for j in specs]).reshape(n, E)
        self.joint_friction = np.array([[j.friction] * E for j in specs]).reshape(n, E)
        self.joint_limit_lo = np.array(
            [[j.limits[0] if j.limits else -np.inf] * E for j in specs]).reshape(n, E)
        self.joint_limit_hi = np.array(
            [[j.limits[1] if j.limits else np.inf] * E for j in specs]).reshape(n, E)

    def _collidable_shapes(self):
        shapes = []
        for a, m in enumerate(self.models):
            boff = self.actor_body_offset[a]
            for li, link in enumerate(m.links):
                if link.shape is not None and link.collision and link.shape.kind != "none":
                    shapes.append((a, boff + li, link.shape))
        return shapes

    def _build_contacts(self):
        """Static candidate contact slots (geometry evaluated each step)."""
        self.plane_slots = []  # (body local idx, local offset point, radius)
        self.pair_slots = []  # (body local a, shape a, body local b, shape b)
        shapes = self._collidable_shapes()
        for a, local, shape in shapes:
            off = np.asarray(shape.offset)
            if shape.kind == "sphere":
                self.plane_slots.append((local, off, shape.params[0]))
            elif shape.kind == "capsule":
                r, hh = shape.params
                for s in (-1.0, 1.0):
                    self.plane_slots.append((local, off + np.array([0, 0, s * hh]), r))
            elif shape.kind == "box":
                hx, hy, hz = shape.params
                for sx in (-1, 1):
                    for sy in (-1, 1):
                        for sz in (-1, 1):
                            self.plane_slots.append((local, off + np.array([sx * hx, sy * hy, sz * hz]), 0.0))
        if not self.ground:
            self.plane_slots = []
        # Sphere-sphere pairs between different actors in the same env.
        for i in range(len(shapes)):
            for k in range(i + 1, len(shapes)):
                ai, li_, si = shapes[i]
                ak, lk, sk = shapes[k]
                if ai == ak:
                    continue  # self-collision within an actor is off
                if si.kind == "sphere" and sk.kind == "sphere":
                    self.pair_slots.append((li_, si, lk, sk))
        # Per-env geometry arrays; dimension randomization scales these.
        E = self.num_envs
        np_ = len(self.plane_slots)
        self.plane_off = np.zeros((np_, E, 3))
        self.plane_rad = np.zeros((np_, E))
        for si, (_, off, radius) in enumerate(self.plane_slots):
            self.plane_off[si] = off
            self.plane_rad[si] = radius
        self.pair_rad = np.zeros((len(self.pair_slots), E, 2))
        self.pair_off = np.zeros((len(self.pair_slots), E, 2, 3))
        for si, (_, sa, _, sb) in enumerate(self.pair_slots):
            self.pair_rad[si, :, 0] = sa.params[0]
            self.pair_rad[si, :, 1] = sb.params[0]
            self.pair_off[si, :, 0] = np.asarray(sa.offset)
            self.pair_off[si, :, 1] = np.asarray(sb.offset)
        # Friction anchor storage per plane slot.
        self._friction_anchor = np.full((np_, self.num_envs, 3), np.nan)

    def _init_poses(self):
        for a, m in enumerate(self.models):
            base = self.env_body_base + self.actor_body_offset[a]
            self.pos[base] = self.env_origins
            self.quat[base] = np.array([0.0, 0.0, 0.0, 1.0])
        self.forward_kinematics()

    # ------------------------------------------------------------ kinematics

    def forward_kinematics(self, env_mask=None, actors=None):
        """Recompute descendant link poses/velocities from root states + DOF buffer.

        env_mask selects environments (boolean over num_envs); None = all.
        actors restricts the update to the given actor indices within an env.
        """
        sel = slice(None) if env_mask is None else env_mask
        for slot in self.joint_slots:
            if actors is not None and slot["actor"] not in actors:
                continue
            p = slot["parent"][sel]
            c = slot["child"][sel]
            qp = self.quat[p]
            jq = quat_mul(qp, slot["origin_quat"])
            jp = self.pos[p] + quat_rotate(qp, slot["origin_pos"])
            kind = slot["kind"]
            if kind == "fixed":
                motion_q = np.broadcast_to(np.array([0.0, 0.0, 0.0, 1.0]), jq.shape)
                motion_p = np.zeros(jp.shape)
                qd_ang = np.zeros(jp.shape)
                qd_lin = np.zeros(jp.shape)
            else:
                off = slot["dof_offset"]
                off = off[sel]
                if kind == "revolute":
                    q = self.dof_state[off, 0]
                    qd = self.dof_state[off, 1]
                    half = 0.5 * q
                    ax = slot["axis_local"]
                    motion_q = np.concatenate([ax * np.sin(half)[:, None], np.cos(half)[:, None]], axis=-1)
                    motion_p = np.zeros(jp.shape)
                    qd_ang = quat_rotate(jq, ax) * qd[:, None]
                    qd_lin = np.zeros(jp.shape)
                elif kind == "prismatic":
                    q = self.dof_state[off, 0]
                    qd = self.dof_state[off, 1]
                    ax = slot["axis_local"]
                    motion_q = np.broadcast_to(np.array([0.0, 0.0, 0.0, 1.0]), jq.shape)
                    motion_p = ax * q[:, None]
                    qd_ang = np.zeros(jp.shape)
                    qd_lin = quat_rotate(jq, ax) * qd[:, None]
                else:  # spherical: exponential coordinates
                    q3 = np.stack([self.dof_state[off + d, 0] for d in range(3)], axis=-1)
                    qd3 = np.stack([self.dof_state[off + d, 1] for d in range(3)], axis=-1)
                    motion_q = quat_exp_map(q3)
                    motion_p = np.zeros(jp.shape)
                    qd_ang = quat_rotate(jq, qd3)
                    qd_lin = np.zeros(jp.shape)
            q_child_frame = quat_mul(jq, motion_q)
            anchor_world = jp + quat_rotate(jq, motion_p)
            # child body frame: anchor = pos_c + R_c @ child_pos
            qc = quat_normalize(quat_mul(q_child_frame, quat_conjugate(slot["child_quat"])))
            pc = anchor_world - quat_rotate(qc, slot["child_pos"])
            self.quat[c] = qc
            self.pos[c] = pc
            # velocity propagation
            v_anchor = self.linvel[p] + cross3(self.angvel[p], anchor_world - self.pos[p])
            w_c = self.angvel[p] + qd_ang
            self.angvel[c] = w_c
            self.linvel[c] = v_anchor + qd_lin + cross3(w_c, pc - anchor_world)

    def read_dof_states(self):
        """Reduced-coordinate readout from maximal body states into dof_state."""
        for slot, _ in [(s, 0) for s in self.joint_slots if s["dof_offset"] is not None]:
            p, c = slot["parent"], slot["child"]
            jq_p = quat_mul(self.quat[p], slot["origin_quat"])
            jq_c = quat_mul(self.quat[c], slot["child_quat"])
            off = slot["dof_offset"]
            kind = slot["kind"]
            if kind == "revolute":
                q_rel = quat_mul(quat_conjugate(jq_p), jq_c)
                ax = slot["axis_local"]
                s = np.sum(q_rel[:, :3] * ax, axis=-1)
                angle = 2.0 * np.arctan2(s, q_rel[:, 3])
                angle = (angle + np.pi) % (2 * np.pi) - np.pi
                a_w = quat_rotate(jq_p, ax)
                qd = np.sum(a_w * (self.angvel[c] - self.angvel[p]), axis=-1)
                self.dof_state[off, 0] = angle
                self.dof_state[off, 1] = qd
            elif kind == "prismatic":
                ap = self.pos[p] + quat_rotate(self.quat[p], slot["origin_pos"])
                ac = self.pos[c] + quat_rotate(self.quat[c], slot["child_pos"])
                a_w = quat_rotate(jq_p, slot["axis_local"])
                self.dof_state[off, 0] = np.sum(a_w * (ac - ap), axis=-1)
                v_ap = self.linvel[p] + cross3(self.angvel[p], ap - self.pos[p])
                v_ac = self.linvel[c] + cross3(self.angvel[c], ac - self.pos[c])
                self.dof_state[off, 1] = np.sum(a_w * (v_ac - v_ap), axis=-1)
            else:  # spherical
                q_rel = quat_mul(quat_conjugate(jq_p), jq_c)
                rv = quat_log_map(q_rel)
                w_rel = quat_rotate(quat_conjugate(jq_p), self.angvel[c] - self.angvel[p])
                for d in range(3):
                    self.dof_state[off + d, 0] = rv[:, d]
                    self.dof_state[off + d, 1] = w_rel[:, d]

    # ------------------------------------------------------------ collision

    def _contact_geometry(self):
        """Evaluate candidate slots against current poses; returns active arrays."""
        p = self.params
        plane = []
        for si, (local, _, _) in enumerate(self.plane_slots):
            idx = self.env_body_base + local
            radius = self.plane_rad[si]
            center = self.pos[idx] + quat_rotate(self.quat[idx], self.plane_off[si])
            gap = center[:, 2] - radius
            depth = p.rest_offset - gap
            point = center.copy()
            point[:, 2] -= radius
            plane.append({
                "slot": si, "body": idx, "point": point,
                "depth": depth, "normal": np.array([0.0, 0.0, 1.0]),
                "active": depth > -p.solver_offset_slop,
            })
        pairs = []
        for si, (la, sa, lb, sb) in enumerate(self.pair_slots):
            ia = self.env_body_base + la
            ib = self.env_body_base + lb
            ra = self.pair_rad[si, :, 0]
            rb_ = self.pair_rad[si, :, 1]
            ca = self.pos[ia] + quat_rotate(self.quat[ia], self.pair_off[si, :, 0])
            cb = self.pos[ib] + quat_rotate(self.quat[ib], self.pair_off[si, :, 1])
            d = cb - ca
            dist = np.linalg.norm(d, axis=-1)
            n = d / np.where(dist > 1e-12, dist, 1.0)[:, None]
            gap = dist - (ra + rb_)
            depth = p.rest_offset - gap
            point = ca + n * (ra + 0.5 * gap)[:, None]
            pairs.append({
                "body_a": ia, "body_b": ib, "point": point, "normal": n,
                "depth": depth, "active": depth > -p.solver_offset_slop,
            })
        return plane, pairs

    def collide(self):
        """Contact list for inspection/tests; same math the solver uses."""
        plane, pairs = self._contact_geometry()
        out = []
        for c in plane:
            for e in np.nonzero(c["active"])[0]:
                anchor = self._friction_anchor[c["slot"], e]
                out.append(ContactPoint(
                    body_a=-1, body_b=int(c["body"][e]), normal=c["normal"].copy(),
                    depth=float(c["depth"][e]), point=c["point"][e].copy(),
                    friction_anchor=None if np.isnan(anchor).any() else anchor.copy()))
        for c in pairs:
            for e in np.nonzero(c["active"])[0]:
                out.append(ContactPoint(
                    body_a=int(c["body_a"][e]), body_b=int(c["body_b"][e]),
                    normal=c["normal"][e].copy(), depth=float(c["depth"][e]),
                    point=c["point"][e].copy()))
        return self._merge_friction(out)

    def _merge_friction(self, contacts):
        """Within a body pair, contacts closer than the correlation distance
        share one friction constraint (the first contact carries it)."""
        dmax = self.params.friction_correlation_distance
        carriers = {}
        for c in contacts:
            key = (c.body_a, c.body_b)
            merged = False
            for pt in carriers.get(key, []):
                if np.linalg.norm(c.point - pt) < dmax:
                    c.friction_anchor = None
                    merged = True
                    break
            if not merged:
                carriers.setdefault(key, []).append(c.point)
        return contacts

    # ----------------------------------------------------------------- step

    def step(self):
        p = self.params
        dt = p.dt
        N = p.position_iterations
        h = dt / N
        g = self.gravity[self.body_env]

        dyn = self.inv_mass > 0
        # External forces: gravity + submitted body forces/torques + tendons.
        self.linvel[dyn] += dt * g[dyn]
        f = np.clip(self.ctrl_body_force, -p.max_force, p.max_force)
        tau = np.clip(self.ctrl_body_torque, -p.max_force, p.max_force)
        self.linvel += dt * f * self.inv_mass[:, None]
        inv_I = self._inv_inertia_world()
        self.angvel += dt * _mv(inv_I, tau)
        self._apply_tendon_forces(dt, inv_I)
        self.linvel *= max(0.0, 1.0 - p.linear_damping * dt)
        self.angvel *= max(0.0, 1.0 - p.angular_damping * dt)

        self.read_dof_states()
        ctx = self._freeze_constraints(inv_I)

        # TGS position iterations with per-body accumulated delta buffers.
        # Joint rows re-anchor against the delta-advanced poses each pass
        # (the rotational anchor term, applied exactly); contact rows keep
        # their frozen Jacobians and track depth linearly along the normal.
        dpos = np.zeros_like(self.pos)
        dang = np.zeros_like(self.angvel)
        ctx["dpos"], ctx["dang"] = dpos, dang
        for k in range(N):
            if k:
                self._refresh_joint_geometry(ctx, dpos, dang)
            self._solve_pass(ctx, h, biased=True)
            dpos += self.linvel * h
            dang += self.angvel * h

        self.pos += dpos
        self.quat[:] = quat_normalize(quat_mul(quat_exp_map(dang), self.quat))

        # Velocity iterations project against the post-integration geometry;
        # frozen arms here would bleed energy out of rotating joints.
        self._refresh_joint_geometry(ctx)
        for _ in range(p.velocity_iterations):
            self._solve_pass(ctx, h, biased=False)

        # Velocity clamps.
        ln = np.linalg.norm(self.linvel, axis=-1, keepdims=True)
        self.linvel *= np.minimum(1.0, p.max_linear_velocity / np.maximum(ln, 1e-12))
        an = np.linalg.norm(self.angvel, axis=-1, keepdims=True)
        self.angvel *= np.minimum(1.0, p.max_angular_velocity / np.maximum(an, 1e-12))

        self._update_friction_anchors(ctx)
        self.step_count += 1
        self.refresh_buffers(ctx)
        self._flag_nonfinite()

    def _inv_inertia_world(self):
        R = quat_to_matrix(self.quat)
        return (R * self.inv_inertia_local[:, None, :]) @ R.swapaxes(-1, -2)

    def _apply_tendon_forces(self, dt, inv_I):
        for a, m in enumerate(self.models):
            if not m.tendons:
                continue
            boff = self.actor_body_offset[a]
            doff = self.actor_dof_offset[a]
            E, B, D = self.num_envs, self.bodies_per_env, self.dofs_per_env
            dof_pos = self.dof_state[:, 0].reshape(E, D)[:, doff:doff + m.num_dofs]
            dof_vel = self.dof_state[:, 1].reshape(E, D)[:, doff:doff + m.num_dofs]
            body_idx = self.env_body_base[:, None] + boff + np.arange(m.num_bodies)[None, :]
            bp = self.pos[body_idx]
            bq = self.quat[body_idx]
            dof_map = {off: joint for joint, off in _dof_joint_pairs(m)}
            for spec in m.tendons:
                if spec.kind == "fixed":
                    qforce, _ = _tendons.fixed_tendon_forces(m, spec, dof_pos, dof_vel)
                    for dloc in range(m.num_dofs):
                        qcol = qforce[:, dloc]
                        if not np.any(qcol):
                            continue
                        joint = dof_map[dloc]
                        self._apply_generalized_force(a, joint, qcol, dt, inv_I,
                                                      reaction_link=self._tendon_root_parent(m, spec))
                else:
                    bl = self.linvel[body_idx]
                    bw = self.angvel[body_idx]
                    entries = _tendons.spatial_tendon_forces(m, spec, bp, bq, bl, bw)
                    for (li, pt, force) in entries:
                        gi = self.env_body_base + boff + li
                        self.linvel[gi] += dt * force * self.inv_mass[gi, None]
                        r = pt - self.pos[gi]
                        self.angvel[gi] += dt * _mv(inv_I[gi], cross3(r, force))

    @staticmethod
    def _tendon_root_parent(m, spec):
        root_joint = m.joints[m.joint_index(spec.joints[0].dof)]
        return m.link_index(root_joint.parent)

    def _apply_generalized_force(self, actor, joint, q_force, dt, inv_I, reaction_link):
        """Apply a generalized force on a 1-DOF joint's child link, with the
        equal-and-opposite reaction on the tendon root parent link."""
        m = self.models[actor]
        boff = self.actor_body_offset[actor]
        ci = self.env_body_base + boff + m.link_index(joint.child)
        ri = self.env_body_base + boff + reaction_link
        jq = quat_mul(self.quat[self.env_body_base + boff + m.link_index(joint.parent)],
                      np.asarray(joint.origin_quat))
        a_w = quat_rotate(jq, np.asarray(joint.axis))
        if joint.kind == "revolute":
            L = a_w * q_force[:, None] * dt
            self.angvel[ci] += _mv(inv_I[ci], L)
            self.angvel[ri] -= _mv(inv_I[ri], L)
        else:
            P = a_w * q_force[:, None] * dt
            self.linvel[ci] += P * self.inv_mass[ci, None]
            self.linvel[ri] -= P * self.inv_mass[ri, None]

    # ------------------------------------------------------- constraint prep

    def _freeze_constraints(self, inv_I):
        p = self.params
        ctx = {"inv_I": inv_I, "joints": [], "contacts": []}
        for slot in self.joint_slots:
            pi, ci = slot["parent"], slot["child"]
            qp, qc = self.quat[pi], self.quat[ci]
            jq_p = quat_mul(qp, slot["origin_quat"])
            jq_c = quat_mul(qc, slot["child_quat"])
            ap = self.pos[pi] + quat_rotate(qp, slot["origin_pos"])
            ac = self.pos[ci] + quat_rotate(qc, slot["child_pos"])
            a_w = quat_rotate(jq_p, slot["axis_local"])
            t1, t2 = _orthonormal_tangents(a_w)
            q_err = quat_mul(jq_c, quat_conjugate(jq_p))
            rot_err = 2.0 * q_err[:, :3] * np.sign(q_err[:, 3:4])
            jc = {
                "slot": slot, "p": pi, "c": ci,
                "rp": ap - self.pos[pi], "rc": ac - self.pos[ci],
                "perr0": ac - ap, "rerr0": rot_err,
                "axis": a_w, "t1": t1, "t2": t2,
                "q0": None, "qd_index": slot["dof_offset"],
            }
            if slot["dof_offset"] is not None and slot["kind"] in ("revolute", "prismatic"):
                jc["q0"] = self.dof_state[slot["dof_offset"], 0].copy()
            ctx["joints"].append(jc)

        plane, pairs = self._contact_geometry()
        for c in plane:
            idx = c["body"]
            n = np.broadcast_to(c["normal"], (self.num_envs, 3))
            r = c["point"] - self.pos[idx]
            vn = np.sum(n * (self.linvel[idx] + cross3(self.angvel[idx], r)), axis=-1)
            rest = np.where(vn < -p.bounce_threshold, -p.restitution * vn, 0.0)
            anchor = self._friction_anchor[c["slot"]]
            terr = np.where(np.isnan(anchor[:, :1]), 0.0, c["point"] - np.nan_to_num(anchor))
            terr[:, 2] = 0.0
            ctx["contacts"].append({
                "kind": "plane", "slot": c["slot"], "b": idx, "r": r, "n": n,
                "depth0": c["depth"], "active": c["active"], "restitution": rest,
                "lam_n": np.zeros(self.num_envs), "lam_t": np.zeros((self.num_envs, 2)),
                "point": c["point"], "terr0": terr,
            })
        for c in pairs:
            ia, ib = c["body_a"], c["body_b"]
            n = c["normal"]
            ra = c["point"] - self.pos[ia]
            rb = c["point"] - self.pos[ib]
            va = self.linvel[ia] + cross3(self.angvel[ia], ra)
            vb = self.linvel[ib] + cross3(self.angvel[ib], rb)
            vn = np.sum(n * (vb - va), axis=-1)
            rest = np.where(vn < -p.bounce_threshold, -p.restitution * vn, 0.0)
            ctx["contacts"].append({
                "kind": "pair", "a": ia, "b": ib, "ra": ra, "rb": rb, "n": n,
                "depth0": c["depth"], "active": c["active"], "restitution": rest,
                "lam_n": np.zeros(self.num_envs), "lam_t": np.zeros((self.num_envs, 2)),
                "point": c["point"],
            })
        ctx["dof_impulse"] = np.zeros(self.num_dofs)
        ctx["dpos"] = np.zeros_like(self.pos)
        ctx["dang"] = np.zeros_like(self.angvel)
        return ctx

    def _refresh_joint_geometry(self, ctx, dpos=None, dang=None):
        """Re-anchor every joint row against the delta-advanced poses.

        With deltas given, the effective pose is (pos + dpos, exp(dang) * q);
        without, the already-updated body state is used (velocity passes).
        Positional and rotational errors are re-measured exactly so the
        accumulated rotation feeds back into the bias terms.
        """
        if dpos is None:
            pos_eff, quat_eff = self.pos, self.quat
        else:
            pos_eff = self.pos + dpos
            quat_eff = quat_normalize(quat_mul(quat_exp_map(dang), self.quat))
        R = quat_to_matrix(quat_eff)
        ctx["inv_I"] = (R * self.inv_inertia_local[:, None, :]) @ R.swapaxes(-1, -2)
        for jc in ctx["joints"]:
            slot = jc["slot"]
            pi, ci = jc["p"], jc["c"]
            qp, qc = quat_eff[pi], quat_eff[ci]
            jq_p = quat_mul(qp, slot["origin_quat"])
            jq_c = quat_mul(qc, slot["child_quat"])
            ap = pos_eff[pi] + quat_rotate(qp, slot["origin_pos"])
            ac = pos_eff[ci] + quat_rotate(qc, slot["child_pos"])
            jc["rp"] = ap - pos_eff[pi]
            jc["rc"] = ac - pos_eff[ci]
            jc["perr0"] = ac - ap
            q_err = quat_mul(jq_c, quat_conjugate(jq_p))
            jc["rerr0"] = 2.0 * q_err[:, :3] * np.sign(q_err[:, 3:4])
            a_w = quat_rotate(jq_p, slot["axis_local"])
            jc["axis"] = a_w
            jc["t1"], jc["t2"] = _orthonormal_tangents(a_w)
            if jc["q0"] is not None:
                if slot["kind"] == "revolute":
                    q_rel = quat_mul(quat_conjugate(jq_p), jq_c)
                    s = np.sum(q_rel[:, :3] * slot["axis_local"], axis=-1)
                    ang = 2.0 * np.arctan2(s, q_rel[:, 3])
                    jc["q0"] = (ang + np.pi) % (2 * np.pi) - np.pi
                else:
                    jc["q0"] = np.sum(a_w * (ac - ap), axis=-1)

    # ---------------------------------------------------------- solver pass

    def _solve_pass(self, ctx, h, biased):
        for jc in ctx["joints"]:
            kind = jc["slot"]["kind"]
            self._solve_drive(ctx, jc, h, biased)
            if kind in ("revolute", "spherical", "fixed"):
                self._solve_point3(ctx, jc, h, biased)
            if kind == "revolute":
                self._solve_angular(ctx, jc, h, biased, lock_axis=False)
            elif kind == "fixed":
                self._solve_angular(ctx, jc, h, biased, lock_axis=True)
            elif kind == "prismatic":
                self._solve_angular(ctx, jc, h, biased, lock_axis=True)
                self._solve_prismatic_perp(ctx, jc, h, biased)
            self._solve_limit(ctx, jc, h, biased)
        for con in ctx["contacts"]:
            self._solve_contact(ctx, con, h, biased)

    def _axis_row_meff(self, ctx, jc, angular):
        inv_I = ctx["inv_I"]
        a = jc["axis"]
        if angular:
            k = _vMv(a, inv_I[jc["p"]] + inv_I[jc["c"]], a)
        else:
            rpxa = cross3(jc["rp"], a)
            rcxa = cross3(jc["rc"], a)
            k = (self.inv_mass[jc["p"]] + self.inv_mass[jc["c"]]
                 + _vMv(rpxa, inv_I[jc["p"]], rpxa)
                 + _vMv(rcxa, inv_I[jc["c"]], rcxa))
        return 1.0 / np.maximum(k, 1e-12)

    def _apply_axis_impulse(self, ctx, jc, lam, angular):
        inv_I = ctx["inv_I"]
        a = jc["axis"]
        if angular:
            L = a * lam[:, None]
            self.angvel[jc["c"]] += _mv(inv_I[jc["c"]], L)
            self.angvel[jc["p"]] -= _mv(inv_I[jc["p"]], L)
        else:
            P = a * lam[:, None]
            self.linvel[jc["c"]] += P * self.inv_mass[jc["c"], None]
            self.angvel[jc["c"]] += _mv(inv_I[jc["c"]], cross3(jc["rc"], P))
            self.linvel[jc["p"]] -= P * self.inv_mass[jc["p"], None]
            self.angvel[jc["p"]] -= _mv(inv_I[jc["p"]], cross3(jc["rp"], P))

    def _axis_rel_vel(self, jc, angular):
        a = jc["axis"]
        if angular:
            return np.sum(a * (self.angvel[jc["c"]] - self.angvel[jc["p"]]), axis=-1)
        vp = self.linvel[jc["p"]] + cross3(self.angvel[jc["p"]], jc["rp"])
        vc = self.linvel[jc["c"]] + cross3(self.angvel[jc["c"]], jc["rc"])
        return np.sum(a * (vc - vp), axis=-1)

    def _solve_drive(self, ctx, jc, h, biased):
        """PD drives, direct actuation, and joint dry friction on the DOF axis.

        Drive torque is re-evaluated each iteration against the
        iteration-updated joint state (implicit-style PD). Armature enters as
        extra inertia on the joint-space effective mass.
        """
        slot = jc["slot"]
        if slot["dof_offset"] is None or slot["kind"] == "spherical" or not biased:
            return
        p = self.params
        off = slot["dof_offset"]
        angular = slot["kind"] == "revolute"
        qd = self._axis_rel_vel(jc, angular)
        mode = self.dof_mode[off]
        q = jc["q0"]
        meff = self._axis_row_meff(ctx, jc, angular)
        si = slot["index"]
        ia = meff + self.joint_armature[si]
        # Direct actuation: armature soaks up part of the applied impulse.
        tau = np.clip(self.ctrl_dof_force[off], -p.max_force, p.max_force)
        lam = np.where(mode == MODE_FORCE, tau * h * meff / ia, 0.0)
        # PD/velocity drives, discretized implicitly on the joint axis so
        # stiff gains stay stable against small apparent inertias:
        # lam = h (k (e - h qd) + c (qd* - qd)) / (1 + h (h k + c) / ia).
        k = np.where(mode == MODE_POSITION, self.joint_stiffness[si], 0.0)
        c = np.where(mode == MODE_FORCE, 0.0, self.joint_damping[si])
        e = self.ctrl_dof_pos_target[off] - q
        dv = self.ctrl_dof_vel_target[off] - qd
        lam_pd = h * (k * (e - h * qd) + c * dv) / (1.0 + h * (h * k + c) / ia)
        lam_pd = np.clip(lam_pd, -p.max_force * h, p.max_force * h)
        lam = lam + lam_pd
        fr = self.joint_friction[si]
        if np.any(fr > 0.0):
            lam = lam + np.clip(-qd * meff, -fr * h, fr * h)
        self._apply_axis_impulse(ctx, jc, lam, angular)
        ctx["dof_impulse"][off] += lam

    def _solve_limit(self, ctx, jc, h, biased):
        slot = jc["slot"]
        if not slot["has_limits"] or slot["dof_offset"] is None or slot["kind"] == "spherical":
            return
        lo = self.joint_limit_lo[slot["index"]]
        hi = self.joint_limit_hi[slot["index"]]
        angular = slot["kind"] == "revolute"
        q = jc["q0"] if biased else self.dof_state[slot["dof_offset"], 0]
        qd = self._axis_rel_vel(jc, angular)
        meff = self._axis_row_meff(ctx, jc, angular)
        # Lower limit pushes +axis, upper pushes -axis; one-sided impulses.
        bias_lo = np.clip(lo - q, 0.0, None) / h if biased else 0.0
        bias_hi = np.clip(q - hi, 0.0, None) / h if biased else 0.0
        lam = np.zeros(self.num_envs)
        viol_lo = q < lo
        lam = np.where(viol_lo, np.clip(meff * (bias_lo - qd), 0.0, None), lam)
        viol_hi = q > hi
        lam = np.where(viol_hi, -np.clip(meff * (bias_hi + qd), 0.0, None), lam)
        if np.any(viol_lo | viol_hi):
            self._apply_axis_impulse(ctx, jc, lam, angular)
            ctx["dof_impulse"][slot["dof_offset"]] += lam

    def _solve_point3(self, ctx, jc, h, biased):
        inv_I = ctx["inv_I"]
        p_, c_ = jc["p"], jc["c"]
        rp, rc = jc["rp"], jc["rc"]
        vp = self.linvel[p_] + cross3(self.angvel[p_], rp)
        vc = self.linvel[c_] + cross3(self.angvel[c_], rc)
        rel = vc - vp
        # perr0 already reflects the delta-advanced anchors (the rotational
        # anchor term), re-measured at the top of each position iteration.
        target = -jc["perr0"] / h if biased else 0.0
        sp = _skew(rp)
        sc = _skew(rc)
        K = ((self.inv_mass[p_] + self.inv_mass[c_])[:, None, None] * np.eye(3)
             - sp @ inv_I[p_] @ sp - sc @ inv_I[c_] @ sc)
        P = np.linalg.solve(K, (target - rel)[..., None])[..., 0]
        self.linvel[c_] += P * self.inv_mass[c_, None]
        self.angvel[c_] += _mv(inv_I[c_], cross3(rc, P))
        self.linvel[p_] -= P * self.inv_mass[p_, None]
        self.angvel[p_] -= _mv(inv_I[p_], cross3(rp, P))

    def _solve_angular(self, ctx, jc, h, biased, lock_axis):
        inv_I = ctx["inv_I"]
        p_, c_ = jc["p"], jc["c"]
        axes = [jc["t1"], jc["t2"]] + ([jc["axis"]] if lock_axis else [])
        n = len(axes)
        rel = self.angvel[c_] - self.angvel[p_]
        target = -jc["rerr0"] / h if biased else np.zeros_like(rel)
        Isum = inv_I[p_] + inv_I[c_]
        A = np.stack(axes, axis=1)  # (E, n, 3)
        K = A @ Isum @ A.swapaxes(-1, -2)
        rhs = _mv(A, target - rel) if biased else -_mv(A, rel)
        lam = np.linalg.solve(K, rhs[..., None])[..., 0]
        L = np.sum(lam[..., None] * A, axis=1)
        self.angvel[c_] += _mv(inv_I[c_], L)
        self.angvel[p_] -= _mv(inv_I[p_], L)

    def _solve_prismatic_perp(self, ctx, jc, h, biased):
        inv_I = ctx["inv_I"]
        p_, c_ = jc["p"], jc["c"]
        rp, rc = jc["rp"], jc["rc"]
        vp = self.linvel[p_] + cross3(self.angvel[p_], rp)
        vc = self.linvel[c_] + cross3(self.angvel[c_], rc)
        rel = vc - vp
        target = -jc["perr0"] / h if biased else np.zeros_like(rel)
        T = np.stack([jc["t1"], jc["t2"]], axis=1)  # (E, 2, 3)
        rpxt = cross3(rp[:, None, :], T)
        rcxt = cross3(rc[:, None, :], T)
        K = (T @ T.swapaxes(-1, -2) * (self.inv_mass[p_] + self.inv_mass[c_])[:, None, None]
             + rpxt @ inv_I[p_] @ rpxt.swapaxes(-1, -2)
             + rcxt @ inv_I[c_] @ rcxt.swapaxes(-1, -2))
        rhs = _mv(T, target - rel)
        lam = np.linalg.solve(K, rhs[..., None])[..., 0]
        P = np.sum(lam[..., None] * T, axis=1)
        self.linvel[c_] += P * self.inv_mass[c_, None]
        self.angvel[c_] += _mv(inv_I[c_], cross3(rc, P))
        self.linvel[p_] -= P * self.inv_mass[p_, None]
        self.angvel[p_] -= _mv(inv_I[p_], cross3(rp, P))

    def _solve_contact(self, ctx, con, h, biased):
        p = self.params
        inv_I = ctx["inv_I"]
        active = con["active"]
        if not np.any(active):
            return
        n = con["n"]
        if con["kind"] == "plane":
            b = con["b"]
            r = con["r"]
            v = self.linvel[b] + cross3(self.angvel[b], r)
            vn = np.sum(n * v, axis=-1)
            depth = con["depth0"] + (np.sum(n * ctx["dpos"][b], axis=-1) * -1.0 if biased else 0.0)
        else:
            a_, b = con["a"], con["b"]
            ra, rb = con["ra"], con["rb"]
            v = (self.linvel[b] + cross3(self.angvel[b], rb)
                 - self.linvel[a_] - cross3(self.angvel[a_], ra))
            vn = np.sum(n * v, axis=-1)
            depth = con["depth0"] + (np.sum(n * (ctx["dpos"][b] - ctx["dpos"][a_]), axis=-1) * -1.0 if biased else 0.0)

        # Normal row: push apart until gap = rest_offset; bounce only above
        # the bounce threshold (restitution target captured at step start).
        bias = p.max_bias * np.clip(depth, 0.0, None) / p.dt if biased else 0.0
        target = np.maximum(con["restitution"], bias)
        meff_n = self._contact_meff(ctx, con, n)
        dlam = meff_n * (target - vn)
        new_lam = np.clip(con["lam_n"] + dlam, 0.0, None)
        dlam = np.where(active, new_lam - con["lam_n"], 0.0)
        con["lam_n"] = con["lam_n"] + dlam
        self._apply_contact_impulse(ctx, con, n * dlam[:, None])

        # Friction: two tangent rows, impulse clamped to the friction cone.
        # Plane contacts with a persisted anchor get a stiction bias pulling
        # the contact point back to the anchor (updated linearly from dpos).
        t1, t2 = _orthonormal_tangents(n)
        rel_t = self._contact_rel_vel(con)
        vt1 = np.sum(t1 * rel_t, axis=-1)
        vt2 = np.sum(t2 * rel_t, axis=-1)
        mu = np.where(np.hypot(vt1, vt2) > 1e-3, self.mu_dynamic, self.mu_static)
        if biased and con["kind"] == "plane":
            terr = con["terr0"] + ctx["dpos"][con["b"]]
            vt1 = vt1 + np.sum(t1 * terr, axis=-1) / p.dt
            vt2 = vt2 + np.sum(t2 * terr, axis=-1) / p.dt
        m1 = self._contact_meff(ctx, con, t1)
        m2 = self._contact_meff(ctx, con, t2)
        cand = con["lam_t"] + np.stack([-m1 * vt1, -m2 * vt2], axis=-1)
        lim = mu * con["lam_n"]
        norm = np.linalg.norm(cand, axis=-1)
        scale = np.where(norm > lim, lim / np.maximum(norm, 1e-12), 1.0)
        cand = cand * scale[:, None]
        dlt = np.where(active[:, None], cand - con["lam_t"], 0.0)
        con["lam_t"] = con["lam_t"] + dlt
        self._apply_contact_impulse(ctx, con, t1 * dlt[:, 0:1] + t2 * dlt[:, 1:2])

    def _contact_rel_vel(self, con):
        if con["kind"] == "plane":
            b = con["b"]
            return self.linvel[b] + cross3(self.angvel[b], con["r"])
        a_, b = con["a"], con["b"]
        return (self.linvel[b] + cross3(self.angvel[b], con["rb"])
                - self.linvel[a_] - cross3(self.angvel[a_], con["ra"]))

    def _contact_meff(self, ctx, con, d):
        inv_I = ctx["inv_I"]
        if con["kind"] == "plane":
            b = con["b"]
            rxd = cross3(con["r"], d)
            k = self.inv_mass[b] + _vMv(rxd, inv_I[b], rxd)
        else:
            a_, b = con["a"], con["b"]
            raxd = cross3(con["ra"], d)
            rbxd = cross3(con["rb"], d)
            k = (self.inv_mass[a_] + self.inv_mass[b]
                 + _vMv(raxd, inv_I[a_], raxd)
                 + _vMv(rbxd, inv_I[b], rbxd))
        return 1.0 / np.maximum(k, 1e-12)

    def _apply_contact_impulse(self, ctx, con, P):
        inv_I = ctx["inv_I"]
        if con["kind"] == "plane":
            b = con["b"]
            self.linvel[b] += P * self.inv_mass[b, None]
            self.angvel[b] += _mv(inv_I[b], cross3(con["r"], P))
        else:
            a_, b = con["a"], con["b"]
            self.linvel[b] += P * self.inv_mass[b, None]
            self.angvel[b] += _mv(inv_I[b], cross3(con["rb"], P))
            self.linvel[a_] -= P * self.inv_mass[a_, None]
            self.angvel[a_] -= _mv(inv_I[a_], cross3(con["ra"], P))

    def _update_friction_anchors(self, ctx):
        """Persist friction anchor points while separation stays inside the
        friction offset threshold; discard beyond it."""
        thr = self.params.friction_offset_threshold
        for con in ctx["contacts"]:
            if con["kind"] != "plane":
                continue
            si = con["slot"]
            near = con["depth0"] > -thr
            have = ~np.isnan(self._friction_anchor[si, :, 0])
            fresh = near & ~have
            self._friction_anchor[si, fresh] = con["point"][fresh]
            self._friction_anchor[si, ~near] = np.nan

    # -------------------------------------------------------------- readback

    def refresh_buffers(self, ctx=None):
        self.read_dof_states()
        self.body_state[:, 0:3] = self.pos
        self.body_state[:, 3:7] = self.quat
        self.body_state[:, 7:10] = self.linvel
        self.body_state[:, 10:13] = self.angvel
        for a in range(self.actors_per_env):
            base = self.env_body_base + self.actor_body_offset[a]
            rows = self.env_body_base // self.bodies_per_env * self.actors_per_env + a
            self.root_state[rows] = self.body_state[base]
        if ctx is not None:
            dt = self.params.dt
            self.net_contact[:] = 0.0
            torque = np.zeros_like(self.net_contact)
            for con in ctx["contacts"]:
                t1, t2 = _orthonormal_tangents(con["n"])
                P = (con["n"] * con["lam_n"][:, None]
                     + t1 * con["lam_t"][:, 0:1] + t2 * con["lam_t"][:, 1:2])
                if con["kind"] == "plane":
                    np.add.at(self.net_contact, con["b"], P / dt)
                    np.add.at(torque, con["b"], cross3(con["r"], P / dt))
                else:
                    np.add.at(self.net_contact, con["b"], P / dt)
                    np.add.at(torque, con["b"], cross3(con["rb"], P / dt))
                    np.add.at(self.net_contact, con["a"], -P / dt)
                    np.add.at(torque, con["a"], cross3(con["ra"], -P / dt))
            self.dof_force[:] = ctx["dof_impulse"] / dt
            # Sensors: contact wrench on the sensor body, in its local frame.
            if len(self.sensor_body):
                for k, local in enumerate(self.sensor_body):
                    gi = self.env_body_base + local
                    rows = np.arange(self.num_envs) * len(self.sensor_body) + k
                    qinv = quat_conjugate(self.quat[gi])
                    self.sensor_forces[rows, 0:3] = quat_rotate(qinv, self.net_contact[gi])
                    self.sensor_forces[rows, 3:6] = quat_rotate(qinv, torque[gi])

    def _flag_nonfinite(self):
        bad = ~np.isfinite(self.body_state).all(axis=-1)
        env_bad = np.zeros(self.num_envs, dtype=bool)
        np.logical_or.at(env_bad, self.body_env, bad)
        if np.any(env_bad):
            self.nonfinite |= env_bad
            # Stop NaNs from propagating: freeze the poisoned envs.
            rows = np.isin(self.body_env, np.nonzero(env_bad)[0])
            self.pos[rows] = np.where(np.isfinite(self.pos[rows]), self.pos[rows], 0.0)
            self.quat[rows] = np.where(np.isfinite(self.quat[rows]), self.quat[rows], 0.0)
            self.quat[rows] = quat_normalize(np.where(
                np.linalg.norm(self.quat[rows], axis=-1, keepdims=True) < 1e-9,
                np.array([0.0, 0.0, 0.0, 1.0]), self.quat[rows]))
            self.linvel[rows] = np.nan_to_num(self.linvel[rows], nan=0.0, posinf=0.0, neginf=0.0)
            self.angvel[rows] = np.nan_to_num(self.angvel[rows], nan=0.0, posinf=0.0, neginf=0.0)
            self.refresh_buffers()

    def clear_nonfinite(self, env_indices):
        self.nonfinite[env_indices] = False


def _dof_joint_pairs(model: ArticulationModel):
    out = []
    off = 0
    for j in model.joints:
        for _ in range(j.dof_count):
            out.append((j, off))
            off += 1
    return out
