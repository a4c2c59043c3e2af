"""Fixed and spatial tendon length computation and force application.

Fixed tendons couple articulation DOFs through a tree of tendon joints; the
length at a tendon joint is the length at its parent plus the joint position
scaled by the tendon joint's coefficient. Spatial tendons are weighted
line-of-sight distance constraints over attachment points on links, with one
sub-tendon per root-to-leaf path.

All functions batch over leading dimensions of the state buffers.
"""

from __future__ import annotations

import numpy as np

from .model import ArticulationModel, TendonSpec, dof_index_map
from .spatial import quat_rotate


class UnknownDof(KeyError):
    pass


class UnknownLink(KeyError):
    pass


def _tendon_dof_offsets(model: ArticulationModel, spec: TendonSpec):
    offsets = dict(dof_index_map(model))
    out = []
    for tj in spec.joints:
        if tj.dof not in offsets:
            raise UnknownDof(tj.dof)
        out.append(offsets[tj.dof])
    return out


def fixed_tendon_lengths(model: ArticulationModel, spec: TendonSpec, dof_pos):
    """Length at each tendon joint, accumulated from the root (parent length 0).

    dof_pos has shape (..., N_D); returns shape (..., num_tendon_joints).
    """
    dof_pos = np.asarray(dof_pos)
    offs = _tendon_dof_offsets(model, spec)
    lengths = np.zeros(dof_pos.shape[:-1] + (len(spec.joints),))
    for i, tj in enumerate(spec.joints):
        parent_len = lengths[..., tj.parent] if tj.parent >= 0 else 0.0
        lengths[..., i] = parent_len + tj.coefficient * dof_pos[..., offs[i]]
    return lengths


def _spring_force(spec: TendonSpec, length, length_rate):
    f = -spec.stiffness * (length - spec.rest_length) - spec.damping * length_rate
    if spec.limits is not None:
        lo, hi = spec.limits
        below = np.clip(lo - length, 0.0, None)
        above = np.clip(length - hi, 0.0, None)
        f = f + spec.limit_stiffness * below - spec.limit_stiffness * above
        # Limit forces share the tendon's damping term, gated to violations.
        violated = (below > 0) | (above > 0)
        f = f - np.where(violated, spec.damping * length_rate, 0.0)
    return f


def fixed_tendon_forces(model: ArticulationModel, spec: TendonSpec, dof_pos, dof_vel):
    """Generalized forces per DOF plus the root-parent reaction bookkeeping.

    Returns (dof_force, reactions), where dof_force has shape (..., N_D) and
    reactions is a list of (child link index, root parent link index,
    generalized force array) so callers can apply the equal-and-opposite
    spatial reaction.
    """
    dof_pos = np.asarray(dof_pos)
    dof_vel = np.asarray(dof_vel)
    offs = _tendon_dof_offsets(model, spec)
    lengths = fixed_tendon_lengths(model, spec, dof_pos)
    # Length rate at a tendon joint: sum of coefficient * joint velocity along
    # its root path (the "virtual joint" velocity used by the damper).
    rates = np.zeros_like(lengths)
    for i, tj in enumerate(spec.joints):
        parent_rate = rates[..., tj.parent] if tj.parent >= 0 else 0.0
        rates[..., i] = parent_rate + tj.coefficient * dof_vel[..., offs[i]]

    dof_force = np.zeros(dof_pos.shape)
    reactions = []
    root_tj = spec.joints[0]
    root_joint = model.joints[model.joint_index(root_tj.dof)]
    root_parent = model.link_index(root_joint.parent)
    for i, tj in enumerate(spec.joints):
        f = _spring_force(spec, lengths[..., i], rates[..., i])
        q = tj.coefficient * f
        dof_force[..., offs[i]] += q
        joint = model.joints[model.joint_index(tj.dof)]
        reactions.append((model.link_index(joint.child), root_parent, q))
    return dof_force, reactions


def _attachment_world(model: ArticulationModel, spec: TendonSpec, body_pos, body_quat):
    pts = []
    for at in spec.attachments:
        li = model.link_index(at.link)
        pts.append(body_pos[..., li, :] + quat_rotate(body_quat[..., li, :], np.asarray(at.offset)))
    return pts


def sub_tendon_paths(spec: TendonSpec):
    """Root-to-leaf attachment index paths, in attachment declaration order."""
    children = {i: [] for i in range(len(spec.attachments))}
    root = None
    for i, at in enumerate(spec.attachments):
        if at.parent < 0:
            root = i
        else:
            children[at.parent].append(i)
    paths = []

    def walk(i, path):
        path = path + [i]
        if not children[i]:
            paths.append(path)
        for c in children[i]:
            walk(c, path)

    walk(root, [])
    return paths


def spatial_tendon_lengths(model: ArticulationModel, spec: TendonSpec, body_pos, body_quat):
    """Per-sub-tendon lengths: sum of weighted segment distances along each path.

    body_pos: (..., N_B, 3); body_quat: (..., N_B, 4).
    Returns shape (..., num_sub_tendons).
    """
    body_pos = np.asarray(body_pos)
    body_quat = np.asarray(body_quat)
    pts = _attachment_world(model, spec, body_pos, body_quat)
    paths = sub_tendon_paths(spec)
    out = []
    for path in paths:
        total = 0.0
        for parent, child in zip(path[:-1], path[1:]):
            w = spec.attachments[child].weight
            total = total + w * np.linalg.norm(pts[child] - pts[parent], axis=-1)
        out.append(np.asarray(total, dtype=float) + np.zeros(body_pos.shape[:-2]))
    return np.stack(out, axis=-1)


def spatial_tendon_forces(model: ArticulationModel, spec: TendonSpec, body_pos, body_quat,
                          body_linvel, body_angvel):
    """Spatial forces from each sub-tendon, acting only on leaf and root.

    Returns a list of (link index, world point, world force) entries; forces
    on intermediate attachments are zero by construction.
    """
    body_pos = np.asarray(body_pos)
    body_quat = np.asarray(body_quat)
    pts = _attachment_world(model, spec, body_pos, body_quat)
    vels = []
    for at in spec.attachments:
        li = model.link_index(at.link)
        r = pts[len(vels)] - body_pos[..., li, :]
        vels.append(body_linvel[..., li, :] + np.cross(body_angvel[..., li, :], r))
    paths = sub_tendon_paths(spec)
    entries = []
    for path in paths:
        length = 0.0
        rate = 0.0
        for parent, child in zip(path[:-1], path[1:]):
            w = spec.attachments[child].weight
            d = pts[child] - pts[parent]
            dist = np.linalg.norm(d, axis=-1)
            safe = np.where(dist > 1e-12, dist, 1.0)
            u = d / safe[..., None]
            length = length + w * dist
            rate = rate + w * np.sum((vels[child] - vels[parent]) * u, axis=-1)
        f = _spring_force(spec, length, rate)
        leaf, root = path[-1], path[0]
        # Leaf is pulled toward its parent attachment; root toward its child
        # on the path. Stretch beyond rest gives negative f (contraction).
        d_leaf = pts[path[-2]] - pts[leaf]
        dl = np.linalg.norm(d_leaf, axis=-1)
        u_leaf = d_leaf / np.where(dl > 1e-12, dl, 1.0)[..., None]
        d_root = pts[path[1]] - pts[root]
        dr = np.linalg.norm(d_root, axis=-1)
        u_root = d_root / np.where(dr > 1e-12, dr, 1.0)[..., None]
        entries.append((model.link_index(spec.attachments[leaf].link), pts[leaf], -f[..., None] * u_leaf))
        entries.append((model.link_index(spec.attachments[root].link), pts[root], -f[..., None] * u_root))
    return entries
