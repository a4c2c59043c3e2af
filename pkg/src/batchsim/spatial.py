"""Quaternion, vector, and rigid-transform arithmetic.

Conventions
-----------
- Quaternions are stored as (x, y, z, w) with the scalar part last, so a
  13-float body state lays out as [pos 0:3, quat 3:7, linvel 7:10, angvel 10:13].
- All functions accept batches: inputs of shape (..., 4) or (..., 3).
- Angles are radians, positions are meters.
"""

from __future__ import annotations

import numpy as np

QUAT_IDENTITY = np.array([0.0, 0.0, 0.0, 1.0])


def cross3(a, b):
    """Cross product over (..., 3); avoids np.cross's axis bookkeeping."""
    a = np.asarray(a)
    b = np.asarray(b)
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def quat_mul(a, b):
    """Hamilton product a ⊗ b, batched over leading dims."""
    a = np.asarray(a)
    b = np.asarray(b)
    ax, ay, az, aw = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bx, by, bz, bw = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ],
        axis=-1,
    )


def quat_conjugate(q):
    q = np.asarray(q)
    out = q.copy()
    out[..., :3] *= -1.0
    return out


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / np.where(n > 0, n, 1.0)


def quat_rotate(q, v):
    """Rotate vector(s) v by unit quaternion(s) q."""
    q = np.asarray(q)
    v = np.asarray(v)
    u = q[..., :3]
    w = q[..., 3:4]
    t = 2.0 * cross3(u, v)
    return v + w * t + cross3(u, t)


def quat_rotate_inverse(q, v):
    return quat_rotate(quat_conjugate(q), v)


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    half = 0.5 * angle
    xyz = axis * np.sin(half)[..., None]
    w = np.cos(half)[..., None]
    return np.concatenate([np.broadcast_to(xyz, w.shape[:-1] + (3,)), w], axis=-1)


def quat_to_matrix(q):
    """Unit quaternion(s) to 3x3 rotation matrix, shape (..., 3, 3)."""
    q = np.asarray(q)
    x, y, z, w = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=float)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - z * w)
    m[..., 0, 2] = 2 * (x * z + y * w)
    m[..., 1, 0] = 2 * (x * y + z * w)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - x * w)
    m[..., 2, 0] = 2 * (x * z - y * w)
    m[..., 2, 1] = 2 * (y * z + x * w)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def quat_from_matrix(m):
    """3x3 rotation matrix (batched) to unit quaternion (x, y, z, w)."""
    m = np.asarray(m, dtype=float)
    batch = m.shape[:-2]
    m = m.reshape(-1, 3, 3)
    q = np.empty((m.shape[0], 4))
    tr = m[:, 0, 0] + m[:, 1, 1] + m[:, 2, 2]
    for i in range(m.shape[0]):
        a = m[i]
        if tr[i] > 0:
            s = np.sqrt(tr[i] + 1.0) * 2
            q[i] = [(a[2, 1] - a[1, 2]) / s, (a[0, 2] - a[2, 0]) / s,
                    (a[1, 0] - a[0, 1]) / s, 0.25 * s]
        elif a[0, 0] > a[1, 1] and a[0, 0] > a[2, 2]:
            s = np.sqrt(1.0 + a[0, 0] - a[1, 1] - a[2, 2]) * 2
            q[i] = [0.25 * s, (a[0, 1] + a[1, 0]) / s,
                    (a[0, 2] + a[2, 0]) / s, (a[2, 1] - a[1, 2]) / s]
        elif a[1, 1] > a[2, 2]:
            s = np.sqrt(1.0 + a[1, 1] - a[0, 0] - a[2, 2]) * 2
            q[i] = [(a[0, 1] + a[1, 0]) / s, 0.25 * s,
                    (a[1, 2] + a[2, 1]) / s, (a[0, 2] - a[2, 0]) / s]
        else:
            s = np.sqrt(1.0 + a[2, 2] - a[0, 0] - a[1, 1]) * 2
            q[i] = [(a[0, 2] + a[2, 0]) / s, (a[1, 2] + a[2, 1]) / s,
                    0.25 * s, (a[1, 0] - a[0, 1]) / s]
    return quat_normalize(q.reshape(*batch, 4))


def rot_dist(q_a, q_b):
    """Angular distance between two unit quaternions, in [0, pi].

    2 * asin(clamp(|vec(q_a ⊗ conj(q_b))|, max 1)).
    """
    d = quat_mul(q_a, quat_conjugate(q_b))
    n = np.linalg.norm(d[..., :3], axis=-1)
    return 2.0 * np.arcsin(np.clip(n, 0.0, 1.0))


def quat_integrate(q, omega, dt):
    """Advance unit quaternion(s) by world-frame angular velocity over dt."""
    q = np.asarray(q, dtype=float)
    omega = np.asarray(omega, dtype=float)
    dq = 0.5 * quat_mul(np.concatenate([omega, np.zeros(omega.shape[:-1] + (1,))], axis=-1), q)
    return quat_normalize(q + dq * dt)


def quat_exp_map(v):
    """Exponential coordinates (rotation vector) to unit quaternion."""
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    small = angle[..., 0] < 1e-12
    axis = np.where(small[..., None], np.array([1.0, 0.0, 0.0]), v / np.where(angle > 0, angle, 1.0))
    half = 0.5 * angle[..., 0]
    xyz = axis * np.sin(half)[..., None]
    w = np.cos(half)[..., None]
    return np.concatenate([xyz, w], axis=-1)


def quat_log_map(q):
    """Unit quaternion to exponential coordinates (rotation vector)."""
    q = np.asarray(q, dtype=float)
    q = np.where(q[..., 3:4] < 0, -q, q)
    n = np.linalg.norm(q[..., :3], axis=-1)
    angle = 2.0 * np.arctan2(n, q[..., 3])
    scale = np.where(n > 1e-12, angle / np.where(n > 0, n, 1.0), 2.0)
    return q[..., :3] * scale[..., None]


class Transform:
    """A rigid transform: rotation then translation.

    Holds numpy arrays so it batches the same way the free functions do.
    """

    __slots__ = ("p", "q")

    def __init__(self, p=None, q=None):
        self.p = np.zeros(3) if p is None else np.asarray(p, dtype=float)
        self.q = QUAT_IDENTITY.copy() if q is None else quat_normalize(q)

    def apply(self, point):
        return quat_rotate(self.q, point) + self.p

    def compose(self, other: "Transform") -> "Transform":
        return Transform(self.apply(other.p), quat_mul(self.q, other.q))

    def inverse(self) -> "Transform":
        qi = quat_conjugate(self.q)
        return Transform(quat_rotate(qi, -self.p), qi)

    def __repr__(self):
        return f"Transform(p={self.p}, q={self.q})"
