"""Process-parallel stepping.

Environments never interact, so a step partitions them across worker
processes. Every array the solver reads or writes lives in shared memory;
each worker owns a contiguous env range and steps a shard-sized Scene whose
state arrays are views into the parent's buffers. Everything except step()
(kinematics, contact queries, buffer reads/writes, randomization) runs in
the parent against the full arrays, and workers see those writes on their
next step. The result is independent of the partitioning: per-env rows are
solved elementwise with no cross-env reductions.
"""

import ctypes
import multiprocessing
import os

import numpy as np

from .physics import Scene

# Shared attribute -> env layout. "block" rows are env-major with a fixed
# per-env block (bodies, dofs, actors, sensors); "env" is one row per env;
# "axis1" carries the env dimension on axis 1.
_SHARED = (
    ("pos", "body"), ("quat", "body"), ("linvel", "body"), ("angvel", "body"),
    ("inv_mass", "body"), ("inertia_local", "body"), ("inv_inertia_local", "body"),
    ("body_state", "body"), ("net_contact", "body"),
    ("ctrl_body_force", "body"), ("ctrl_body_torque", "body"),
    ("dof_state", "dof"), ("dof_force", "dof"), ("dof_mode", "dof"),
    ("ctrl_dof_force", "dof"), ("ctrl_dof_pos_target", "dof"),
    ("ctrl_dof_vel_target", "dof"),
    ("root_state", "actor"),
    ("sensor_forces", "sensor"),
    ("nonfinite", "env"), ("gravity", "env"),
    ("mu_static", "env"), ("mu_dynamic", "env"),
    ("joint_stiffness", "axis1"), ("joint_damping", "axis1"),
    ("joint_armature", "axis1"), ("joint_friction", "axis1"),
    ("joint_limit_lo", "axis1"), ("joint_limit_hi", "axis1"),
    ("plane_off", "axis1"), ("plane_rad", "axis1"),
    ("pair_off", "axis1"), ("pair_rad", "axis1"),
    ("_friction_anchor", "axis1"),
)


def _to_shared(arr):
    buf = multiprocessing.RawArray(ctypes.c_byte, arr.nbytes)
    shared = np.frombuffer(buf, dtype=arr.dtype).reshape(arr.shape)
    shared[...] = arr
    return shared


def _slice_for(scene, layout, lo, hi):
    blocks = {
        "body": scene.bodies_per_env,
        "dof": scene.dofs_per_env,
        "actor": len(scene.models),
        "sensor": scene.sensors_per_env,
        "env": 1,
    }
    if layout == "axis1":
        return (slice(None), slice(lo, hi))
    b = blocks[layout]
    return slice(lo * b, hi * b)


def _worker_loop(conn, scene):
    while True:
        cmd = conn.recv()
        if cmd == "close":
            conn.close()
            return
        try:
            scene.step()
            conn.send(None)
        except Exception as exc:  # surfaced in the parent
            conn.send(RuntimeError(f"worker step failed: {exc!r}"))


class ShardedScene:
    """Scene facade that fans step() out over worker processes.

    All other Scene methods and arrays are reached through the wrapped
    full-size scene, whose state lives in shared memory.
    """

    def __init__(self, models, num_envs, params, workers=None, spacing=4.0,
                 ground=True):
        if workers is None:
            workers = os.cpu_count() or 1
        workers = max(1, min(int(workers), num_envs))
        self.scene = Scene(models, num_envs, params, spacing=spacing,
                           ground=ground)
        self.num_workers = workers
        self._procs = []
        self._conns = []
        for name, _ in _SHARED:
            arr = getattr(self.scene, name)
            if arr.size:
                setattr(self.scene, name, _to_shared(arr))

        ctx = multiprocessing.get_context("fork")
        bounds = np.linspace(0, num_envs, workers + 1).astype(int)
        for w in range(workers):
            lo, hi = int(bounds[w]), int(bounds[w + 1])
            if lo == hi:
                continue
            shard = Scene(models, hi - lo, params, spacing=spacing,
                          ground=ground)
            for name, layout in _SHARED:
                full = getattr(self.scene, name)
                if full.size:
                    setattr(shard, name, full[_slice_for(self.scene, layout, lo, hi)])
            parent_conn, child_conn = ctx.Pipe()
            proc = ctx.Process(target=_worker_loop, args=(child_conn, shard),
                               daemon=True)
            proc.start()
            child_conn.close()
            self._procs.append(proc)
            self._conns.append(parent_conn)

    def step(self):
        for conn in self._conns:
            conn.send("step")
        errors = [err for conn in self._conns if (err := conn.recv()) is not None]
        if errors:
            raise errors[0]

    def close(self):
        for conn in self._conns:
            try:
                conn.send("close")
                conn.close()
            except (BrokenPipeError, OSError):
                pass
        for proc in self._procs:
            proc.join(timeout=5.0)
            if proc.is_alive():
                proc.terminate()
        self._conns = []
        self._procs = []

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    def __getattr__(self, name):
        return getattr(self.scene, name)
