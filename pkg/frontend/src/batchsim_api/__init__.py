"""Scripting bindings over the batchsim core.

`create_sim` builds a task simulation, `wrap` exposes the flat state
buffers as zero-copy arrays, and `step_env`/`reset` drive it. Step outputs
are fresh copies, safe to hold across resets; wrapped buffers alias the
core storage and reflect every step in place.
"""

from .api import (BoundBuffer, ShapeMismatch, SimHandle, StepResult,
                  UnknownKind, create_sim, reset, step_env, task_names,
                  wrap)

__all__ = [
    "BoundBuffer", "ShapeMismatch", "SimHandle", "StepResult",
    "UnknownKind", "create_sim", "reset", "step_env", "task_names", "wrap",
]
