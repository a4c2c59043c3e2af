"""Domain randomization over per-env scene parameters.

A schedule maps named targets (masses, friction, gains, ...) to sampling
rules. The randomizer snapshots base values at construction, and every
randomization epoch restores the base before applying fresh draws, so
scalings never compound. Draws are keyed on (seed, env, epoch) so results
are identical regardless of how envs are grouped into calls or sharded
across workers.
"""

from dataclasses import dataclass, field

import numpy as np

DISTRIBUTIONS = ("uniform", "loguniform", "gaussian")
MODES = ("scaling", "additive")
TARGETS = ("dims", "masses", "friction", "damping", "gains",
           "joint_limits", "gravity")


@dataclass
class RandomizationEntry:
    target: str
    distribution: str
    mode: str
    range: tuple

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValueError("unknown randomization target: %r" % (self.target,))
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError("unknown distribution: %r" % (self.distribution,))
        if self.mode not in MODES:
            raise ValueError("unknown mode: %r" % (self.mode,))

    def sample(self, rng, n):
        a, b = self.range
        if self.distribution == "uniform":
            return rng.uniform(a, b, size=n)
        if self.distribution == "loguniform":
            return np.exp(rng.uniform(np.log(a), np.log(b), size=n))
        return rng.normal(a, b, size=n)


@dataclass
class RandomizationSchedule:
    entries: dict = field(default_factory=dict)
    min_interval_steps: int = 720

    @classmethod
    def from_config(cls, cfg):
        sched = cls(min_interval_steps=int(cfg.get("min_interval_steps", 720)))
        for raw in cfg.get("entries", []):
            entry = RandomizationEntry(
                target=raw["target"],
                distribution=raw["distribution"],
                mode=raw["mode"],
                range=tuple(raw["range"]),
            )
            sched.entries[entry.target] = entry
        return sched


def _default_entries():
    mk = RandomizationEntry
    return {
        "dims": mk("dims", "uniform", "scaling", (0.95, 1.05)),
        "masses": mk("masses", "uniform", "scaling", (0.5, 1.5)),
        "friction": mk("friction", "uniform", "scaling", (0.7, 1.3)),
        "damping": mk("damping", "loguniform", "scaling", (0.3, 3.0)),
        "gains": mk("gains", "loguniform", "scaling", (0.75, 1.5)),
        "joint_limits": mk("joint_limits", "gaussian", "additive", (0.0, 0.15)),
        "gravity": mk("gravity", "gaussian", "additive", (0.0, 0.4)),
    }


DEFAULT_SCHEDULE = RandomizationSchedule(entries=_default_entries())

# arrays touched by randomization, snapshotted for reversibility
_WATCHED = ("inv_mass", "inertia_local", "inv_inertia_local", "gravity",
            "mu_static", "mu_dynamic", "joint_stiffness", "joint_damping",
            "joint_limit_lo", "joint_limit_hi", "plane_rad", "plane_off",
            "pair_rad", "pair_off")


class DomainRandomizer:
    def __init__(self, scene, schedule=None, seed=0):
        self.scene = scene
        self.schedule = schedule if schedule is not None else DEFAULT_SCHEDULE
        self.seed = int(seed)
        self._base = {k: getattr(scene, k).copy() for k in _WATCHED}
        E = scene.num_envs
        self.epoch = np.zeros(E, dtype=np.int64)
        self._last_step = np.full(
            E, -self.schedule.min_interval_steps, dtype=np.int64)
        self._n_joints = scene.joint_stiffness.shape[0]

    def _draw_counts(self):
        B = self.scene.bodies_per_env
        return {
            "dims": 1,
            "masses": B,
            "friction": 1,
            "damping": self._n_joints,
            "gains": self._n_joints,
            "joint_limits": 2 * self._n_joints,
            "gravity": 3,
        }

    def due(self, env_indices, step):
        env_indices = np.atleast_1d(np.asarray(env_indices, dtype=np.int64))
        return env_indices[
            step - self._last_step[env_indices]
            >= self.schedule.min_interval_steps]

    def randomize(self, env_indices, step):
        """Restore base then apply fresh draws for envs whose interval has
        elapsed. Returns True if any env was randomized."""
        due = self.due(env_indices, step)
        if due.size == 0:
            return False
        counts = self._draw_counts()
        for e in due:
            self._restore_env(int(e))
            rng = np.random.default_rng([self.seed, int(e), int(self.epoch[e])])
            for name in TARGETS:
                entry = self.schedule.entries.get(name)
                if entry is None:
                    continue
                draws = entry.sample(rng, counts[name])
                self._apply(name, entry.mode, int(e), draws)
            self.epoch[e] += 1
            self._last_step[e] = step
        return True

    def clear(self, env_indices):
        for e in np.atleast_1d(np.asarray(env_indices, dtype=np.int64)):
            self._restore_env(int(e))

    def _body_rows(self, e):
        B = self.scene.bodies_per_env
        return slice(e * B, (e + 1) * B)

    def _restore_env(self, e):
        s, base = self.scene, self._base
        rows = self._body_rows(e)
        for k in ("inv_mass", "inertia_local", "inv_inertia_local"):
            getattr(s, k)[rows] = base[k][rows]
        s.gravity[e] = base["gravity"][e]
        s.mu_static[e] = base["mu_static"][e]
        s.mu_dynamic[e] = base["mu_dynamic"][e]
        for k in ("joint_stiffness", "joint_damping", "joint_limit_lo",
                  "joint_limit_hi", "plane_rad", "plane_off", "pair_rad",
                  "pair_off"):
            arr = getattr(s, k)
            if arr.size:
                arr[:, e] = base[k][:, e]

    def _apply(self, name, mode, e, draws):
        s = self.scene
        if name == "dims":
            sc = draws[0]
            if s.plane_rad.size:
                s.plane_rad[:, e] *= sc
                s.plane_off[:, e] *= sc
            if s.pair_rad.size:
                s.pair_rad[:, e] *= sc
                s.pair_off[:, e] *= sc
        elif name == "masses":
            rows = self._body_rows(e)
            s.inv_mass[rows] /= draws
            s.inertia_local[rows] *= draws[:, None]
            s.inv_inertia_local[rows] /= draws[:, None]
        elif name == "friction":
            s.mu_static[e] *= draws[0]
            s.mu_dynamic[e] *= draws[0]
        elif name == "damping":
            s.joint_damping[:, e] *= draws
        elif name == "gains":
            s.joint_stiffness[:, e] *= draws
        elif name == "joint_limits":
            n = self._n_joints
            s.joint_limit_lo[:, e] += draws[:n]
            s.joint_limit_hi[:, e] += draws[n:]
        elif name == "gravity":
            if mode == "scaling":
                s.gravity[e] *= draws
            else:
                s.gravity[e] += draws


class RandomForceState:
    """Per-env random disturbance forces on a body.

    Each env carries a firing probability drawn once per randomization
    episode; on a hit the force is resampled from N(0, mass^2) per axis,
    otherwise it decays by 0.99 every 50 ms.
    """

    def __init__(self, num_envs, rng, p_lo=0.001, p_hi=0.1):
        self.rng = rng
        self.p_lo = p_lo
        self.p_hi = p_hi
        self.probability = np.exp(
            rng.uniform(np.log(p_lo), np.log(p_hi), size=num_envs))
        self.force = np.zeros((num_envs, 3))

    def resample_probability(self, env_indices):
        env_indices = np.atleast_1d(np.asarray(env_indices, dtype=np.int64))
        self.probability[env_indices] = np.exp(self.rng.uniform(
            np.log(self.p_lo), np.log(self.p_hi), size=env_indices.size))
        self.force[env_indices] = 0.0


def random_object_force(state, mass, dt):
    fire = state.rng.random(state.force.shape[0]) < state.probability
    fresh = state.rng.normal(0.0, 1.0, state.force.shape) \
        * np.asarray(mass)[:, None]
    decay = 0.99 ** (dt / 0.05)
    state.force = np.where(fire[:, None], fresh, state.force * decay)
    return state.force.copy()


def sample_correlated_noise(shape, sigma, rng):
    """Drawn once per episode, held fixed until the next reset."""
    if sigma <= 0.0:
        return np.zeros(shape)
    return rng.normal(0.0, sigma, size=shape)


def perturb_observations(obs, sigma_uncorr, corr_noise, rng):
    out = np.array(obs, dtype=np.float64, copy=True)
    if sigma_uncorr > 0.0:
        out += rng.normal(0.0, sigma_uncorr, size=out.shape)
    if corr_noise is not None and np.any(corr_noise):
        out = out + corr_noise
    return out
