"""PPO with a hand-rolled float64 MLP actor-critic.

Gradients are computed by explicit backprop (checked against finite
differences in the tests). The policy is a diagonal Gaussian with a
state-independent learned log-std. The learning rate adapts to hold the
per-epoch KL near a target, and a non-finite loss rolls the parameters
back to the pre-update snapshot.
"""

import csv
import hashlib
import json
import struct
import time

from dataclasses import dataclass

import numpy as np

MAGIC = b"BSCK"
VERSION = 1
LOG2PI = np.log(2.0 * np.pi)


class NonFiniteLoss(RuntimeError):
    pass


class DigestMismatch(RuntimeError):
    pass


@dataclass
class PPOConfig:
    hidden: tuple = (256, 128, 64)
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    lr: float = 3.0e-4
    kl_target: float = 8.0e-3
    lr_min: float = 1.0e-6
    lr_max: float = 1.0e-2
    epochs: int = 4
    minibatch_size: int = 2048
    value_coef: float = 1.0
    entropy_coef: float = 0.0
    max_grad_norm: float = 1.0
    log_std_init: float = 0.0
    log_std_min: float = -20.0
    log_std_max: float = 2.0


# ----------------------------------------------------------------- network


def _elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def _elu_grad(z, out):
    # d/dz elu(z) = 1 for z > 0, elu(z) + 1 otherwise
    return np.where(z > 0, 1.0, out + 1.0)


class MLP:
    """Fully connected ELU net; the last layer is linear."""

    def __init__(self, sizes, rng, out_scale=0.01):
        self.sizes = tuple(int(s) for s in sizes)
        self.weights, self.biases = [], []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = out_scale if i == len(sizes) - 2 else np.sqrt(2.0 / n_in)
            self.weights.append(rng.normal(0.0, scale, (n_in, n_out)))
            self.biases.append(np.zeros(n_out))

    def params(self):
        return self.weights + self.biases

    def forward(self, x):
        zs, hs = [], [np.asarray(x, dtype=np.float64)]
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = hs[-1] @ W + b
            zs.append(z)
            hs.append(z if i == len(self.weights) - 1 else _elu(z))
        return hs[-1], (zs, hs)

    def backward(self, cache, dout):
        """Returns grads aligned with params(), plus d(loss)/d(input)."""
        zs, hs = cache
        dW = [None] * len(self.weights)
        db = [None] * len(self.biases)
        delta = np.asarray(dout, dtype=np.float64)
        for i in reversed(range(len(self.weights))):
            if i != len(self.weights) - 1:
                delta = delta * _elu_grad(zs[i], hs[i + 1])
            dW[i] = hs[i].T @ delta
            db[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
        return dW + db, delta


class ActorCritic:
    """Gaussian policy head over an actor MLP, plus a scalar critic."""

    def __init__(self, obs_dim, act_dim, config=None, seed=0):
        cfg = config or PPOConfig()
        self.config = cfg
        self.obs_dim, self.act_dim = int(obs_dim), int(act_dim)
        rng = np.random.default_rng([seed, 0xAC])
        self.actor = MLP((obs_dim, *cfg.hidden, act_dim), rng)
        self.critic = MLP((obs_dim, *cfg.hidden, 1), rng)
        self.log_std = np.full(act_dim, float(cfg.log_std_init))

    def params(self):
        return self.actor.params() + self.critic.params() + [self.log_std]

    def set_params(self, values):
        for dst, src in zip(self.params(), values):
            dst[...] = src

    def arch_digest(self):
        spec = json.dumps({"obs": self.obs_dim, "act": self.act_dim,
                           "actor": self.actor.sizes,
                           "critic": self.critic.sizes})
        return hashlib.sha256(spec.encode()).digest()

    # -------------------------------------------------------- inference

    def _std(self):
        cfg = self.config
        return np.exp(np.clip(self.log_std, cfg.log_std_min, cfg.log_std_max))

    def value(self, obs):
        return self.critic.forward(obs)[0][:, 0]

    def act(self, obs, rng, deterministic=False):
        mu, _ = self.actor.forward(obs)
        std = self._std()
        if deterministic:
            action = mu
        else:
            action = mu + std * rng.standard_normal(mu.shape)
        logp = self.log_prob(mu, action)
        return action, logp, self.value(obs)

    def log_prob(self, mu, action):
        std = self._std()
        z = (action - mu) / std
        return (-0.5 * np.sum(z ** 2, axis=-1)
                - np.sum(np.log(std))
                - 0.5 * self.act_dim * LOG2PI)

    def entropy(self):
        std = self._std()
        return np.sum(np.log(std)) + 0.5 * self.act_dim * (1.0 + LOG2PI)

    # ------------------------------------------------------------- loss

    def loss_and_grads(self, obs, actions, logp_old, values_old, advantages,
                       returns):
        """Clipped surrogate + clipped value loss; returns (stats, grads)
        with grads aligned with params()."""
        cfg = self.config
        N = len(obs)
        mu, actor_cache = self.actor.forward(obs)
        v, critic_cache = self.critic.forward(obs)
        v = v[:, 0]
        std = self._std()
        z = (actions - mu) / std
        logp = (-0.5 * np.sum(z ** 2, axis=-1) - np.sum(np.log(std))
                - 0.5 * self.act_dim * LOG2PI)

        ratio = np.exp(logp - logp_old)
        f1 = ratio * advantages
        f2 = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * advantages
        pg_loss = -np.mean(np.minimum(f1, f2))

        v_clip = values_old + np.clip(v - values_old, -cfg.clip, cfg.clip)
        e1 = (v - returns) ** 2
        e2 = (v_clip - returns) ** 2
        v_loss = 0.5 * np.mean(np.maximum(e1, e2))

        ent = self.entropy()
        total = pg_loss + cfg.value_coef * v_loss - cfg.entropy_coef * ent
        # positive-definite KL estimator, stable for the LR controller
        kl = float(0.5 * np.mean((logp - logp_old) ** 2))

        # policy branch: d(total)/d(logp), zero where the clip is active
        use_f1 = f1 <= f2
        dlogp = np.where(use_f1, -ratio * advantages / N, 0.0)
        dmu = dlogp[:, None] * (z / std)
        dlogstd_rows = dlogp[:, None] * (z ** 2 - 1.0)
        clip_gate = (np.clip(self.log_std, cfg.log_std_min, cfg.log_std_max)
                     == self.log_std)
        dlog_std = dlogstd_rows.sum(axis=0) * clip_gate
        if cfg.entropy_coef:
            dlog_std = dlog_std - cfg.entropy_coef * clip_gate
        actor_grads, _ = self.actor.backward(actor_cache, dmu)

        # value branch
        inner = np.abs(v - values_old) < cfg.clip
        dv = np.where(e1 >= e2, v - returns,
                      np.where(inner, v_clip - returns, 0.0))
        dv = cfg.value_coef * dv / N
        critic_grads, _ = self.critic.backward(critic_cache, dv[:, None])

        stats = {"loss": float(total), "pg_loss": float(pg_loss),
                 "v_loss": float(v_loss), "entropy": float(ent), "kl": kl}
        return stats, actor_grads + critic_grads + [dlog_std]


# -------------------------------------------------------------------- GAE


def gae_advantages(rewards, values, dones, last_value, gamma, lam):
    """Generalized advantage estimation over a (T, E) rollout. dones[t]
    marks transitions that ended the episode, cutting the recursion."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    nonterminal = 1.0 - np.asarray(dones, dtype=np.float64)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    carry = np.zeros(rewards.shape[1])
    for t in reversed(range(T)):
        next_v = last_value if t == T - 1 else values[t + 1]
        delta = rewards[t] + gamma * next_v * nonterminal[t] - values[t]
        carry = delta + gamma * lam * nonterminal[t] * carry
        adv[t] = carry
    return adv, adv + values


# ------------------------------------------------------------------- Adam


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m[...] = b1 * m + (1 - b1) * g
            v[...] = b2 * v + (1 - b2) * g * g
            p -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


def clip_grad_norm(grads, max_norm):
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        grads = [g * scale for g in grads]
    return grads, total


# ----------------------------------------------------------------- agent


class PPO:
    def __init__(self, obs_dim, act_dim, config=None, seed=0):
        self.config = config or PPOConfig()
        self.net = ActorCritic(obs_dim, act_dim, self.config, seed=seed)
        self.lr = self.config.lr
        self.optimizer = Adam(self.net.params(), self.lr)
        self.rng = np.random.default_rng([seed, 0x99])

    def update(self, obs, actions, logp_old, values_old, advantages,
               returns):
        """One PPO update over a flattened rollout. Raises NonFiniteLoss
        (after restoring the pre-update parameters) if anything blows up."""
        cfg = self.config
        snapshot = [p.copy() for p in self.net.params()]
        adv = (advantages - advantages.mean()) / (advantages.std() + 1e-8)
        N = len(obs)
        mb = min(cfg.minibatch_size, N)
        stats = {}
        try:
            for _ in range(cfg.epochs):
                order = self.rng.permutation(N)
                kls = []
                for lo in range(0, N, mb):
                    idx = order[lo:lo + mb]
                    stats, grads = self.net.loss_and_grads(
                        obs[idx], actions[idx], logp_old[idx],
                        values_old[idx], adv[idx], returns[idx])
                    if not np.isfinite(stats["loss"]):
                        raise NonFiniteLoss(
                            f"loss became {stats['loss']}")
                    grads, norm = clip_grad_norm(grads, cfg.max_grad_norm)
                    self.optimizer.lr = self.lr
                    self.optimizer.step(self.net.params(), grads)
                    kls.append(stats["kl"])
                self._adapt_lr(float(np.mean(kls)))
        except NonFiniteLoss:
            self.net.set_params(snapshot)
            raise
        if not all(np.isfinite(p).all() for p in self.net.params()):
            self.net.set_params(snapshot)
            raise NonFiniteLoss("parameters became non-finite")
        stats["lr"] = self.lr
        return stats

    def _adapt_lr(self, kl):
        cfg = self.config
        if kl > 2.0 * cfg.kl_target:
            self.lr /= 1.5
        elif kl < 0.5 * cfg.kl_target:
            self.lr *= 1.5
        self.lr = float(np.clip(self.lr, cfg.lr_min, cfg.lr_max))

    # ------------------------------------------------------ checkpointing

    def save(self, path):
        blob = np.concatenate(
            [p.ravel() for p in self.net.params()]).astype("<f4")
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", VERSION))
            f.write(self.net.arch_digest())
            f.write(blob.tobytes())

    def load(self, path):
        with open(path, "rb") as f:
            raw = f.read()
        if raw[:4] != MAGIC:
            raise DigestMismatch("not a checkpoint file")
        (version,) = struct.unpack("<I", raw[4:8])
        if version != VERSION:
            raise DigestMismatch(f"unsupported checkpoint version {version}")
        digest = raw[8:40]
        if digest != self.net.arch_digest():
            raise DigestMismatch("checkpoint was written by a different "
                                 "network architecture")
        blob = np.frombuffer(raw[40:], dtype="<f4").astype(np.float64)
        params = self.net.params()
        want = sum(p.size for p in params)
        if blob.size != want:
            raise DigestMismatch("checkpoint payload size mismatch")
        off = 0
        for p in params:
            p[...] = blob[off:off + p.size].reshape(p.shape)
            off += p.size


# ------------------------------------------------------------ train loop


def collect_rollout(env, agent, obs, horizon):
    E = env.config.num_envs
    T = horizon
    out = {
        "obs": np.zeros((T, E, env.obs_dim)),
        "actions": np.zeros((T, E, env.act_dim)),
        "logp": np.zeros((T, E)),
        "values": np.zeros((T, E)),
        "rewards": np.zeros((T, E)),
        "dones": np.zeros((T, E)),
    }
    for t in range(T):
        action, logp, value = agent.net.act(obs, agent.rng)
        step = env.step(action)
        out["obs"][t] = obs
        out["actions"][t] = action
        out["logp"][t] = logp
        out["values"][t] = value
        out["rewards"][t] = step.reward
        out["dones"][t] = step.done
        obs = step.obs
    out["last_value"] = agent.net.value(obs)
    return out, obs


def train(env, agent, iterations, horizon=16, metrics_path=None,
          checkpoint_path=None, log=None):
    """Returns per-iteration stats; optionally streams a metrics CSV and
    writes a final checkpoint."""
    cfg = agent.config
    obs = env.reset()
    history = []
    writer = None
    fh = None
    if metrics_path:
        fh = open(metrics_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "env_steps", "mean_reward",
                         "loss", "pg_loss", "v_loss", "kl", "lr",
                         "wall_clock_s"])
    t0 = time.monotonic()
    E = env.config.num_envs
    try:
        for it in range(1, iterations + 1):
            roll, obs = collect_rollout(env, agent, obs, horizon)
            adv, ret = gae_advantages(roll["rewards"], roll["values"],
                                      roll["dones"], roll["last_value"],
                                      cfg.gamma, cfg.lam)
            flat = lambda a: a.reshape(-1, *a.shape[2:])
            try:
                stats = agent.update(flat(roll["obs"]), flat(roll["actions"]),
                                     flat(roll["logp"]), flat(roll["values"]),
                                     flat(adv), flat(ret))
            except NonFiniteLoss:
                stats = {"loss": np.nan, "pg_loss": np.nan, "v_loss": np.nan,
                         "kl": np.nan, "lr": agent.lr}
            row = {
                "iteration": it,
                "env_steps": it * horizon * E,
                "mean_reward": float(roll["rewards"].mean()),
                "loss": stats.get("loss", np.nan),
                "pg_loss": stats.get("pg_loss", np.nan),
                "v_loss": stats.get("v_loss", np.nan),
                "kl": stats.get("kl", np.nan),
                "lr": agent.lr,
                "wall_clock_s": time.monotonic() - t0,
            }
            history.append(row)
            if writer:
                writer.writerow([row[k] for k in (
                    "iteration", "env_steps", "mean_reward", "loss",
                    "pg_loss", "v_loss", "kl", "lr", "wall_clock_s")])
                fh.flush()
            if log:
                log(row)
    finally:
        if fh:
            fh.close()
    if checkpoint_path:
        agent.save(checkpoint_path)
    return history
