"""PPO numerics: GAE vs quadratic oracle, analytic grads vs finite
differences, Adam reference, LR adaptation, checkpoints, blowup recovery."""

import numpy as np
import pytest

from batchsim.ppo import (PPO, Adam, ActorCritic, DigestMismatch,
                          NonFiniteLoss, PPOConfig, clip_grad_norm,
                          gae_advantages, train)


# ------------------------------------------------------------------- GAE


def oracle_gae(rewards, values, dones, last_value, gamma, lam):
    """O(T^2) direct sum: A_t = sum_l (gamma*lam)^l delta_{t+l}, stopping
    at the first done."""
    T, E = rewards.shape
    adv = np.zeros((T, E))
    for e in range(E):
        for t in range(T):
            acc, coef = 0.0, 1.0
            for l in range(t, T):
                next_v = last_value[e] if l == T - 1 else values[l + 1, e]
                nonterm = 1.0 - dones[l, e]
                delta = rewards[l, e] + gamma * next_v * nonterm - values[l, e]
                acc += coef * delta
                if dones[l, e]:
                    break
                coef *= gamma * lam
            adv[t, e] = acc
    return adv


def test_gae_matches_quadratic_oracle():
    rng = np.random.default_rng(0)
    T, E = 24, 5
    rewards = rng.normal(size=(T, E))
    values = rng.normal(size=(T, E))
    dones = (rng.random((T, E)) < 0.15).astype(float)
    last_value = rng.normal(size=E)
    adv, ret = gae_advantages(rewards, values, dones, last_value, 0.99, 0.95)
    want = oracle_gae(rewards, values, dones, last_value, 0.99, 0.95)
    assert np.max(np.abs(adv - want)) < 1e-8
    assert np.max(np.abs(ret - (want + values))) < 1e-8


def test_gae_no_dones_closed_form():
    # constant reward, zero values: A_t = r * (1 - (g*l)^(T-t)) / (1 - g*l)
    T = 10
    g, l = 0.99, 0.95
    rewards = np.ones((T, 1))
    values = np.zeros((T, 1))
    dones = np.zeros((T, 1))
    adv, _ = gae_advantages(rewards, values, dones, np.zeros(1), g, l)
    for t in range(T):
        want = (1 - (g * l) ** (T - t)) / (1 - g * l)
        assert abs(adv[t, 0] - want) < 1e-10


# ------------------------------------------------------------- gradients


def make_batch(net, n=32, seed=1):
    rng = np.random.default_rng(seed)
    obs = rng.normal(size=(n, net.obs_dim))
    actions = rng.normal(size=(n, net.act_dim))
    mu, _ = net.actor.forward(obs)
    logp_old = net.log_prob(mu, actions) + rng.normal(0, 0.1, n)
    values_old = net.value(obs) + rng.normal(0, 0.1, n)
    advantages = rng.normal(size=n)
    returns = rng.normal(size=n)
    return obs, actions, logp_old, values_old, advantages, returns


def total_loss(net, batch):
    obs, actions, logp_old, values_old, adv, ret = batch
    stats, _ = net.loss_and_grads(obs, actions, logp_old, values_old,
                                  adv, ret)
    return stats["loss"]


def test_gradients_match_finite_differences():
    cfg = PPOConfig(hidden=(8, 6), entropy_coef=0.01)
    net = ActorCritic(5, 3, cfg, seed=2)
    batch = make_batch(net)
    _, grads = net.loss_and_grads(*batch)
    params = net.params()
    rng = np.random.default_rng(3)
    eps = 1e-6
    checked = 0
    for pi, p in enumerate(params):
        flat = p.reshape(-1)
        for k in rng.choice(flat.size, size=min(6, flat.size), replace=False):
            orig = flat[k]
            flat[k] = orig + eps
            hi = total_loss(net, batch)
            flat[k] = orig - eps
            lo = total_loss(net, batch)
            flat[k] = orig
            fd = (hi - lo) / (2 * eps)
            an = grads[pi].reshape(-1)[k]
            err = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
            assert err < 1e-4, (pi, k, fd, an)
            checked += 1
    assert checked > 30


def test_value_only_gradient_is_exact_quadratic():
    # with advantages 0 and ratio 1, only the value loss has gradient
    cfg = PPOConfig(hidden=(4,), value_coef=1.0)
    net = ActorCritic(2, 1, cfg, seed=0)
    rng = np.random.default_rng(0)
    obs = rng.normal(size=(16, 2))
    mu, _ = net.actor.forward(obs)
    actions = mu.copy()
    logp_old = net.log_prob(mu, actions)
    values_old = net.value(obs)
    returns = values_old + rng.normal(0, 0.01, 16)  # inside the clip
    stats, grads = net.loss_and_grads(obs, actions, logp_old, values_old,
                                      np.zeros(16), returns)
    want = 0.5 * np.mean((net.value(obs) - returns) ** 2)
    assert abs(stats["v_loss"] - want) < 1e-12
    assert abs(stats["pg_loss"]) < 1e-12


# ------------------------------------------------------------------ Adam


def test_adam_matches_reference():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(4, 3))
    p_ref = p.copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    opt = Adam([p], lr=1e-2)
    for t in range(1, 8):
        g = rng.normal(size=p.shape)
        opt.step([p], [g])
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mh = m / (1 - 0.9 ** t)
        vh = v / (1 - 0.999 ** t)
        p_ref -= 1e-2 * mh / (np.sqrt(vh) + 1e-8)
        assert np.max(np.abs(p - p_ref)) < 1e-12


def test_grad_norm_clip():
    g = [np.full((3,), 2.0), np.full((4,), -2.0)]
    clipped, norm = clip_grad_norm(g, 1.0)
    assert abs(norm - np.sqrt(28.0)) < 1e-12
    total = np.sqrt(sum(np.sum(c * c) for c in clipped))
    assert abs(total - 1.0) < 1e-12
    same, norm2 = clip_grad_norm(g, 100.0)
    assert same[0] is g[0]


# ------------------------------------------------------------ adaptation


def test_adaptive_lr_rules():
    agent = PPO(3, 2, PPOConfig(lr=1e-3, kl_target=0.01))
    agent._adapt_lr(0.03)  # > 2 * target
    assert abs(agent.lr - 1e-3 / 1.5) < 1e-15
    agent.lr = 1e-3
    agent._adapt_lr(0.004)  # < target / 2
    assert abs(agent.lr - 1.5e-3) < 1e-15
    agent.lr = 1e-3
    agent._adapt_lr(0.01)  # in band
    assert agent.lr == 1e-3
    agent.lr = 1e-6
    agent._adapt_lr(1.0)
    assert agent.lr == 1e-6  # clamped at floor
    agent.lr = 1e-2
    agent._adapt_lr(0.0)
    assert agent.lr == 1e-2  # clamped at ceiling


# ----------------------------------------------------------- checkpoints


def test_checkpoint_roundtrip(tmp_path):
    a = PPO(4, 2, PPOConfig(hidden=(8,)), seed=1)
    path = tmp_path / "ck.bin"
    a.save(path)
    b = PPO(4, 2, PPOConfig(hidden=(8,)), seed=99)
    b.load(path)
    for pa, pb in zip(a.net.params(), b.net.params()):
        assert np.array_equal(pa.astype(np.float32).astype(np.float64), pb)


def test_checkpoint_digest_mismatch(tmp_path):
    a = PPO(4, 2, PPOConfig(hidden=(8,)), seed=1)
    path = tmp_path / "ck.bin"
    a.save(path)
    b = PPO(4, 3, PPOConfig(hidden=(8,)), seed=1)
    with pytest.raises(DigestMismatch):
        b.load(path)
    with open(path, "r+b") as f:
        f.write(b"JUNK")
    with pytest.raises(DigestMismatch):
        a.load(path)


def test_nonfinite_loss_restores_params():
    agent = PPO(3, 2, PPOConfig(hidden=(8,), minibatch_size=8), seed=0)
    before = [p.copy() for p in agent.net.params()]
    rng = np.random.default_rng(0)
    n = 16
    obs = rng.normal(size=(n, 3))
    obs[3, 1] = np.nan
    actions = rng.normal(size=(n, 2))
    with pytest.raises(NonFiniteLoss):
        agent.update(obs, actions, np.zeros(n), np.zeros(n),
                     rng.normal(size=n), rng.normal(size=n))
    for p, b in zip(agent.net.params(), before):
        assert np.array_equal(p, b)


# -------------------------------------------------------------- learning


class BanditEnv:
    """Stateless: reward = -(a - 0.3)^2 summed over dims. The optimum is a
    constant action, so the policy mean must move toward 0.3."""

    obs_dim = 1
    act_dim = 2

    class _Cfg:
        num_envs = 64

    def __init__(self):
        self.config = self._Cfg()

    def reset(self, env_indices=None):
        return np.zeros((64, 1))

    def step(self, actions):
        from batchsim.envs import StepOutput
        a = np.clip(actions, -1, 1)
        reward = -np.sum((a - 0.3) ** 2, axis=-1)
        return StepOutput(np.zeros((64, 1)), reward,
                          np.zeros(64, dtype=bool), {})


def test_policy_improves_on_bandit():
    env = BanditEnv()
    cfg = PPOConfig(hidden=(16,), lr=5e-3, minibatch_size=256,
                    gamma=0.0, lam=0.0)
    agent = PPO(1, 2, cfg, seed=0)
    hist = train(env, agent, iterations=60, horizon=8)
    early = np.mean([h["mean_reward"] for h in hist[:5]])
    late = np.mean([h["mean_reward"] for h in hist[-5:]])
    assert late > early + 0.3
    mu, _ = agent.net.actor.forward(np.zeros((1, 1)))
    assert np.max(np.abs(mu - 0.3)) < 0.2


def test_train_writes_metrics_csv(tmp_path):
    env = BanditEnv()
    agent = PPO(1, 2, PPOConfig(hidden=(8,), minibatch_size=128), seed=0)
    path = tmp_path / "metrics.csv"
    ck = tmp_path / "ck.bin"
    train(env, agent, iterations=3, horizon=4,
          metrics_path=str(path), checkpoint_path=str(ck))
    rows = path.read_text().strip().splitlines()
    assert rows[0].startswith("iteration,env_steps,mean_reward")
    assert len(rows) == 4
    assert ck.exists()
