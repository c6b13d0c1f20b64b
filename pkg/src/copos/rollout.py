"""Trajectory sampling and advantage estimation.

Batches hold whole episodes only; discounted returns-to-go are
Monte-Carlo (no bootstrap at the truncation horizon). Each episode gets
its own counter-derived RNG stream seeded by (master_seed, episode
index), so splitting episodes across any number of workers cannot
change the collected data. Collection here is sequential; the
COPOS_THREADS environment variable is honored as an upper bound on
workers and one worker is always compliant.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Batch:
    obs: np.ndarray          # (N, obs_dim)
    actions: np.ndarray      # (N, action_dim) float or (N,) int
    rewards: np.ndarray      # (N,)
    returns: np.ndarray      # (N,) discounted return-to-go
    episode_ids: np.ndarray  # (N,)
    timesteps: np.ndarray    # (N,)
    gamma: float
    horizon: int
    episode_count: int
    advantages: np.ndarray | None = None
    baseline_kind: str = "none"

    @property
    def n_samples(self) -> int:
        return self.obs.shape[0]

    def mean_episode_return(self) -> float:
        """Mean over episodes of the undiscounted reward sum."""
        totals = [self.rewards[self.episode_ids == e].sum()
                  for e in range(self.episode_count)]
        return float(np.mean(totals))

    def mean_discounted_return(self) -> float:
        """Mean over episodes of the discounted return from the start state."""
        starts = [self.returns[self.episode_ids == e][0]
                  for e in range(self.episode_count)]
        return float(np.mean(starts))


def discounted_returns(rewards, gamma) -> np.ndarray:
    out = np.empty(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def episode_rng(master_seed, episode_index) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(master_seed), int(episode_index))))


def collect(policy, env, n_samples, horizon, master_seed) -> Batch:
    """Sample whole episodes with `policy` until n_samples is reached."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    obs_l, act_l, rew_l, ret_l, ep_l, t_l = [], [], [], [], [], []
    total = 0
    episode = 0
    while total < n_samples:
        rng = episode_rng(master_seed, episode)
        state, obs = env.reset(rng)
        ep_obs, ep_act, ep_rew = [], [], []
        for t in range(horizon):
            action = policy.sample(obs, rng)
            state, next_obs, reward, done = env.step(state, action, rng)
            ep_obs.append(obs)
            ep_act.append(action)
            ep_rew.append(reward)
            obs = next_obs
            if done:
                break
        rets = discounted_returns(np.asarray(ep_rew, dtype=float), env.gamma)
        obs_l.extend(ep_obs)
        act_l.extend(ep_act)
        rew_l.extend(ep_rew)
        ret_l.extend(rets)
        ep_l.extend([episode] * len(ep_rew))
        t_l.extend(range(len(ep_rew)))
        total += len(ep_rew)
        episode += 1
    return Batch(
        obs=np.asarray(obs_l, dtype=float),
        actions=np.asarray(act_l),
        rewards=np.asarray(rew_l, dtype=float),
        returns=np.asarray(ret_l, dtype=float),
        episode_ids=np.asarray(ep_l, dtype=int),
        timesteps=np.asarray(t_l, dtype=int),
        gamma=env.gamma,
        horizon=horizon,
        episode_count=episode,
    )


def compute_advantages(batch, baseline_kind="state_value") -> Batch:
    """A_i = G_i - V_hat(s_i); V_hat is a least-squares feature baseline.

    baseline_kind "none" copies the returns. The regression features are
    [obs, obs^2, t/horizon, 1]; a singular or non-finite fit falls back
    to the batch-mean baseline.
    """
    if baseline_kind == "none":
        return replace(batch, advantages=batch.returns.copy(), baseline_kind="none")
    if baseline_kind != "state_value":
        raise ValueError(f"unknown baseline kind {baseline_kind!r}")
    obs = batch.obs
    frac = (batch.timesteps / max(batch.horizon, 1))[:, None]
    X = np.hstack([obs, obs * obs, frac, np.ones((obs.shape[0], 1))])
    try:
        coef, *_ = np.linalg.lstsq(X, batch.returns, rcond=None)
        values = X @ coef
        if not np.all(np.isfinite(values)):
            raise np.linalg.LinAlgError("non-finite baseline fit")
    except np.linalg.LinAlgError:
        log.warning("baseline regression singular; falling back to mean-return baseline")
        values = np.full_like(batch.returns, batch.returns.mean())
    return replace(batch, advantages=batch.returns - values, baseline_kind="state_value")


def batch_from_arrays(obs, actions, advantages, gamma=0.99, horizon=1) -> Batch:
    """Assemble a synthetic batch with given advantages (tests, oracles)."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    advantages = np.asarray(advantages, dtype=float)
    n = obs.shape[0]
    return Batch(
        obs=obs,
        actions=np.asarray(actions),
        rewards=advantages.copy(),
        returns=advantages.copy(),
        episode_ids=np.arange(n),
        timesteps=np.zeros(n, dtype=int),
        gamma=gamma,
        horizon=horizon,
        episode_count=n,
        advantages=advantages.copy(),
        baseline_kind="none",
    )


def dump_batch(batch, path) -> None:
    """Columnar text dump, one transition per row."""
    with open(path, "w") as fh:
        fh.write("episode,timestep,reward,return,advantage,action,obs\n")
        for i in range(batch.n_samples):
            adv = "" if batch.advantages is None else f"{batch.advantages[i]:.12g}"
            action = np.asarray(batch.actions[i]).ravel()
            act_s = ";".join(f"{a:.12g}" for a in action.astype(float))
            obs_s = ";".join(f"{o:.12g}" for o in batch.obs[i])
            fh.write(f"{batch.episode_ids[i]},{batch.timesteps[i]},"
                     f"{batch.rewards[i]:.12g},{batch.returns[i]:.12g},{adv},{act_s},{obs_s}\n")
