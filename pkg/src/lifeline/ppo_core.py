"""On-policy backbone shared by every algorithm.

Rollout collection, generalized advantage estimation, discounted returns,
the clipped surrogate with analytic gradients, value and entropy terms, and
the minibatched update loop with per-epoch KL early stopping. Safety and
consolidation mechanisms enter through the ``extra_actor_penalty`` hook on
the actor loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .approximator import Mlp, Policy
from .core import ContractViolation, NumericError


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    lambda_gae: float = 0.95
    clip: float = 0.2
    value_coeff: float = 0.5
    entropy_coeff: float = 0.01
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    epochs: int = 40
    minibatch: int = 256
    update_interval: int = 2048
    target_kl: float = 0.02

    def __post_init__(self):
        values = [
            self.gamma, self.lambda_gae, self.clip, self.value_coeff,
            self.entropy_coeff, self.lr_actor, self.lr_critic, self.target_kl,
        ]
        if not all(np.isfinite(v) for v in values):
            raise ContractViolation("all PPO coefficients must be finite")
        if not (0.0 <= self.gamma < 1.0) or not (0.0 <= self.lambda_gae <= 1.0):
            raise ContractViolation("gamma must lie in [0,1) and lambda_gae in [0,1]")
        if self.clip <= 0.0 or self.epochs < 1 or self.minibatch < 1:
            raise ContractViolation("clip must be > 0; epochs and minibatch >= 1")
        if self.update_interval < 1:
            raise ContractViolation("update_interval must be >= 1")


class RolloutBuffer:
    """Fixed-capacity transition store, cleared after every update."""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int = 0):
        self.capacity = capacity
        self.discrete = action_dim == 0
        self.obs = np.zeros((capacity, obs_dim))
        if self.discrete:
            self.actions: np.ndarray = np.zeros(capacity, dtype=np.int64)
        else:
            self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.costs = np.zeros(capacity)
        self.log_probs = np.zeros(capacity)
        self.terminated = np.zeros(capacity, dtype=bool)
        self.truncated = np.zeros(capacity, dtype=bool)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.size = 0

    def add(self, obs, action, reward, cost, log_prob, terminated, truncated, next_obs):
        i = self.size
        if i >= self.capacity:
            raise ContractViolation("rollout buffer overflow")
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.costs[i] = cost
        self.log_probs[i] = log_prob
        self.terminated[i] = terminated
        self.truncated[i] = truncated
        self.next_obs[i] = next_obs
        self.size = i + 1

    @property
    def full(self) -> bool:
        return self.size >= self.capacity

    def clear(self) -> None:
        self.size = 0

    def episode_slices(self) -> list[slice]:
        """Consecutive step ranges per episode; the tail may be unfinished."""
        slices, start = [], 0
        done = self.terminated[: self.size] | self.truncated[: self.size]
        for i in range(self.size):
            if done[i]:
                slices.append(slice(start, i + 1))
                start = i + 1
        if start < self.size:
            slices.append(slice(start, self.size))
        return slices


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    bootstrap_value: float,
    gamma: float,
    lambda_gae: float,
) -> np.ndarray:
    """Advantages for one episode from TD residuals.

    delta_t = r_t + gamma * V(s_{t+1}) - V(s_t), with V after the final step
    equal to ``bootstrap_value`` (0 on true termination). Advantages are the
    backward-accumulated (gamma * lambda)-discounted sums of the residuals.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ContractViolation("rewards and values must have one entry per step")
    n = rewards.shape[0]
    adv = np.empty(n)
    next_value = bootstrap_value
    acc = 0.0
    for t in range(n - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        acc = delta + gamma * lambda_gae * acc
        adv[t] = acc
        next_value = values[t]
    return adv

def compute_returns(
    rewards: np.ndarray, gamma: float, bootstrap_value: float = 0.0
) -> np.ndarray:
    """Discounted returns for one episode, bootstrapped only on truncation."""
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(rewards)
    acc = bootstrap_value
    for t in range(rewards.shape[0] - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def clipped_policy_loss(
    policy: Policy,
    states: np.ndarray,
    actions: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    clip: float,
) -> tuple[float, np.ndarray, float]:
    """Clipped surrogate loss, its gradient, and the clipped fraction.

    loss = -mean_t min(rho_t * A_t, clip(rho_t, 1 - eps, 1 + eps) * A_t)
    with rho_t the importance ratio against the stored behaviour log-probs.
    Samples where the clipped branch is active contribute no gradient.
    """
    log_probs = policy.log_prob_batch(states, actions)
    ratio = np.exp(log_probs - old_log_probs)
    if not np.all(np.isfinite(ratio)):
        raise NumericError("non-finite importance ratio (policy diverged)")
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantages
    loss = -float(np.minimum(unclipped, clipped).mean())
    active = unclipped <= clipped
    weights = np.where(active, -advantages * ratio, 0.0) / len(ratio)
    grad = policy.log_prob_grad_weighted(states, actions, weights)
    clip_fraction = float((np.abs(ratio - 1.0) > clip).mean())
    return loss, grad, clip_fraction


def value_loss(net: Mlp, states: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error of the value head and its parameter gradient."""
    pred, cache = net.forward_cache(states)
    pred = pred[:, 0]
    err = pred - targets
    loss = float(np.mean(err * err))
    dout = (2.0 * err / len(err))[:, None]
    return loss, net.backward(cache, dout)


def entropy_term(policy: Policy, states: np.ndarray) -> tuple[float, np.ndarray]:
    """Negative mean policy entropy over the batch, with gradient."""
    ent, grad = policy.entropy_mean_and_grad(states)
    return -ent, -grad


class Adam:
    """Gradient descent with per-parameter first/second moment scaling."""

    def __init__(self, n_params: int, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainBatch:
    """Update-ready tensors derived from a rollout (or a replay mixture)."""

    states: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    cost_advantages: np.ndarray
    cost_returns: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]


@dataclass(frozen=True)
class UpdateReport:
    actor_loss: float
    value_loss: float
    cost_value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float
    epochs_run: int
    penalty: float


# Hook contract: called per minibatch with (policy, batch, minibatch indices);
# returns (penalty value, flat gradient over policy params) or None for "no
# contribution" (kept distinct from a zero vector so baselines stay
# bit-identical when a mechanism is inactive).
ActorPenalty = Callable[[Policy, TrainBatch, np.ndarray], Optional[tuple[float, np.ndarray]]]


def prepare_batch(
    buffer: RolloutBuffer, critic: Mlp, cost_critic: Mlp, config: PpoConfig
) -> TrainBatch:
    """Cache values and compute per-episode advantages and returns."""
    n = buffer.size
    obs = buffer.obs[:n]
    values = critic.forward(obs)[:, 0]
    cost_values = cost_critic.forward(obs)[:, 0]
    adv = np.empty(n)
    ret = np.empty(n)
    cadv = np.empty(n)
    cret = np.empty(n)
    for sl in buffer.episode_slices():
        last = sl.stop - 1
        terminated = bool(buffer.terminated[last])
        if terminated:
            boot_v = 0.0
            boot_c = 0.0
        else:
            nxt = buffer.next_obs[last]
            boot_v = float(critic.forward(nxt)[0])
            boot_c = float(cost_critic.forward(nxt)[0])
        adv[sl] = compute_gae(
            buffer.rewards[sl], values[sl], boot_v, config.gamma, config.lambda_gae
        )
        ret[sl] = compute_returns(buffer.rewards[sl], config.gamma, boot_v)
        cadv[sl] = compute_gae(
            buffer.costs[sl], cost_values[sl], boot_c, config.gamma, config.lambda_gae
        )
        cret[sl] = compute_returns(buffer.costs[sl], config.gamma, boot_c)
    return TrainBatch(
        states=obs.copy(),
        actions=buffer.actions[:n].copy(),
        old_log_probs=buffer.log_probs[:n].copy(),
        advantages=adv,
        returns=ret,
        cost_advantages=cadv,
        cost_returns=cret,
    )


def approx_kl(policy: Policy, batch: TrainBatch) -> float:
    """Non-negative KL estimator mean(rho - 1 - log rho); 0 when unchanged."""
    d = policy.log_prob_batch(batch.states, batch.actions) - batch.old_log_probs
    return float(np.mean(np.expm1(d) - d))


def ppo_update(
    buffer: RolloutBuffer,
    policy: Policy,
    critic: Mlp,
    cost_critic: Mlp,
    config: PpoConfig,
    extra_actor_penalty: Optional[ActorPenalty] = None,
    *,
    actor_opt: Adam,
    critic_opt: Adam,
    cost_opt: Adam,
    rng: np.random.Generator,
    batch_transform: Optional[Callable[[TrainBatch], TrainBatch]] = None,
) -> UpdateReport:
    """Minibatched clipped-surrogate update; clears the buffer afterwards.

    The actor loss is surrogate + entropy_coeff * entropy term + penalty
    hook; each critic regresses on its discounted returns. Epochs stop early
    once the full-batch approximate KL exceeds ``target_kl``. The behaviour
    policy for the next rollout is implicitly the updated one (fresh
    log-probs are cached at collection time).
    """
    if buffer.size == 0:
        raise ContractViolation("ppo_update called with an empty buffer")
    batch = prepare_batch(buffer, critic, cost_critic, config)
    if batch_transform is not None:
        batch = batch_transform(batch)

    adv = batch.advantages
    std = float(adv.std())
    adv_norm = (adv - float(adv.mean())) / max(std, 1e-8)

    n = len(batch)
    sums = {"actor": 0.0, "value": 0.0, "cost": 0.0, "entropy": 0.0,
            "clip": 0.0, "penalty": 0.0}
    n_minibatches = 0
    epochs_run = 0
    kl = 0.0
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, config.minibatch):
            idx = perm[start : start + config.minibatch]
            s, a = batch.states[idx], batch.actions[idx]
            surr, surr_grad, clip_frac = clipped_policy_loss(
                policy, s, a, batch.old_log_probs[idx], adv_norm[idx], config.clip
            )
            actor_grad = surr_grad
            actor_loss = surr
            ent_loss, ent_grad = entropy_term(policy, s)
            if config.entropy_coeff != 0.0:
                actor_loss += config.entropy_coeff * ent_loss
                actor_grad = actor_grad + config.entropy_coeff * ent_grad
            pen_value = 0.0
            if extra_actor_penalty is not None:
                contribution = extra_actor_penalty(policy, batch, idx)
                if contribution is not None:
                    pen_value, pen_grad = contribution
                    actor_loss += pen_value
                    actor_grad = actor_grad + pen_grad
            v_loss, v_grad = value_loss(critic, s, batch.returns[idx])
            c_loss, c_grad = value_loss(cost_critic, s, batch.cost_returns[idx])

            actor_opt.step(policy.params, actor_grad)
            policy.project()
            critic_opt.step(critic.params, config.value_coeff * v_grad)
            cost_opt.step(cost_critic.params, config.value_coeff * c_grad)

            sums["actor"] += actor_loss
            sums["value"] += v_loss
            sums["cost"] += c_loss
            sums["entropy"] += -ent_loss
            sums["clip"] += clip_frac
            sums["penalty"] += pen_value
            n_minibatches += 1
        epochs_run += 1
        kl = approx_kl(policy, batch)
        if kl > config.target_kl:
            break
    buffer.clear()
    k = max(n_minibatches, 1)
    return UpdateReport(
        actor_loss=sums["actor"] / k,
        value_loss=sums["value"] / k,
        cost_value_loss=sums["cost"] / k,
        entropy=sums["entropy"] / k,
        approx_kl=kl,
        clip_fraction=sums["clip"] / k,
        epochs_run=epochs_run,
        penalty=sums["penalty"] / k,
    )
