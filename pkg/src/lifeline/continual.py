"""Forgetting mitigation: consolidation memory and experience replay.

The consolidation path estimates a diagonal importance (squared score of the
policy log-density over one end-of-task episode, optionally down-weighted by
sample cost) and anchors later updates with a quadratic penalty around the
parameters saved at each boundary. The replay path mixes stored and current
transitions 50/50 at update time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .approximator import CHECKPOINT_HEADER, Policy
from .core import ConfigurationError, ContractViolation, Environment
from .ppo_core import TrainBatch


@dataclass
class EwcEntry:
    theta_star: np.ndarray
    fisher: np.ndarray
    task_id: str


@dataclass
class EwcMemory:
    """One (anchor, importance) pair per completed task, in schedule order.

    Revisited tasks append fresh entries; the penalty accumulates over all
    of them. ``lambda_ewc`` balances anchoring against current-task loss.
    """

    lambda_ewc: float = 12.926
    entries: list[EwcEntry] = field(default_factory=list)

    def __post_init__(self):
        if self.lambda_ewc < 0.0:
            raise ContractViolation("lambda_ewc must be non-negative")

    def append(self, theta_star: np.ndarray, fisher: np.ndarray, task_id: str) -> None:
        theta_star = np.asarray(theta_star, dtype=np.float64)
        fisher = np.asarray(fisher, dtype=np.float64)
        if theta_star.shape != fisher.shape:
            raise ContractViolation("anchor and importance must have equal length")
        if np.any(fisher < 0.0):
            raise ContractViolation("importance entries must be non-negative")
        self.entries.append(EwcEntry(theta_star.copy(), fisher.copy(), task_id))

    def __len__(self) -> int:
        return len(self.entries)


def estimate_fisher(
    policy: Policy,
    states: np.ndarray,
    actions: np.ndarray,
    weights: np.ndarray,
) -> np.ndarray:
    """Diagonal importance: weighted mean of squared per-sample scores.

    F_i = (1/N) sum_n w_n (d/dtheta_i log pi(a_n | s_n))^2. Plain
    consolidation passes w_n = 1; the cost-weighted variant passes
    w_n = 1 / (1 + c_n), shrinking the importance of parameters active in
    costly samples.
    """
    states = np.asarray(states, dtype=np.float64)
    n = states.shape[0]
    if n == 0:
        raise ContractViolation("importance estimation needs a non-empty rollout")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape[0] != n:
        raise ContractViolation("one weight per rollout sample required")
    if np.any(weights <= 0.0) or np.any(weights > 1.0):
        raise ContractViolation("weights must lie in (0, 1]")
    fisher = np.zeros(policy.n_params)
    for i in range(n):
        score = policy.score(states[i], actions[i])
        fisher += weights[i] * score * score
    return fisher / n


def cost_fisher_weights(costs: np.ndarray) -> np.ndarray:
    """Per-sample weights 1 / (1 + cost); identical to 1 when cost is zero."""
    costs = np.asarray(costs, dtype=np.float64)
    if np.any(costs < 0.0):
        raise ContractViolation("costs must be non-negative")
    return 1.0 / (1.0 + costs)


def ewc_penalty(memory: EwcMemory, theta: np.ndarray) -> tuple[float, Optional[np.ndarray]]:
    """Quadratic anchor penalty and gradient over all stored tasks.

    penalty = sum_entries sum_i (lambda/2) F_i (theta_i - theta*_i)^2.
    Returns (0.0, None) when the memory is empty or lambda is zero, so an
    inactive mechanism contributes nothing at all to the actor update.
    """
    if not memory.entries or memory.lambda_ewc == 0.0:
        return 0.0, None
    theta = np.asarray(theta, dtype=np.float64)
    penalty = 0.0
    grad = np.zeros_like(theta)
    lam = memory.lambda_ewc
    for entry in memory.entries:
        if entry.theta_star.shape != theta.shape:
            raise ContractViolation("parameter length does not match stored anchor")
        diff = theta - entry.theta_star
        penalty += 0.5 * lam * float(np.dot(entry.fisher, diff * diff))
        grad += lam * entry.fisher * diff
    return penalty, grad


def finish_task(
    memory: EwcMemory,
    policy: Policy,
    env: Environment,
    n_fisher: int,
    rng: np.random.Generator,
    cost_weighted: bool = False,
    task_id: str = "task",
) -> EwcMemory:
    """Anchor the current parameters and estimate their importance.

    Runs the frozen policy for one episode in the ending task's dynamics
    (a fresh single-task environment) and uses its transitions, capped at
    ``n_fisher`` samples, as the importance dataset.
    """
    if n_fisher < 1:
        raise ContractViolation("n_fisher must be >= 1")
    theta_star = policy.get_params()
    states: list[np.ndarray] = []
    actions: list = []
    costs: list[float] = []
    obs = env.reset(rng)
    for _ in range(n_fisher):
        action, _ = policy.act(obs, rng)
        result = env.step(action, rng)
        states.append(obs)
        actions.append(action)
        costs.append(result.cost)
        if result.terminated or result.truncated:
            break
        obs = result.next_state
    state_arr = np.asarray(states, dtype=np.float64)
    action_arr = np.asarray(actions)
    weights = cost_fisher_weights(np.asarray(costs)) if cost_weighted else np.ones(len(states))
    fisher = estimate_fisher(policy, state_arr, action_arr, weights)
    memory.append(theta_star, fisher, task_id)
    return memory


def save_memory(path: str, memory: EwcMemory) -> None:
    """Serialize anchors and importances in the checkpoint text format."""
    lines = [CHECKPOINT_HEADER, "kind: ewc-memory", f"lambda: {memory.lambda_ewc!r}",
             f"entries: {len(memory.entries)}"]
    for entry in memory.entries:
        lines.append(f"task: {entry.task_id}")
        lines.append(f"n_params: {entry.theta_star.shape[0]}")
        lines.extend(repr(float(v)) for v in entry.theta_star)
        lines.extend(repr(float(v)) for v in entry.fisher)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_memory(path: str) -> EwcMemory:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    if not lines or lines[0] != CHECKPOINT_HEADER or lines[1] != "kind: ewc-memory":
        raise ConfigurationError(f"{path}: not a consolidation memory file")
    lam = float(lines[2].split(":", 1)[1])
    n_entries = int(lines[3].split(":", 1)[1])
    memory = EwcMemory(lambda_ewc=lam)
    pos = 4
    for _ in range(n_entries):
        task_id = lines[pos].split(":", 1)[1].strip()
        n = int(lines[pos + 1].split(":", 1)[1])
        pos += 2
        theta = np.array([float(v) for v in lines[pos : pos + n]])
        fisher = np.array([float(v) for v in lines[pos + n : pos + 2 * n]])
        pos += 2 * n
        memory.append(theta, fisher, task_id)
    return memory


class ReplayStore:
    """Long-term FIFO transition store plus the current rollout.

    Stored rows carry everything an update needs (state, action, behaviour
    log-prob, advantage, returns), frozen at collection time.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ContractViolation("replay capacity must be >= 1")
        self.capacity = capacity
        self._rows: list[tuple] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._rows)

    def push_batch(self, batch: TrainBatch) -> None:
        """Append a finished rollout's rows, evicting oldest-first."""
        for i in range(len(batch)):
            row = (
                batch.states[i].copy(),
                batch.actions[i].copy() if hasattr(batch.actions[i], "copy") else batch.actions[i],
                batch.old_log_probs[i],
                batch.advantages[i],
                batch.returns[i],
                batch.cost_advantages[i],
                batch.cost_returns[i],
            )
            if len(self._rows) < self.capacity:
                self._rows.append(row)
            else:
                self._rows[self._next] = row
                self._next = (self._next + 1) % self.capacity

    def sample(self, k: int, rng: np.random.Generator) -> list[tuple]:
        idx = rng.integers(0, len(self._rows), size=k)
        return [self._rows[i] for i in idx]


def replay_mix(store: ReplayStore, batch: TrainBatch, rng: np.random.Generator) -> TrainBatch:
    """50/50 mixture of stored and current transitions for one update.

    Takes a uniform sample of half the batch from the long-term store and
    the most recent half of the current rollout. Replayed transitions keep
    their stored log-probs as the behaviour policy for the ratio. With an
    empty store the current batch passes through unchanged.
    """
    if len(store) == 0:
        return batch
    n = len(batch)
    n_replay = n // 2
    n_current = n - n_replay
    rows = store.sample(n_replay, rng)
    recent = slice(n - n_current, n)
    states = np.concatenate([np.stack([r[0] for r in rows]), batch.states[recent]])
    if batch.actions.ndim == 1:
        actions = np.concatenate([np.array([r[1] for r in rows]), batch.actions[recent]])
    else:
        actions = np.concatenate([np.stack([r[1] for r in rows]), batch.actions[recent]])
    def col(j: int, current: np.ndarray) -> np.ndarray:
        return np.concatenate([np.array([r[j] for r in rows]), current[recent]])
    return TrainBatch(
        states=states,
        actions=actions,
        old_log_probs=col(2, batch.old_log_probs),
        advantages=col(3, batch.advantages),
        returns=col(4, batch.returns),
        cost_advantages=col(5, batch.cost_advantages),
        cost_returns=col(6, batch.cost_returns),
    )
