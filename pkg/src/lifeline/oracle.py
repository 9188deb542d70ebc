"""Exact tabular solvers grounding the learning stack on the chain.

Iterative policy evaluation for reward and cost channels, Bellman optimality
iteration with deterministic tie-breaking, and the combined feasibility
check: retained reward within a forgetting tolerance of each prior task's
optimum, and discounted cost below the limit, at every state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .approximator import CategoricalPolicy
from .core import ConfigurationError, ContractViolation
from .envs import ChainSpec

DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class TabularPolicy:
    """Explicit action distribution per state."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2:
            raise ContractViolation("policy table must be (S, A)")
        if np.any(p < 0.0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-12):
            raise ContractViolation("each policy row must be a distribution (tol 1e-12)")
        object.__setattr__(self, "probs", p)

    @staticmethod
    def greedy(actions: Sequence[int], n_actions: int) -> "TabularPolicy":
        table = np.zeros((len(actions), n_actions))
        table[np.arange(len(actions)), list(actions)] = 1.0
        return TabularPolicy(table)


def tabular_from_categorical(policy: CategoricalPolicy, n_states: int) -> TabularPolicy:
    """Exact action probabilities of a softmax policy on one-hot states."""
    eye = np.eye(n_states, policy.obs_dim)
    probs = np.stack([policy.action_probs(eye[s]) for s in range(n_states)])
    return TabularPolicy(probs)


def _signal_table(spec: ChainSpec, signal: Union[str, np.ndarray]) -> np.ndarray:
    if isinstance(signal, str):
        if signal == "reward":
            return spec.rewards
        if signal == "cost":
            return spec.costs
        raise ContractViolation(f"unknown signal {signal!r}")
    table = np.asarray(signal, dtype=np.float64)
    if table.shape != spec.rewards.shape:
        raise ContractViolation("custom signal table must have shape (S, A)")
    return table


def policy_evaluate(
    spec: ChainSpec,
    policy: TabularPolicy,
    signal: Union[str, np.ndarray] = "reward",
    gamma: Optional[float] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = 1_000_000,
) -> np.ndarray:
    """Fixed point of V = P_pi (x + gamma V) by iteration to sup-norm < tol.

    ``signal`` selects the reward or cost channel (or a custom (S, A)
    table). Iteration avoids any linear-algebra dependency; the chains are
    tiny so convergence is immediate.
    """
    gamma = spec.gamma if gamma is None else gamma
    if not (0.0 <= gamma < 1.0):
        raise ContractViolation("gamma must lie in [0, 1)")
    if policy.probs.shape != (spec.n_states, spec.n_actions):
        raise ContractViolation("policy table does not match the spec")
    x = _signal_table(spec, signal)
    # r_pi(s) = sum_a pi(a|s) x(s,a); P_pi(s,s') = sum_a pi(a|s) p(s,a,s')
    r_pi = np.sum(policy.probs * x, axis=1)
    p_pi = np.einsum("sa,sat->st", policy.probs, spec.transitions)
    v = np.zeros(spec.n_states)
    for _ in range(max_iter):
        v_next = r_pi + gamma * (p_pi @ v)
        if np.max(np.abs(v_next - v)) < tol:
            return v_next
        v = v_next
    raise ContractViolation("policy evaluation did not converge")


def value_iterate(
    spec: ChainSpec,
    gamma: Optional[float] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = 1_000_000,
) -> tuple[np.ndarray, TabularPolicy]:
    """Bellman optimality iteration; argmax ties break to the lowest action."""
    gamma = spec.gamma if gamma is None else gamma
    v = np.zeros(spec.n_states)
    q = np.zeros((spec.n_states, spec.n_actions))
    for _ in range(max_iter):
        q = spec.rewards + gamma * np.einsum("sat,t->sa", spec.transitions, v)
        v_next = q.max(axis=1)
        if np.max(np.abs(v_next - v)) < tol:
            v = v_next
            break
        v = v_next
    else:
        raise ContractViolation("value iteration did not converge")
    greedy = q.argmax(axis=1)  # np.argmax takes the lowest index on ties
    return v, TabularPolicy.greedy(greedy.tolist(), spec.n_actions)


@dataclass(frozen=True)
class TaskFeasibility:
    task_id: str
    reward_values: np.ndarray
    reference_values: np.ndarray
    cost_values: np.ndarray
    reward_ok: bool
    cost_ok: bool
    worst_reward_slack: float
    worst_cost_slack: float


@dataclass(frozen=True)
class ConstraintReport:
    tasks: tuple[TaskFeasibility, ...]
    epsilon_forget: float
    cost_limit: float

    @property
    def ok(self) -> bool:
        return all(t.reward_ok and t.cost_ok for t in self.tasks)

    def as_table(self) -> str:
        header = (
            f"{'task':<12} {'state':>5} {'V_pi':>12} {'V_ref':>12} "
            f"{'V_cost':>12} {'reward':>8} {'cost':>6}"
        )
        rows = [header, "-" * len(header)]
        for t in self.tasks:
            for s in range(len(t.reward_values)):
                r_ok = t.reward_values[s] >= t.reference_values[s] - self.epsilon_forget
                c_ok = t.cost_values[s] <= self.cost_limit
                rows.append(
                    f"{t.task_id:<12} {s:>5} {t.reward_values[s]:>12.6f} "
                    f"{t.reference_values[s]:>12.6f} {t.cost_values[s]:>12.6f} "
                    f"{'ok' if r_ok else 'VIOL':>8} {'ok' if c_ok else 'VIOL':>6}"
                )
        rows.append(f"overall: {'feasible' if self.ok else 'INFEASIBLE'}")
        return "\n".join(rows)


def check_constraints(
    specs: Mapping[str, ChainSpec],
    policy: TabularPolicy,
    cost_limit: float,
    epsilon_forget: float,
    reference_values: Optional[Mapping[str, np.ndarray]] = None,
    tol: float = DEFAULT_TOL,
) -> ConstraintReport:
    """Feasibility of one policy across prior tasks.

    Per task and state, checks the retained-value condition
    V_pi >= V_ref - epsilon and the safety condition V_cost <= cost_limit.
    References default to each task's value-iteration optimum.
    """
    if cost_limit < 0.0 or epsilon_forget < 0.0:
        raise ContractViolation("cost_limit and epsilon_forget must be >= 0")
    tasks = []
    for task_id, spec in specs.items():
        if reference_values is not None:
            if task_id not in reference_values:
                raise ConfigurationError(f"missing reference values for task {task_id!r}")
            ref = np.asarray(reference_values[task_id], dtype=np.float64)
        else:
            ref, _ = value_iterate(spec, tol=tol)
        v_r = policy_evaluate(spec, policy, "reward", tol=tol)
        v_c = policy_evaluate(spec, policy, "cost", tol=tol)
        reward_slack = float(np.min(v_r - (ref - epsilon_forget)))
        cost_slack = float(np.min(cost_limit - v_c))
        tasks.append(
            TaskFeasibility(
                task_id=task_id,
                reward_values=v_r,
                reference_values=ref,
                cost_values=v_c,
                reward_ok=reward_slack >= 0.0,
                cost_ok=cost_slack >= 0.0,
                worst_reward_slack=reward_slack,
                worst_cost_slack=cost_slack,
            )
        )
    return ConstraintReport(tuple(tasks), epsilon_forget, cost_limit)
