"""Shared domain types, RNG contract, and environment step protocol."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class ContractViolation(ValueError):
    """A caller broke an operation's precondition."""


class StateError(RuntimeError):
    """An object was used in an invalid lifecycle state (e.g. step before reset)."""


class ScheduleRangeError(IndexError):
    """Global step outside the schedule's total budget."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""


class ConfigurationError(ValueError):
    """Invalid experiment or environment configuration."""


@dataclass(frozen=True)
class Transition:
    """One environment step, with cached policy quantities.

    ``cost`` is a non-negative penalty signal (single constraint channel).
    ``log_prob``, ``value`` and ``cost_value`` are cached at collection time
    so updates can reuse the behaviour policy's quantities.
    """

    state: np.ndarray
    action: np.ndarray
    reward: float
    cost: float
    next_state: np.ndarray
    terminated: bool
    truncated: bool
    log_prob: float = 0.0
    value: float = 0.0
    cost_value: float = 0.0

    def __post_init__(self):
        if self.cost < 0.0:
            raise ContractViolation(f"cost must be non-negative, got {self.cost}")


@dataclass(frozen=True)
class TaskSchedule:
    """Ordered (task_id, steps) entries partitioning the run into tasks."""

    entries: tuple[tuple[str, int], ...]

    def __post_init__(self):
        if not self.entries:
            raise ContractViolation("schedule must have at least one entry")
        for task_id, steps in self.entries:
            if steps <= 0:
                raise ContractViolation(f"entry {task_id!r} has non-positive budget {steps}")

    @property
    def total_steps(self) -> int:
        return sum(steps for _, steps in self.entries)

    @property
    def task_ids(self) -> tuple[str, ...]:
        seen: list[str] = []
        for task_id, _ in self.entries:
            if task_id not in seen:
                seen.append(task_id)
        return tuple(seen)

    def entry_starts(self) -> list[int]:
        """Global step at which each entry begins."""
        starts, acc = [], 0
        for _, steps in self.entries:
            starts.append(acc)
            acc += steps
        return starts

    def completed_before(self, position: int) -> frozenset[str]:
        """Distinct task ids of entries strictly before ``position``."""
        return frozenset(task_id for task_id, _ in self.entries[:position])


@dataclass(frozen=True)
class EpisodeRecord:
    """Undiscounted per-episode totals plus bookkeeping.

    ``success`` is None for environments without a completion notion.
    ``global_step`` is the step index at which the episode ended.
    """

    total_reward: float
    total_cost: float
    length: int
    success: Optional[bool]
    task_id: str
    global_step: int

    def __post_init__(self):
        if self.length < 1:
            raise ContractViolation(f"episode length must be >= 1, got {self.length}")
        if self.total_cost < 0.0:
            raise ContractViolation("episode cost must be non-negative")


@dataclass(frozen=True)
class RunSeed:
    """64-bit unsigned run seed; equal seeds give bit-identical artifacts."""

    seed: int

    def __post_init__(self):
        if not (0 <= self.seed < 2**64):
            raise ContractViolation("seed must fit in 64 unsigned bits")


def _purpose_key(purpose: str) -> int:
    digest = hashlib.blake2b(purpose.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def rng_stream(seed: int, purpose: str) -> np.random.Generator:
    """Counter-based generator for one (run, purpose) pair.

    Streams for distinct purposes are statistically independent, so consuming
    draws in one stream (e.g. consolidation rollouts) never shifts another
    (e.g. environment noise). Philox is counter-based and platform-stable.
    """
    if not (0 <= seed < 2**64):
        raise ContractViolation("seed must fit in 64 unsigned bits")
    key = (_purpose_key(purpose) << 64) | seed
    return np.random.Generator(np.random.Philox(key=key))


def advance_schedule(sched: TaskSchedule, global_step: int) -> tuple[str, bool]:
    """Task active at ``global_step`` and whether this is an entry's first step."""
    if global_step < 0 or global_step >= sched.total_steps:
        raise ScheduleRangeError(
            f"global_step {global_step} outside [0, {sched.total_steps})"
        )
    acc = 0
    for task_id, steps in sched.entries:
        if global_step < acc + steps:
            return task_id, global_step == acc
        acc += steps
    raise AssertionError("unreachable: schedule prefix sums exhausted")


@dataclass
class StepResult:
    """Raw outcome of one environment step (pre policy caching)."""

    next_state: np.ndarray
    reward: float
    cost: float
    terminated: bool
    truncated: bool


class Environment:
    """Minimal episodic environment contract.

    Subclasses set ``observation_dim`` and either ``action_dim`` (continuous,
    actions are float vectors) or ``n_actions`` (discrete, actions are ints).
    """

    observation_dim: int
    action_dim: int = 0
    n_actions: int = 0

    def __init__(self):
        self._needs_reset = True

    @property
    def discrete(self) -> bool:
        return self.n_actions > 0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def step(self, action, rng: np.random.Generator) -> StepResult:
        raise NotImplementedError

    def _check_ready(self):
        if self._needs_reset:
            raise StateError("step called before reset (or after episode end)")

    def _check_action(self, action):
        if self.discrete:
            idx = int(action)
            if not (0 <= idx < self.n_actions):
                raise ContractViolation(f"action {idx} not in [0, {self.n_actions})")
        else:
            arr = np.asarray(action, dtype=np.float64)
            if arr.ndim != 1 or arr.shape[0] != self.action_dim:
                raise ContractViolation(
                    f"action shape {arr.shape} does not match action_dim {self.action_dim}"
                )
            if not np.all(np.isfinite(arr)):
                raise ContractViolation("action has non-finite entries")


def nscmdp_step(env: Environment, action, rng: np.random.Generator) -> StepResult:
    """Contract-checked environment step under the current task dynamics."""
    env._check_ready()
    env._check_action(action)
    return env.step(action, rng)
