"""Desk-scale non-stationary constrained environments.

Two families, each wrapped in a cyclic task sequence with known boundaries:

* ``DamagedRunner`` — a 1-D point mass rewarded for eastward progress and
  penalized (binary cost) for exceeding a velocity limit. Tasks change the
  actuation gain (damage) and drag, mirroring damage/repair cycles.
* ``ChainEnv`` — a small tabular constrained MDP with a hazard shortcut and
  a safe detour, exactly solvable by the oracle module. Tasks permute action
  meanings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional

import numpy as np

from .core import (
    ConfigurationError,
    ContractViolation,
    Environment,
    StateError,
    StepResult,
    TaskSchedule,
    advance_schedule,
)

# ---------------------------------------------------------------------------
# Damaged runner


@dataclass(frozen=True)
class RunnerParams:
    """Point-mass dynamics parameters for one task.

    ``gain`` is the actuation multiplier that damage scenarios modify.
    Defaults are tuned so the reward-optimal cruise speed sits above
    ``v_limit`` for the nominal and back-damaged tasks (safety/reward
    tension) but below it for the front-damaged task.
    """

    gain: float = 1.0
    drag: float = 0.5
    dt: float = 0.1
    v_limit: float = 0.5
    action_penalty: float = 2.4
    episode_len: int = 200
    obs_noise_std: float = 0.0

    def __post_init__(self):
        if self.gain == 0.0:
            raise ContractViolation("gain must be non-zero")
        if not (0.0 < self.dt <= 1.0):
            raise ContractViolation("dt must lie in (0, 1]")
        if self.drag < 0.0 or self.v_limit <= 0.0 or self.action_penalty < 0.0:
            raise ContractViolation("drag/action_penalty must be >= 0 and v_limit > 0")
        if self.episode_len < 1 or self.obs_noise_std < 0.0:
            raise ContractViolation("episode_len must be >= 1 and obs_noise_std >= 0")


def runner_step(
    params: RunnerParams, state: tuple[float, float], action: float
) -> tuple[tuple[float, float], float, float]:
    """Advance the point mass one step; returns (next_state, reward, cost).

    Euler integration: v' = v + (gain*a - drag*v)*dt, x' = x + v'*dt.
    Reward is per-step eastward progress rate minus a quadratic action
    penalty; cost is the indicator of the new velocity exceeding the limit.
    The action is silently clipped to [-1, 1] (actuator saturation).
    """
    x, v = state
    if not (math.isfinite(x) and math.isfinite(v) and math.isfinite(action)):
        raise ContractViolation("runner_step requires finite state and action")
    a = min(1.0, max(-1.0, float(action)))
    v_next = v + (params.gain * a - params.drag * v) * params.dt
    x_next = x + v_next * params.dt
    reward = (x_next - x) / params.dt - params.action_penalty * a * a
    cost = 1.0 if v_next > params.v_limit else 0.0
    return (x_next, v_next), reward, cost


RUNNER_TASK_SEQUENCE = (
    "nominal", "back", "nominal", "front", "back", "nominal", "front", "nominal",
)


def runner_task_set(
    base: Optional[RunnerParams] = None,
) -> dict[str, RunnerParams]:
    """Three damage parameterizations keyed by task id.

    ``front`` damage weakens actuation (gain 0.4); ``back`` damage overdrives
    it (gain 1.6) while doubling drag.
    """
    base = base if base is not None else RunnerParams()
    return {
        "nominal": replace(base, gain=1.0),
        "front": replace(base, gain=0.4),
        "back": replace(base, gain=1.6, drag=2.0 * base.drag),
    }


def default_runner_schedule(steps_per_task: int = 50_000) -> TaskSchedule:
    """Cyclic 8-entry damage/repair sequence with equal per-task budgets."""
    return TaskSchedule(tuple((t, steps_per_task) for t in RUNNER_TASK_SEQUENCE))


class DamagedRunner(Environment):
    """Episodic wrapper around ``runner_step``.

    The observation is the 1-vector [velocity]; Gaussian observation noise
    (if configured) perturbs only the returned observation, never the
    internal state. Episodes truncate after ``episode_len`` steps.
    """

    observation_dim = 1
    action_dim = 1

    def __init__(self, params: RunnerParams):
        super().__init__()
        self.params = params
        self._x = 0.0
        self._v = 0.0
        self._t = 0

    def _observe(self, rng: np.random.Generator) -> np.ndarray:
        obs = np.array([self._v], dtype=np.float64)
        if self.params.obs_noise_std > 0.0:
            obs += rng.normal(0.0, self.params.obs_noise_std, size=1)
        return obs

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._x, self._v, self._t = 0.0, 0.0, 0
        self._needs_reset = False
        return self._observe(rng)

    def step(self, action, rng: np.random.Generator) -> StepResult:
        self._check_ready()
        a = float(np.asarray(action).reshape(-1)[0])
        (self._x, self._v), reward, cost = runner_step(self.params, (self._x, self._v), a)
        self._t += 1
        truncated = self._t >= self.params.episode_len
        if truncated:
            self._needs_reset = True
        return StepResult(self._observe(rng), reward, cost, False, truncated)


# ---------------------------------------------------------------------------
# Constrained chain


@dataclass(frozen=True)
class ChainSpec:
    """Tabular constrained MDP: transition, reward and cost tables.

    ``transitions`` has shape (S, A, S) with rows summing to 1; ``rewards``
    and ``costs`` have shape (S, A). The goal state is absorbing and
    terminates episodes.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    goal_state: int
    gamma: float = 0.9

    def __post_init__(self):
        p = np.asarray(self.transitions, dtype=np.float64)
        r = np.asarray(self.rewards, dtype=np.float64)
        c = np.asarray(self.costs, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ContractViolation(f"transitions must be (S, A, S), got {p.shape}")
        if r.shape != p.shape[:2] or c.shape != p.shape[:2]:
            raise ContractViolation("rewards/costs must have shape (S, A)")
        if np.any(p < 0.0) or np.any(np.abs(p.sum(axis=2) - 1.0) > 1e-12):
            raise ContractViolation("each transition row must be a distribution (tol 1e-12)")
        if np.any(c < 0.0):
            raise ContractViolation("costs must be non-negative")
        if not (0 <= self.goal_state < p.shape[0]):
            raise ContractViolation("goal_state out of range")
        if not (0.0 <= self.gamma < 1.0):
            raise ContractViolation("gamma must lie in [0, 1)")
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "costs", c)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    def permute_actions(self, perm: tuple[int, ...]) -> "ChainSpec":
        """Spec whose action k behaves like action perm[k] of this one."""
        if sorted(perm) != list(range(self.n_actions)):
            raise ContractViolation(f"not a permutation of actions: {perm}")
        idx = list(perm)
        return ChainSpec(
            self.transitions[:, idx, :],
            self.rewards[:, idx],
            self.costs[:, idx],
            self.goal_state,
            self.gamma,
        )


def chain_step(
    spec: ChainSpec, state: int, action: int, rng: np.random.Generator
) -> tuple[int, float, float, bool]:
    """Sample one tabular transition; terminal iff the goal is entered."""
    if not (0 <= state < spec.n_states):
        raise ContractViolation(f"state {state} out of range")
    if not (0 <= action < spec.n_actions):
        raise ContractViolation(f"action {action} out of range")
    row = spec.transitions[state, action]
    next_state = int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))
    next_state = min(next_state, spec.n_states - 1)
    reward = float(spec.rewards[state, action])
    cost = float(spec.costs[state, action])
    return next_state, reward, cost, next_state == spec.goal_state


def hazard_chain_spec(gamma: float = 0.9) -> ChainSpec:
    """5-state chain with a costly shortcut and a cost-free detour.

    From the start (0), action 0 enters hazard state 1 (cost 1) one hop from
    the goal; action 1 takes the two-hop detour through 2 and 3. The greedy
    reward-optimal policy uses the shortcut; any cost limit below 1 forces
    the detour.
    """
    S, A = 5, 2
    p = np.zeros((S, A, S))
    r = np.zeros((S, A))
    c = np.zeros((S, A))
    p[0, 0, 1] = 1.0
    p[0, 1, 2] = 1.0
    p[1, 0, 4] = 1.0
    p[1, 1, 0] = 1.0
    p[2, 0, 3] = 1.0
    p[2, 1, 0] = 1.0
    p[3, 0, 4] = 1.0
    p[3, 1, 2] = 1.0
    p[4, :, 4] = 1.0  # absorbing goal
    r[1, 0] = 1.0
    r[3, 0] = 1.0
    c[0, 0] = 1.0  # hazard entry
    return ChainSpec(p, r, c, goal_state=4, gamma=gamma)


CHAIN_TASK_SEQUENCE = ("forward", "reversed", "forward", "reversed", "forward", "reversed")


def chain_task_set(base: Optional[ChainSpec] = None) -> dict[str, ChainSpec]:
    """Two tasks on the same chain: identity and swapped action meanings."""
    base = base if base is not None else hazard_chain_spec()
    perm = tuple(reversed(range(base.n_actions)))
    return {"forward": base, "reversed": base.permute_actions(perm)}


def default_chain_schedule(steps_per_task: int = 5_000) -> TaskSchedule:
    return TaskSchedule(tuple((t, steps_per_task) for t in CHAIN_TASK_SEQUENCE))


class ChainEnv(Environment):
    """Episodic tabular chain with one-hot observations.

    Success is defined as reaching the goal; episodes also truncate after
    ``episode_len`` steps so a lost policy cannot stall the run.
    """

    def __init__(self, spec: ChainSpec, episode_len: int = 100, start_state: int = 0):
        super().__init__()
        self.spec = spec
        self.episode_len = episode_len
        self.start_state = start_state
        self.observation_dim = spec.n_states
        self.n_actions = spec.n_actions
        self._s = start_state
        self._t = 0

    def _observe(self) -> np.ndarray:
        obs = np.zeros(self.spec.n_states, dtype=np.float64)
        obs[self._s] = 1.0
        return obs

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._s, self._t = self.start_state, 0
        self._needs_reset = False
        return self._observe()

    def step(self, action, rng: np.random.Generator) -> StepResult:
        self._check_ready()
        s_next, reward, cost, terminated = chain_step(self.spec, self._s, int(action), rng)
        self._s = s_next
        self._t += 1
        truncated = not terminated and self._t >= self.episode_len
        if terminated or truncated:
            self._needs_reset = True
        return StepResult(self._observe(), reward, cost, terminated, truncated)


# ---------------------------------------------------------------------------
# Chain spec text format
#
# Plain-text table, one line per (state, action):
#   states <S>
#   actions <A>
#   goal <index>
#   gamma <float>
#   <s> <a> <p_0> ... <p_{S-1}> <reward> <cost>


def save_chain_spec(path: str, spec: ChainSpec) -> None:
    lines = [
        f"states {spec.n_states}",
        f"actions {spec.n_actions}",
        f"goal {spec.goal_state}",
        f"gamma {spec.gamma!r}",
    ]
    for s in range(spec.n_states):
        for a in range(spec.n_actions):
            probs = " ".join(repr(float(p)) for p in spec.transitions[s, a])
            lines.append(
                f"{s} {a} {probs} {spec.rewards[s, a]!r} {spec.costs[s, a]!r}"
            )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_chain_spec(path: str) -> ChainSpec:
    header: dict[str, str] = {}
    rows: list[list[str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] in ("states", "actions", "goal", "gamma"):
                header[parts[0]] = parts[1]
            else:
                rows.append(parts)
    try:
        n_states = int(header["states"])
        n_actions = int(header["actions"])
        goal = int(header["goal"])
        gamma = float(header["gamma"])
    except KeyError as exc:
        raise ConfigurationError(f"chain spec missing header field {exc}") from exc
    p = np.zeros((n_states, n_actions, n_states))
    r = np.zeros((n_states, n_actions))
    c = np.zeros((n_states, n_actions))
    seen = np.zeros((n_states, n_actions), dtype=bool)
    for parts in rows:
        if len(parts) != 2 + n_states + 2:
            raise ConfigurationError(f"malformed chain spec row: {' '.join(parts)}")
        s, a = int(parts[0]), int(parts[1])
        if not (0 <= s < n_states and 0 <= a < n_actions):
            raise ConfigurationError(f"chain spec row index out of range: ({s}, {a})")
        p[s, a] = [float(x) for x in parts[2 : 2 + n_states]]
        r[s, a] = float(parts[2 + n_states])
        c[s, a] = float(parts[3 + n_states])
        seen[s, a] = True
    if not seen.all():
        missing = np.argwhere(~seen)[0]
        raise ConfigurationError(f"chain spec missing row for (s={missing[0]}, a={missing[1]})")
    return ChainSpec(p, r, c, goal_state=goal, gamma=gamma)


# ---------------------------------------------------------------------------
# Task sequencing


class TaskSequenceEnv(Environment):
    """Swaps environment dynamics at schedule boundaries.

    Exposes the active ``task_id`` and an ``is_boundary`` flag for the
    current step (known-boundary assumption) and forces truncation of the
    in-flight episode on the last step of every schedule entry, so episode
    statistics never straddle tasks.
    """

    def __init__(
        self,
        factories: Mapping[str, Callable[[], Environment]],
        schedule: TaskSchedule,
    ):
        super().__init__()
        for task_id, _ in schedule.entries:
            if task_id not in factories:
                raise ConfigurationError(f"no environment factory for task {task_id!r}")
        self._factories = dict(factories)
        self.schedule = schedule
        self._entry_ends = np.cumsum([steps for _, steps in schedule.entries]).tolist()
        self.global_step = 0
        self._inner: Optional[Environment] = None
        self._inner_task: Optional[str] = None
        probe = next(iter(self._factories.values()))()
        self.observation_dim = probe.observation_dim
        self.action_dim = probe.action_dim
        self.n_actions = probe.n_actions

    @property
    def task_id(self) -> str:
        step = min(self.global_step, self.schedule.total_steps - 1)
        return advance_schedule(self.schedule, step)[0]

    @property
    def is_boundary(self) -> bool:
        if self.global_step >= self.schedule.total_steps:
            return False
        return advance_schedule(self.schedule, self.global_step)[1]

    def make_env(self, task_id: str) -> Environment:
        """Fresh single-task instance (e.g. for consolidation rollouts)."""
        return self._factories[task_id]()

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        task = self.task_id
        if self._inner is None or self._inner_task != task:
            self._inner = self._factories[task]()
            self._inner_task = task
        self._needs_reset = False
        return self._inner.reset(rng)

    def step(self, action, rng: np.random.Generator) -> StepResult:
        self._check_ready()
        if self.global_step >= self.schedule.total_steps:
            raise StateError("schedule exhausted")
        assert self._inner is not None
        result = self._inner.step(action, rng)
        self.global_step += 1
        if self.global_step in self._entry_ends and not result.terminated:
            result.truncated = True
        if result.terminated or result.truncated:
            self._needs_reset = True
        return result


def wrap_task_sequence(
    factories: Mapping[str, Callable[[], Environment]], schedule: TaskSchedule
) -> TaskSequenceEnv:
    """Non-stationary environment cycling through ``schedule`` over ``factories``."""
    return TaskSequenceEnv(factories, schedule)
