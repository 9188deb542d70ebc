"""Forgetting and safety metrics over episode record streams.

A *visit* is a maximal run of consecutive episodes sharing one task id.
Reward windows are 20 episodes, shrinking to the available count (floor 1)
for short visits; the effective window is recorded. All computations are
pure functions of the record stream, so summaries recomputed from persisted
CSVs match in-memory values exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .core import ContractViolation, EpisodeRecord

WINDOW = 20
RANGE_FLOOR = 1e-8


@dataclass(frozen=True)
class Visit:
    task_id: str
    visit_index: int
    episodes: tuple[EpisodeRecord, ...]


@dataclass(frozen=True)
class TaskVisitStats:
    task_id: str
    visit_index: int
    n_episodes: int
    window: int
    initial_reward: float
    final_reward: float
    immediate_reward: Optional[float]
    total_cost: float
    success_rate: Optional[float]


def split_visits(records: Sequence[EpisodeRecord]) -> list[Visit]:
    """Group consecutive same-task episodes; visit indices count per task."""
    visits: list[Visit] = []
    counters: dict[str, int] = {}
    run: list[EpisodeRecord] = []
    for rec in records:
        if run and rec.task_id != run[-1].task_id:
            task = run[-1].task_id
            visits.append(Visit(task, counters.get(task, 0), tuple(run)))
            counters[task] = counters.get(task, 0) + 1
            run = []
        run.append(rec)
    if run:
        task = run[-1].task_id
        visits.append(Visit(task, counters.get(task, 0), tuple(run)))
    return visits


def _window_mean(rewards: Sequence[float], first: bool) -> tuple[float, int]:
    n = min(WINDOW, len(rewards))
    chunk = rewards[:n] if first else rewards[len(rewards) - n :]
    return sum(chunk) / n, n


def final_task_reward(visit: Visit) -> float:
    """Mean episode reward over the last min(20, count) episodes."""
    if not visit.episodes:
        raise ContractViolation("visit has no episodes")
    return _window_mean([e.total_reward for e in visit.episodes], first=False)[0]


def initial_task_reward(visit: Visit) -> float:
    """Mean episode reward over the first min(20, count) episodes."""
    if not visit.episodes:
        raise ContractViolation("visit has no episodes")
    return _window_mean([e.total_reward for e in visit.episodes], first=True)[0]


def visit_cost(visit: Visit) -> float:
    return sum(e.total_cost for e in visit.episodes)


def total_cost(visits: Sequence[Visit]) -> float:
    """Per-visit cost sums averaged over the task's visits."""
    if not visits:
        raise ContractViolation("total_cost needs at least one visit")
    return sum(visit_cost(v) for v in visits) / len(visits)


def forgetting(visit: Visit, next_visit: Visit) -> float:
    """final reward of a visit minus immediate reward on the next revisit.

    Negative values mean the policy came back stronger (forward transfer).
    """
    if visit.task_id != next_visit.task_id:
        raise ContractViolation("forgetting compares visits of the same task")
    return final_task_reward(visit) - initial_task_reward(next_visit)


def success_rate(visit: Visit) -> Optional[float]:
    """Mean success flag over the visit; None when the channel is absent."""
    flags = [e.success for e in visit.episodes]
    if any(f is None for f in flags):
        return None
    return sum(1.0 for f in flags if f) / len(flags)


def visit_stats(visits: Sequence[Visit]) -> list[TaskVisitStats]:
    """Per-visit statistics, wiring each visit to its task's next revisit."""
    stats: list[TaskVisitStats] = []
    for i, visit in enumerate(visits):
        rewards = [e.total_reward for e in visit.episodes]
        initial, window = _window_mean(rewards, first=True)
        final, _ = _window_mean(rewards, first=False)
        immediate = None
        for later in visits[i + 1 :]:
            if later.task_id == visit.task_id:
                immediate = initial_task_reward(later)
                break
        stats.append(
            TaskVisitStats(
                task_id=visit.task_id,
                visit_index=visit.visit_index,
                n_episodes=len(visit.episodes),
                window=window,
                initial_reward=initial,
                final_reward=final,
                immediate_reward=immediate,
                total_cost=visit_cost(visit),
                success_rate=success_rate(visit),
            )
        )
    return stats


@dataclass(frozen=True)
class TaskSummary:
    task_id: str
    n_visits: int
    final_reward: float
    mean_forgetting: Optional[float]
    normalized_forgetting: Optional[float]
    degenerate_range: bool
    total_cost: float
    success_rate: Optional[float]


def normalized_forgetting(visits: Sequence[Visit]) -> tuple[Optional[float], bool]:
    """Mean forgetting over revisits divided by the first visit's |reward range|.

    The range is |final - initial| of the first visit, floored at 1e-8; the
    flag reports whether the floor was hit (flat first-visit learning curve).
    Returns (None, False) when the task was never revisited.
    """
    if len(visits) < 2:
        return None, False
    values = [forgetting(visits[k], visits[k + 1]) for k in range(len(visits) - 1)]
    mean_forget = sum(values) / len(values)
    span = abs(final_task_reward(visits[0]) - initial_task_reward(visits[0]))
    degenerate = span < RANGE_FLOOR
    return mean_forget / max(span, RANGE_FLOOR), degenerate


def summarize_task(records: Sequence[EpisodeRecord], task_id: str) -> TaskSummary:
    """Aggregate one task's visits from the full record stream."""
    visits = [v for v in split_visits(records) if v.task_id == task_id]
    if not visits:
        raise ContractViolation(f"no episodes for task {task_id!r}")
    values = [forgetting(visits[k], visits[k + 1]) for k in range(len(visits) - 1)]
    mean_forget = sum(values) / len(values) if values else None
    norm_forget, degenerate = normalized_forgetting(visits)
    episodes = [e for v in visits for e in v.episodes]
    flags = [e.success for e in episodes]
    rate = None
    if all(f is not None for f in flags):
        rate = sum(1.0 for f in flags if f) / len(flags)
    return TaskSummary(
        task_id=task_id,
        n_visits=len(visits),
        final_reward=sum(final_task_reward(v) for v in visits) / len(visits),
        mean_forgetting=mean_forget,
        normalized_forgetting=norm_forget,
        degenerate_range=degenerate,
        total_cost=total_cost(visits),
        success_rate=rate,
    )


def summarize(records: Sequence[EpisodeRecord]) -> list[TaskSummary]:
    """One summary per task, in order of first appearance."""
    seen: list[str] = []
    for rec in records:
        if rec.task_id not in seen:
            seen.append(rec.task_id)
    return [summarize_task(records, task) for task in seen]
