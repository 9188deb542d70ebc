"""Safe continual reinforcement learning toolkit.

Desk-scale non-stationary constrained environments (a damaged point-mass
runner and a tabular hazard chain), PPO-family learners with safety and
consolidation mechanisms, exact tabular oracles, forgetting/safety metrics,
and a batch experiment harness.
"""

__version__ = "0.1.0"

from .core import (
    ContractViolation,
    ConfigurationError,
    EpisodeRecord,
    NumericError,
    RunSeed,
    ScheduleRangeError,
    StateError,
    TaskSchedule,
    Transition,
    advance_schedule,
    nscmdp_step,
    rng_stream,
)

__all__ = [
    "ContractViolation",
    "ConfigurationError",
    "EpisodeRecord",
    "NumericError",
    "RunSeed",
    "ScheduleRangeError",
    "StateError",
    "TaskSchedule",
    "Transition",
    "advance_schedule",
    "nscmdp_step",
    "rng_stream",
]
