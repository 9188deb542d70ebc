"""Experiment front end: configs, algorithm assembly, runs, and reports.

Config files are INI-style (sections with scalar assignments); unknown
sections or keys are hard errors. Each run directory is self-describing:
the fully resolved config is written first, and ``report`` works purely
from on-disk CSVs, emitting aggregate tables, smoothed learning-curve CSVs
and rendered figures.
"""

from __future__ import annotations

import configparser
import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .approximator import (
    CategoricalPolicy,
    GaussianPolicy,
    Mlp,
    Policy,
    save_policy,
    save_mlp,
)
from .continual import (
    EwcMemory,
    ReplayStore,
    ewc_penalty,
    finish_task,
    replay_mix,
    save_memory,
)
from .core import (
    ConfigurationError,
    EpisodeRecord,
    NumericError,
    TaskSchedule,
    advance_schedule,
    rng_stream,
)
from .envs import (
    ChainEnv,
    ChainSpec,
    DamagedRunner,
    RunnerParams,
    chain_task_set,
    default_chain_schedule,
    default_runner_schedule,
    hazard_chain_spec,
    load_chain_spec,
    runner_task_set,
    wrap_task_sequence,
)
from .metrics import TaskSummary, summarize
from .ppo_core import Adam, PpoConfig, RolloutBuffer, TrainBatch, ppo_update
from .safety import ConstraintController, lagrangian_actor_penalty

ALGORITHMS = ("ppo", "ppo_lag", "cppo_pid", "ppo_ewc", "safe_ewc", "cf_ewc", "replay")
ENVIRONMENTS = ("runner", "chain")

SUMMARY_COLUMNS = (
    "algorithm", "seed", "task_id", "final_reward",
    "normalized_forgetting", "total_cost", "success_rate",
)
EPISODE_COLUMNS = (
    "global_step", "task_id", "visit_index", "total_reward", "total_cost", "success",
)
DIAGNOSTIC_COLUMNS = (
    "global_step", "actor_loss", "value_loss", "cost_value_loss", "entropy",
    "approx_kl", "clip_fraction", "lambda", "episodic_cost", "cost_limit", "mean_cost",
)


# ---------------------------------------------------------------------------
# Configuration

_SCHEMA: dict[str, dict[str, tuple]] = {
    "experiment": {
        "algorithm": (str, "ppo"),
        "environment": (str, "runner"),
        "seeds": ("ints", (0, 1, 2, 3, 4)),
        "steps_per_task": (int, 0),  # 0 = environment default
        "out_dir": (str, "runs/out"),
        "checkpoint_interval": (int, 0),
        "workers": (int, 1),
    },
    "schedule": {
        "entries": ("entries", ()),  # empty = environment default sequence
    },
    "ppo": {
        "gamma": (float, 0.99),
        "lambda_gae": (float, 0.95),
        "clip": (float, 0.2),
        "value_coeff": (float, 0.5),
        "entropy_coeff": (float, 0.01),
        "lr_actor": (float, 3e-4),
        "lr_critic": (float, 3e-4),
        "epochs": (int, 40),
        "minibatch": (int, 256),
        "update_interval": (int, 0),  # 0 = environment default (2048 / 512)
        "target_kl": (float, 0.02),
        "hidden": (int, 32),
    },
    "safety": {
        "beta": (float, 5.0),
        "cost_limit": (float, -1.0),  # < 0 = environment default
        "cost_limit_scale": (float, -1.0),  # informational; resolved for runner
        "lagrangian_lr": (float, 0.034),
        "k_p": (float, 1.0),
        "k_i": (float, 0.01),
        "k_d": (float, 0.0),
    },
    "continual": {
        "lambda_ewc": (float, 12.926),
        "fisher_cap": (int, 1000),
        "replay_capacity": (int, 100_000),
    },
    "runner": {
        "drag": (float, 0.5),
        "dt": (float, 0.1),
        "v_limit": (float, 0.5),
        "action_penalty": (float, 2.4),
        "episode_len": (int, 200),
        "obs_noise_std": (float, 0.0),
    },
    "chain": {
        "episode_len": (int, 100),
        "gamma": (float, 0.9),
        "spec_file": (str, ""),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment description (all defaults expanded)."""

    algorithm: str
    environment: str
    seeds: tuple[int, ...]
    steps_per_task: int
    out_dir: str
    checkpoint_interval: int
    workers: int
    schedule_entries: tuple[tuple[str, int], ...]
    ppo: PpoConfig
    hidden: int
    beta: float
    cost_limit: float
    cost_limit_scale: float
    lagrangian_lr: float
    k_p: float
    k_i: float
    k_d: float
    lambda_ewc: float
    fisher_cap: int
    replay_capacity: int
    runner_params: RunnerParams
    chain_episode_len: int
    chain_gamma: float
    chain_spec_file: str

    @property
    def schedule(self) -> TaskSchedule:
        return TaskSchedule(self.schedule_entries)


def _parse_value(kind, raw: str):
    if kind is str:
        return raw.strip()
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind == "ints":
        return tuple(int(tok) for tok in raw.replace(",", " ").split())
    if kind == "entries":
        entries = []
        for tok in raw.replace(",", " ").split():
            if ":" not in tok:
                raise ConfigurationError(f"schedule entry {tok!r} must be task:steps")
            task, steps = tok.rsplit(":", 1)
            entries.append((task, int(steps)))
        return tuple(entries)
    raise AssertionError(f"unknown schema kind {kind}")


def read_config_file(path: str) -> dict[str, dict[str, object]]:
    """Parse an INI config, rejecting unknown sections and keys."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    values: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigurationError(f"unknown config section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigurationError(f"unknown key {key!r} in section [{section}]")
            kind = _SCHEMA[section][key][0]
            try:
                values[section][key] = _parse_value(kind, raw)
            except (ValueError, ConfigurationError) as exc:
                raise ConfigurationError(
                    f"bad value for [{section}] {key} = {raw!r}: {exc}"
                ) from exc
    return values


def resolve_config(
    values: dict[str, dict[str, object]],
    overrides: Optional[dict[str, object]] = None,
) -> ExperimentConfig:
    """Merge file values over defaults, then CLI overrides over both."""
    merged: dict[str, dict[str, object]] = {}
    for section, keys in _SCHEMA.items():
        merged[section] = {}
        for key, (_, default) in keys.items():
            merged[section][key] = values.get(section, {}).get(key, default)
    overrides = overrides or {}
    if overrides.get("seed") is not None:
        merged["experiment"]["seeds"] = (int(overrides["seed"]),)
    if overrides.get("steps_per_task") is not None:
        merged["experiment"]["steps_per_task"] = int(overrides["steps_per_task"])
    if overrides.get("out") is not None:
        merged["experiment"]["out_dir"] = str(overrides["out"])

    exp = merged["experiment"]
    if exp["algorithm"] not in ALGORITHMS:
        raise ConfigurationError(
            f"unknown algorithm {exp['algorithm']!r}; expected one of {ALGORITHMS}"
        )
    if exp["environment"] not in ENVIRONMENTS:
        raise ConfigurationError(
            f"unknown environment {exp['environment']!r}; expected one of {ENVIRONMENTS}"
        )
    if not exp["seeds"]:
        raise ConfigurationError("at least one seed is required")

    env = exp["environment"]
    steps = int(exp["steps_per_task"])
    if steps <= 0:
        steps = 50_000 if env == "runner" else 5_000
    entries = merged["schedule"]["entries"]
    if not entries:
        if env == "runner":
            entries = default_runner_schedule(steps).entries
        else:
            entries = default_chain_schedule(steps).entries

    runner_params = RunnerParams(
        gain=1.0,
        drag=float(merged["runner"]["drag"]),
        dt=float(merged["runner"]["dt"]),
        v_limit=float(merged["runner"]["v_limit"]),
        action_penalty=float(merged["runner"]["action_penalty"]),
        episode_len=int(merged["runner"]["episode_len"]),
        obs_noise_std=float(merged["runner"]["obs_noise_std"]),
    )

    cost_limit = float(merged["safety"]["cost_limit"])
    scale = float(merged["safety"]["cost_limit_scale"])
    if env == "runner":
        if scale < 0.0:
            scale = runner_params.episode_len / 1000.0
        if cost_limit < 0.0:
            cost_limit = 25.0 * scale
    else:
        scale = 1.0 if scale < 0.0 else scale
        if cost_limit < 0.0:
            cost_limit = 0.2

    update_interval = int(merged["ppo"]["update_interval"])
    if update_interval <= 0:
        update_interval = 2048 if env == "runner" else 512

    ppo = PpoConfig(
        gamma=float(merged["ppo"]["gamma"]),
        lambda_gae=float(merged["ppo"]["lambda_gae"]),
        clip=float(merged["ppo"]["clip"]),
        value_coeff=float(merged["ppo"]["value_coeff"]),
        entropy_coeff=float(merged["ppo"]["entropy_coeff"]),
        lr_actor=float(merged["ppo"]["lr_actor"]),
        lr_critic=float(merged["ppo"]["lr_critic"]),
        epochs=int(merged["ppo"]["epochs"]),
        minibatch=int(merged["ppo"]["minibatch"]),
        update_interval=update_interval,
        target_kl=float(merged["ppo"]["target_kl"]),
    )

    return ExperimentConfig(
        algorithm=str(exp["algorithm"]),
        environment=env,
        seeds=tuple(int(s) for s in exp["seeds"]),
        steps_per_task=steps,
        out_dir=str(exp["out_dir"]),
        checkpoint_interval=int(exp["checkpoint_interval"]),
        workers=max(1, int(exp["workers"])),
        schedule_entries=tuple(entries),
        ppo=ppo,
        hidden=int(merged["ppo"]["hidden"]),
        beta=float(merged["safety"]["beta"]),
        cost_limit=cost_limit,
        cost_limit_scale=scale,
        lagrangian_lr=float(merged["safety"]["lagrangian_lr"]),
        k_p=float(merged["safety"]["k_p"]),
        k_i=float(merged["safety"]["k_i"]),
        k_d=float(merged["safety"]["k_d"]),
        lambda_ewc=float(merged["continual"]["lambda_ewc"]),
        fisher_cap=int(merged["continual"]["fisher_cap"]),
        replay_capacity=int(merged["continual"]["replay_capacity"]),
        runner_params=runner_params,
        chain_episode_len=int(merged["chain"]["episode_len"]),
        chain_gamma=float(merged["chain"]["gamma"]),
        chain_spec_file=str(merged["chain"]["spec_file"]),
    )


def load_config(path: str, overrides: Optional[dict[str, object]] = None) -> ExperimentConfig:
    return resolve_config(read_config_file(path), overrides)


def resolved_config_text(config: ExperimentConfig) -> str:
    """INI text with every value expanded; parses back to the same config."""
    schedule = " ".join(f"{t}:{n}" for t, n in config.schedule_entries)
    rp = config.runner_params
    sections = {
        "experiment": {
            "algorithm": config.algorithm,
            "environment": config.environment,
            "seeds": " ".join(str(s) for s in config.seeds),
            "steps_per_task": config.steps_per_task,
            "out_dir": config.out_dir,
            "checkpoint_interval": config.checkpoint_interval,
            "workers": config.workers,
        },
        "schedule": {"entries": schedule},
        "ppo": {
            "gamma": repr(config.ppo.gamma),
            "lambda_gae": repr(config.ppo.lambda_gae),
            "clip": repr(config.ppo.clip),
            "value_coeff": repr(config.ppo.value_coeff),
            "entropy_coeff": repr(config.ppo.entropy_coeff),
            "lr_actor": repr(config.ppo.lr_actor),
            "lr_critic": repr(config.ppo.lr_critic),
            "epochs": config.ppo.epochs,
            "minibatch": config.ppo.minibatch,
            "update_interval": config.ppo.update_interval,
            "target_kl": repr(config.ppo.target_kl),
            "hidden": config.hidden,
        },
        "safety": {
            "beta": repr(config.beta),
            "cost_limit": repr(config.cost_limit),
            "cost_limit_scale": repr(config.cost_limit_scale),
            "lagrangian_lr": repr(config.lagrangian_lr),
            "k_p": repr(config.k_p),
            "k_i": repr(config.k_i),
            "k_d": repr(config.k_d),
        },
        "continual": {
            "lambda_ewc": repr(config.lambda_ewc),
            "fisher_cap": config.fisher_cap,
            "replay_capacity": config.replay_capacity,
        },
        "runner": {
            "drag": repr(rp.drag),
            "dt": repr(rp.dt),
            "v_limit": repr(rp.v_limit),
            "action_penalty": repr(rp.action_penalty),
            "episode_len": rp.episode_len,
            "obs_noise_std": repr(rp.obs_noise_std),
        },
        "chain": {
            "episode_len": config.chain_episode_len,
            "gamma": repr(config.chain_gamma),
            "spec_file": config.chain_spec_file,
        },
    }
    lines = []
    for section, keys in sections.items():
        lines.append(f"[{section}]")
        for key, value in keys.items():
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Environment and agent assembly


def environment_factories(config: ExperimentConfig) -> dict[str, Callable]:
    if config.environment == "runner":
        tasks = runner_task_set(config.runner_params)
        return {
            task: (lambda p=params: DamagedRunner(p)) for task, params in tasks.items()
        }
    if config.chain_spec_file:
        base = load_chain_spec(config.chain_spec_file)
    else:
        base = hazard_chain_spec(config.chain_gamma)
    tasks = chain_task_set(base)
    ep_len = config.chain_episode_len
    return {
        task: (lambda s=spec: ChainEnv(s, episode_len=ep_len)) for task, spec in tasks.items()
    }


def chain_specs(config: ExperimentConfig) -> dict[str, ChainSpec]:
    """Per-task tabular specs for oracle checks (chain environment only)."""
    if config.environment != "chain":
        raise ConfigurationError("tabular specs exist only for the chain environment")
    if config.chain_spec_file:
        base = load_chain_spec(config.chain_spec_file)
    else:
        base = hazard_chain_spec(config.chain_gamma)
    return chain_task_set(base)


@dataclass
class Agent:
    """One seeded learner: networks, optimizers, and wired mechanisms."""

    algorithm: str
    policy: Policy
    critic: Mlp
    cost_critic: Mlp
    actor_opt: Adam
    critic_opt: Adam
    cost_opt: Adam
    beta: float = 0.0
    memory: Optional[EwcMemory] = None
    cost_weighted_fisher: bool = False
    controller: Optional[ConstraintController] = None
    replay: Optional[ReplayStore] = None

    def actor_penalty(self, clip: float):
        """Per-minibatch hook adding the consolidation or multiplier term."""
        if self.memory is not None:
            memory = self.memory

            def ewc_hook(policy: Policy, batch: TrainBatch, idx: np.ndarray):
                value, grad = ewc_penalty(memory, policy.params)
                return None if grad is None else (value, grad)

            return ewc_hook
        if self.controller is not None:
            controller = self.controller

            def lag_hook(policy: Policy, batch: TrainBatch, idx: np.ndarray):
                return lagrangian_actor_penalty(
                    policy,
                    batch.states[idx],
                    batch.actions[idx],
                    batch.old_log_probs[idx],
                    batch.cost_advantages[idx],
                    controller.lambda_lag,
                    clip,
                )

            return lag_hook
        return None


def assemble(config: ExperimentConfig, seed: int) -> Agent:
    """Wire mechanisms onto the shared on-policy backbone.

    ppo: none. ppo_ewc: consolidation penalty. safe_ewc: consolidation
    penalty plus cost-shaped rewards at storage. cf_ewc: consolidation with
    cost-weighted importance, rewards unshaped. ppo_lag / cppo_pid:
    multiplier penalty with the respective update rule. replay: 50/50 batch
    mixing before each update.
    """
    init_rng = rng_stream(seed, "init")
    probe = next(iter(environment_factories(config).values()))()
    hidden = (config.hidden, config.hidden)
    if probe.discrete:
        policy: Policy = CategoricalPolicy(probe.observation_dim, probe.n_actions, hidden)
    else:
        policy = GaussianPolicy(probe.observation_dim, probe.action_dim, hidden)
    policy.init(init_rng)
    critic = Mlp((probe.observation_dim, *hidden, 1))
    critic.init(init_rng)
    cost_critic = Mlp((probe.observation_dim, *hidden, 1))
    cost_critic.init(init_rng)

    agent = Agent(
        algorithm=config.algorithm,
        policy=policy,
        critic=critic,
        cost_critic=cost_critic,
        actor_opt=Adam(policy.n_params, config.ppo.lr_actor),
        critic_opt=Adam(critic.n_params, config.ppo.lr_critic),
        cost_opt=Adam(cost_critic.n_params, config.ppo.lr_critic),
    )
    if config.algorithm in ("ppo_ewc", "safe_ewc", "cf_ewc"):
        agent.memory = EwcMemory(lambda_ewc=config.lambda_ewc)
        agent.cost_weighted_fisher = config.algorithm == "cf_ewc"
        if config.algorithm == "safe_ewc":
            agent.beta = config.beta
    elif config.algorithm in ("ppo_lag", "cppo_pid"):
        agent.controller = ConstraintController(
            d=config.cost_limit,
            mode="gradient" if config.algorithm == "ppo_lag" else "pid",
            lr_lambda=config.lagrangian_lr,
            k_p=config.k_p,
            k_i=config.k_i,
            k_d=config.k_d,
        )
    elif config.algorithm == "replay":
        agent.replay = ReplayStore(config.replay_capacity)
    return agent


# ---------------------------------------------------------------------------
# Seeded run


@dataclass
class SeedResult:
    seed: int
    status: str
    error: str
    records: list[EpisodeRecord] = field(default_factory=list)
    summaries: list[TaskSummary] = field(default_factory=list)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def run_seed(config: ExperimentConfig, seed: int, seed_dir: Path) -> SeedResult:
    """Execute the full schedule for one seed, writing per-seed artifacts."""
    seed_dir.mkdir(parents=True, exist_ok=True)
    agent = assemble(config, seed)
    schedule = config.schedule
    env = wrap_task_sequence(environment_factories(config), schedule)
    has_success = config.environment == "chain"

    env_rng = rng_stream(seed, "env")
    policy_rng = rng_stream(seed, "policy")
    fisher_rng = rng_stream(seed, "fisher")
    minibatch_rng = rng_stream(seed, "minibatch")
    replay_rng = rng_stream(seed, "replay")

    action_dim = 0 if env.discrete else env.action_dim
    buffer = RolloutBuffer(config.ppo.update_interval, env.observation_dim, action_dim)
    hook = agent.actor_penalty(config.ppo.clip)
    batch_transform = None
    if agent.replay is not None:
        store = agent.replay

        def batch_transform(batch: TrainBatch) -> TrainBatch:
            mixed = replay_mix(store, batch, replay_rng)
            store.push_batch(batch)
            return mixed

    records: list[EpisodeRecord] = []
    diagnostics: list[dict] = []
    ep_reward = ep_cost = 0.0
    ep_len = 0
    episodic_cost = 0.0
    completed_idx = 0
    update_count = 0
    status, error = "ok", ""

    obs = env.reset(env_rng)
    prev_task = schedule.entries[0][0]
    try:
        for gstep in range(schedule.total_steps):
            task, boundary = advance_schedule(schedule, gstep)
            if boundary and gstep > 0:
                if agent.memory is not None:
                    finish_task(
                        agent.memory,
                        agent.policy,
                        env.make_env(prev_task),
                        config.fisher_cap,
                        fisher_rng,
                        cost_weighted=agent.cost_weighted_fisher,
                        task_id=prev_task,
                    )
                buffer.clear()  # a new task starts with an empty rollout
            prev_task = task

            action, log_prob = agent.policy.act(obs, policy_rng)
            result = env.step(action, env_rng)
            stored_reward = (
                result.reward - agent.beta * result.cost if agent.beta else result.reward
            )
            buffer.add(
                obs, action, stored_reward, result.cost, log_prob,
                result.terminated, result.truncated, result.next_state,
            )
            ep_reward += result.reward
            ep_cost += result.cost
            ep_len += 1
            if result.terminated or result.truncated:
                success = bool(result.terminated) if has_success else None
                records.append(
                    EpisodeRecord(ep_reward, ep_cost, ep_len, success, task, gstep)
                )
                ep_reward = ep_cost = 0.0
                ep_len = 0
                obs = env.reset(env_rng)
            else:
                obs = result.next_state

            if buffer.full:
                window = records[completed_idx:]
                if window:
                    episodic_cost = sum(e.total_cost for e in window) / len(window)
                    completed_idx = len(records)
                if agent.controller is not None:
                    agent.controller.update(episodic_cost)
                mean_cost = float(buffer.costs[: buffer.size].mean())
                report = ppo_update(
                    buffer,
                    agent.policy,
                    agent.critic,
                    agent.cost_critic,
                    config.ppo,
                    hook,
                    actor_opt=agent.actor_opt,
                    critic_opt=agent.critic_opt,
                    cost_opt=agent.cost_opt,
                    rng=minibatch_rng,
                    batch_transform=batch_transform,
                )
                update_count += 1
                diagnostics.append(
                    {
                        "global_step": gstep + 1,
                        "actor_loss": report.actor_loss,
                        "value_loss": report.value_loss,
                        "cost_value_loss": report.cost_value_loss,
                        "entropy": report.entropy,
                        "approx_kl": report.approx_kl,
                        "clip_fraction": report.clip_fraction,
                        "lambda": agent.controller.lambda_lag if agent.controller else 0.0,
                        "episodic_cost": episodic_cost,
                        "cost_limit": config.cost_limit,
                        "mean_cost": mean_cost,
                    }
                )
                if (
                    config.checkpoint_interval > 0
                    and update_count % config.checkpoint_interval == 0
                ):
                    _save_agent(agent, seed_dir, suffix="_latest")
    except NumericError as exc:
        status, error = "failed", str(exc)

    _save_agent(agent, seed_dir, suffix="")
    _write_episodes(seed_dir / "episodes.csv", records)
    _write_diagnostics(seed_dir / "diagnostics.csv", diagnostics)
    summaries = summarize(records) if status == "ok" and records else []
    return SeedResult(seed, status, error, records, summaries)


def _save_agent(agent: Agent, seed_dir: Path, suffix: str) -> None:
    save_policy(str(seed_dir / f"actor{suffix}.ckpt"), agent.policy)
    save_mlp(str(seed_dir / f"critic{suffix}.ckpt"), agent.critic)
    save_mlp(str(seed_dir / f"cost_critic{suffix}.ckpt"), agent.cost_critic)
    if agent.memory is not None:
        save_memory(str(seed_dir / f"memory{suffix}.ckpt"), agent.memory)


def _write_episodes(path: Path, records: Sequence[EpisodeRecord]) -> None:
    from .metrics import split_visits

    visit_of: dict[int, int] = {}
    offset = 0
    for visit in split_visits(records):
        for i, _ in enumerate(visit.episodes):
            visit_of[offset + i] = visit.visit_index
        offset += len(visit.episodes)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPISODE_COLUMNS)
        for i, rec in enumerate(records):
            writer.writerow(
                [
                    rec.global_step,
                    rec.task_id,
                    visit_of[i],
                    _fmt(rec.total_reward),
                    _fmt(rec.total_cost),
                    _fmt(rec.success),
                ]
            )


def read_episodes(path: str) -> list[EpisodeRecord]:
    """Parse an episodes CSV back into records (bit-exact floats)."""
    records = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            success = None if row["success"] == "" else row["success"] == "1"
            records.append(
                EpisodeRecord(
                    total_reward=float(row["total_reward"]),
                    total_cost=float(row["total_cost"]),
                    length=1,
                    success=success,
                    task_id=row["task_id"],
                    global_step=int(row["global_step"]),
                )
            )
    return records


def _write_diagnostics(path: Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(DIAGNOSTIC_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[col]) for col in DIAGNOSTIC_COLUMNS])


def summary_rows(algorithm: str, seed: int, summaries: Sequence[TaskSummary]) -> list[list[str]]:
    rows = []
    for s in summaries:
        rows.append(
            [
                algorithm,
                str(seed),
                s.task_id,
                _fmt(s.final_reward),
                _fmt(s.normalized_forgetting),
                _fmt(s.total_cost),
                _fmt(s.success_rate),
            ]
        )
    return rows


def run(config: ExperimentConfig) -> list[SeedResult]:
    """Run every seed, then write the combined summary and run manifest."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config_resolved.ini").write_text(resolved_config_text(config))

    results: list[SeedResult]
    if config.workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [
                pool.submit(run_seed, config, seed, out_dir / f"seed_{seed}")
                for seed in config.seeds
            ]
            results = [f.result() for f in futures]
    else:
        results = [
            run_seed(config, seed, out_dir / f"seed_{seed}") for seed in config.seeds
        ]
    results.sort(key=lambda r: config.seeds.index(r.seed))

    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for res in results:
            for row in summary_rows(config.algorithm, res.seed, res.summaries):
                writer.writerow(row)
    with open(out_dir / "runs.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "status", "error"])
        for res in results:
            writer.writerow([res.seed, res.status, res.error])
    return results


# ---------------------------------------------------------------------------
# Reporting

METRIC_COLUMNS = ("final_reward", "normalized_forgetting", "total_cost", "success_rate")


def _smooth(values: Sequence[float], window: int = 100) -> list[float]:
    out, acc = [], 0.0
    from collections import deque

    tail: deque[float] = deque()
    for v in values:
        tail.append(v)
        acc += v
        if len(tail) > window:
            acc -= tail.popleft()
        out.append(acc / len(tail))
    return out


def _find_summaries(root: Path) -> list[Path]:
    if (root / "summary.csv").exists():
        return [root / "summary.csv"]
    return sorted(root.rglob("summary.csv"))


def report(out_dir: str, figures: bool = True) -> dict[str, dict[str, tuple[float, float, int]]]:
    """Aggregate runs under ``out_dir``; emit CSVs and rendered figures.

    Returns {algorithm: {metric: (mean, sample_std, n)}} over all
    (seed, task) cells. Learning curves are window-100 smoothed episode
    means, written per (algorithm, seed) and plotted to PNG files.
    """
    root = Path(out_dir)
    summary_paths = _find_summaries(root)
    if not summary_paths:
        raise ConfigurationError(f"no runs found under {out_dir}")

    by_algorithm: dict[str, dict[str, list[float]]] = {}
    for path in summary_paths:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                bucket = by_algorithm.setdefault(
                    row["algorithm"], {m: [] for m in METRIC_COLUMNS}
                )
                for metric in METRIC_COLUMNS:
                    if row[metric] != "":
                        bucket[metric].append(float(row[metric]))

    aggregate: dict[str, dict[str, tuple[float, float, int]]] = {}
    for algorithm, buckets in sorted(by_algorithm.items()):
        aggregate[algorithm] = {}
        for metric, values in buckets.items():
            n = len(values)
            if n == 0:
                continue
            mean = sum(values) / n
            std = math.sqrt(sum((v - mean) ** 2 for v in values) / (n - 1)) if n > 1 else 0.0
            aggregate[algorithm][metric] = (mean, std, n)

    with open(root / "aggregate.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["algorithm", "metric", "mean", "std", "n"])
        for algorithm, metrics_map in aggregate.items():
            for metric, (mean, std, n) in metrics_map.items():
                writer.writerow([algorithm, metric, repr(mean), repr(std), n])

    curves: list[tuple[str, int, list[int], list[float], list[float]]] = []
    for path in summary_paths:
        run_dir = path.parent
        algorithm = _run_algorithm(path)
        for seed_dir in sorted(run_dir.glob("seed_*")):
            ep_path = seed_dir / "episodes.csv"
            if not ep_path.exists():
                continue
            steps, rewards, costs = [], [], []
            with open(ep_path, "r", newline="", encoding="utf-8") as fh:
                for row in csv.DictReader(fh):
                    steps.append(int(row["global_step"]))
                    rewards.append(float(row["total_reward"]))
                    costs.append(float(row["total_cost"]))
            if steps:
                seed = int(seed_dir.name.split("_")[1])
                curves.append((algorithm, seed, steps, _smooth(rewards), _smooth(costs)))

    with open(root / "curves.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["algorithm", "seed", "global_step", "reward_smoothed", "cost_smoothed"])
        for algorithm, seed, steps, rewards, costs in curves:
            for step, r, c in zip(steps, rewards, costs):
                writer.writerow([algorithm, seed, step, repr(r), repr(c)])

    if figures and curves:
        _render_figures(root, curves)
    return aggregate


def _run_algorithm(summary_path: Path) -> str:
    with open(summary_path, "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            return row["algorithm"]
    return summary_path.parent.name


def _render_figures(root: Path, curves) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    algorithms = sorted({c[0] for c in curves})
    cmap = plt.get_cmap("tab10")
    colors = {alg: cmap(i % 10) for i, alg in enumerate(algorithms)}
    for channel, idx, fname in (("reward", 3, "reward_curves.png"), ("cost", 4, "cost_curves.png")):
        fig, ax = plt.subplots(figsize=(8, 4.5))
        labeled = set()
        for algorithm, seed, steps, rewards, costs in curves:
            series = (rewards, costs)[idx - 3]
            label = algorithm if algorithm not in labeled else None
            labeled.add(algorithm)
            ax.plot(steps, series, color=colors[algorithm], alpha=0.6, lw=1.0, label=label)
        ax.set_xlabel("environment step")
        ax.set_ylabel(f"episode {channel} (window-100 mean)")
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        fig.savefig(root / fname, dpi=130)
        plt.close(fig)
