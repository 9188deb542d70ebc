"""Finite-difference integrity sweep over every analytic gradient.

Builds small random policy/critic instances and checks the policy log-prob,
clipped surrogate, value regression, entropy, consolidation penalty,
multiplier penalty, and the composite actor loss against central
differences. Used by the ``grad-check`` CLI command and the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .approximator import CategoricalPolicy, GaussianPolicy, Mlp, grad_check
from .continual import EwcMemory, ewc_penalty
from .core import rng_stream
from .ppo_core import clipped_policy_loss, entropy_term, value_loss
from .safety import lagrangian_actor_penalty


@dataclass(frozen=True)
class SweepResult:
    loss_name: str
    instance: int
    max_rel_error: float
    passed: bool


def _policy_losses(policy, states, actions, old_logp, adv, cost_adv, memory, lam, clip):
    n = states.shape[0]

    def mean_logp():
        value = float(policy.log_prob_batch(states, actions).mean())
        grad = policy.log_prob_grad_weighted(states, actions, np.full(n, 1.0 / n))
        return value, grad

    def surrogate():
        loss, grad, _ = clipped_policy_loss(policy, states, actions, old_logp, adv, clip)
        return loss, grad

    def entropy():
        return entropy_term(policy, states)

    def consolidation():
        value, grad = ewc_penalty(memory, policy.params)
        return value, (np.zeros_like(policy.params) if grad is None else grad)

    def multiplier():
        out = lagrangian_actor_penalty(
            policy, states, actions, old_logp, cost_adv, lam, clip
        )
        if out is None:
            return 0.0, np.zeros_like(policy.params)
        return out

    def composite():
        total, grad = surrogate()
        e_val, e_grad = entropy()
        total += 0.01 * e_val
        grad = grad + 0.01 * e_grad
        for piece in (consolidation, multiplier):
            p_val, p_grad = piece()
            total += p_val
            grad = grad + p_grad
        return total, grad

    return {
        "log_prob": mean_logp,
        "clipped_surrogate": surrogate,
        "entropy": entropy,
        "ewc_penalty": consolidation,
        "lagrangian_penalty": multiplier,
        "composite_actor": composite,
    }


def gradient_integrity_sweep(
    n_instances: int = 50, h: float = 1e-5, tol: float = 1e-4, seed: int = 2024
) -> list[SweepResult]:
    """Check all analytic gradients on random small-net instances."""
    results: list[SweepResult] = []
    for k in range(n_instances):
        rng = rng_stream(seed, f"gradcheck-{k}")
        obs_dim = int(rng.integers(1, 4))
        batch = int(rng.integers(4, 9))
        hidden = (int(rng.integers(3, 6)),)
        discrete = k % 3 == 2
        states = rng.normal(size=(batch, obs_dim))
        if discrete:
            n_actions = int(rng.integers(2, 4))
            policy = CategoricalPolicy(obs_dim, n_actions, hidden)
            policy.init(rng)
            actions = rng.integers(0, n_actions, size=batch)
        else:
            act_dim = int(rng.integers(1, 3))
            policy = GaussianPolicy(obs_dim, act_dim, hidden)
            policy.init(rng)
            policy.log_std[...] = rng.uniform(-0.5, 0.3, size=act_dim)
            actions = rng.normal(size=(batch, act_dim))
        old_logp = policy.log_prob_batch(states, actions) + rng.uniform(-0.3, 0.3, batch)
        adv = rng.normal(size=batch)
        cost_adv = rng.normal(size=batch)
        memory = EwcMemory(lambda_ewc=float(rng.uniform(0.5, 4.0)))
        for _ in range(2):
            memory.append(
                rng.normal(size=policy.n_params),
                rng.uniform(0.0, 2.0, size=policy.n_params),
                "prior",
            )
        lam = float(rng.uniform(0.3, 2.0))

        theta0 = policy.get_params()
        losses = _policy_losses(
            policy, states, actions, old_logp, adv, cost_adv, memory, lam, 0.2
        )
        for name, loss_fn in losses.items():
            _, analytic = loss_fn()

            def f(theta, loss_fn=loss_fn):
                policy.set_params(theta)
                value = loss_fn()[0]
                return value

            rep = grad_check(f, analytic, theta0, h=h, tol=tol)
            policy.set_params(theta0)
            results.append(SweepResult(name, k, rep.max_rel_error, rep.passed))

        critic = Mlp((obs_dim, *hidden, 1))
        critic.init(rng)
        targets = rng.normal(size=batch)
        c0 = critic.params.copy()
        _, v_grad = value_loss(critic, states, targets)

        def f_value(theta):
            critic.params[...] = theta
            return value_loss(critic, states, targets)[0]

        rep = grad_check(f_value, v_grad, c0, h=h, tol=tol)
        critic.params[...] = c0
        results.append(SweepResult("value_loss", k, rep.max_rel_error, rep.passed))
    return results


def sweep_summary(results: list[SweepResult]) -> dict[str, float]:
    """Worst relative error per loss name."""
    worst: dict[str, float] = {}
    for res in results:
        worst[res.loss_name] = max(worst.get(res.loss_name, 0.0), res.max_rel_error)
    return worst
