"""Constraint mechanisms: cost-shaped reward, Lagrangian and PID multipliers.

Three ways of pressing episodic cost below a limit ``d``:

* reward shaping, which folds ``-beta * cost`` into the learning signal;
* a Lagrange multiplier adapted by projected gradient ascent on the dual;
* a PID controller on the constraint violation driving the same multiplier.

The multiplier enters the actor loss through a clipped surrogate computed on
cost advantages.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .approximator import Policy
from .core import ContractViolation
from .ppo_core import clipped_policy_loss


@dataclass(frozen=True)
class ShapingConfig:
    """Cost/reward tradeoff weight for shaped-reward learning."""

    beta: float = 5.0

    def __post_init__(self):
        if not np.isfinite(self.beta) or self.beta < 0.0:
            raise ContractViolation("beta must be finite and non-negative")


def shape_reward(reward: float, cost: float, beta: float) -> float:
    """Learning signal reward - beta * cost, applied at storage time."""
    if cost < 0.0:
        raise ContractViolation("cost must be non-negative")
    return reward - beta * cost


@dataclass
class ConstraintController:
    """Lagrange multiplier state shared by the gradient and PID update rules.

    ``d`` is the episodic cost limit. The gradient rule performs projected
    ascent on the dual; the PID rule recomputes the multiplier from the
    proportional, integral and (positive part of the) derivative of the
    constraint violation. The multiplier and integral never go negative.
    """

    d: float = 25.0
    mode: str = "gradient"
    lr_lambda: float = 0.034
    k_p: float = 1.0
    k_i: float = 0.01
    k_d: float = 0.0
    lambda_lag: float = 0.0
    integral: float = 0.0
    prev_cost: float = 0.0

    def __post_init__(self):
        if self.mode not in ("gradient", "pid"):
            raise ContractViolation(f"unknown controller mode {self.mode!r}")
        if self.d < 0.0 or self.lr_lambda <= 0.0:
            raise ContractViolation("d must be >= 0 and lr_lambda > 0")
        if min(self.k_p, self.k_i, self.k_d) < 0.0:
            raise ContractViolation("PID gains must be non-negative")
        if self.lambda_lag < 0.0 or self.integral < 0.0:
            raise ContractViolation("lambda and integral start non-negative")

    def update(self, episodic_cost: float) -> float:
        if self.mode == "gradient":
            return lagrangian_update(self, episodic_cost)
        return pid_update(self, episodic_cost)


def lagrangian_update(ctrl: ConstraintController, episodic_cost: float) -> float:
    """Projected dual ascent: lambda <- max(0, lambda + lr * (J_C - d))."""
    ctrl.lambda_lag = max(0.0, ctrl.lambda_lag + ctrl.lr_lambda * (episodic_cost - ctrl.d))
    return ctrl.lambda_lag


def pid_update(ctrl: ConstraintController, episodic_cost: float) -> float:
    """PID recomputation of the multiplier from the violation J_C - d.

    delta <- J_C - d
    deriv <- (J_C - J_C_prev)_+
    I     <- (I + delta)_+
    lambda <- (K_P * delta + K_I * I + K_D * deriv)_+
    """
    delta = episodic_cost - ctrl.d
    deriv = max(0.0, episodic_cost - ctrl.prev_cost)
    ctrl.integral = max(0.0, ctrl.integral + delta)
    ctrl.lambda_lag = max(0.0, ctrl.k_p * delta + ctrl.k_i * ctrl.integral + ctrl.k_d * deriv)
    ctrl.prev_cost = episodic_cost
    return ctrl.lambda_lag


def lagrangian_actor_penalty(
    policy: Policy,
    states: np.ndarray,
    actions: np.ndarray,
    old_log_probs: np.ndarray,
    cost_advantages: np.ndarray,
    lambda_lag: float,
    clip: float,
) -> Optional[tuple[float, np.ndarray]]:
    """Multiplier-weighted cost surrogate added to the actor loss.

    Returns lambda / (1 + lambda) times the clipped surrogate objective
    evaluated with cost advantages, so minimizing the actor loss pushes the
    expected cost advantage down. The 1/(1+lambda) rescaling bounds the
    effective step size as the multiplier grows. Returns None when the
    multiplier is zero (no contribution at all).
    """
    if lambda_lag < 0.0:
        raise ContractViolation("lambda must be non-negative")
    if lambda_lag == 0.0:
        return None
    # clipped_policy_loss returns the negated surrogate objective, so the
    # penalty (+ objective) flips its sign and gradient.
    neg_obj, neg_grad, _ = clipped_policy_loss(
        policy, states, actions, old_log_probs, cost_advantages, clip
    )
    scale = lambda_lag / (1.0 + lambda_lag)
    return -scale * neg_obj, -scale * neg_grad
