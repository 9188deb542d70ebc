"""Minimal differentiable function approximation.

Small tanh MLPs with flat parameter vectors and hand-derived backward
passes, Gaussian and categorical policy heads, a central-difference
gradient checker, and a plain-text checkpoint format. Everything runs in
float64 so finite-difference checks have headroom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import ConfigurationError, ContractViolation, NumericError

LOG_2PI = math.log(2.0 * math.pi)

CHECKPOINT_HEADER = "lifeline-ckpt v1"


def parameter_count(widths: Sequence[int]) -> int:
    return sum(widths[i] * widths[i + 1] + widths[i + 1] for i in range(len(widths) - 1))


class Mlp:
    """Fully connected net: tanh on hidden layers, identity on the output.

    Parameters live in one flat float64 vector, laid out per layer as the
    row-major weight matrix followed by the bias vector. Weight and bias
    views alias the flat vector, so in-place updates to ``params`` are seen
    by the forward pass.
    """

    def __init__(self, widths: Sequence[int], params: Optional[np.ndarray] = None):
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ContractViolation(f"invalid layer widths {widths}")
        self.widths = tuple(int(w) for w in widths)
        n = parameter_count(self.widths)
        if params is None:
            params = np.zeros(n, dtype=np.float64)
        if params.shape != (n,):
            raise ContractViolation(f"parameter buffer must have shape ({n},)")
        self.params = params
        self._weights: list[np.ndarray] = []
        self._biases: list[np.ndarray] = []
        offset = 0
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            w = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = params[offset : offset + fan_out]
            offset += fan_out
            self._weights.append(w)
            self._biases.append(b)

    @property
    def n_params(self) -> int:
        return self.params.shape[0]

    def init(self, rng: np.random.Generator) -> None:
        """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
        for w, b in zip(self._weights, self._biases):
            bound = 1.0 / math.sqrt(w.shape[0])
            w[...] = rng.uniform(-bound, bound, size=w.shape)
            b[...] = 0.0

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.widths[0]:
            raise ContractViolation(
                f"input width {h.shape[1]} does not match first layer {self.widths[0]}"
            )
        last = len(self._weights) - 1
        for i, (w, b) in enumerate(zip(self._weights, self._biases)):
            h = h @ w + b
            if i != last:
                h = np.tanh(h)
        return h[0] if single else h

    def forward_cache(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Forward pass keeping each layer's input for the backward pass."""
        h = np.asarray(x, dtype=np.float64)
        if h.ndim == 1:
            h = h[None, :]
        if h.shape[1] != self.widths[0]:
            raise ContractViolation(
                f"input width {h.shape[1]} does not match first layer {self.widths[0]}"
            )
        inputs = [h]
        last = len(self._weights) - 1
        for i, (w, b) in enumerate(zip(self._weights, self._biases)):
            h = h @ w + b
            if i != last:
                h = np.tanh(h)
            inputs.append(h)
        return h, inputs

    def backward(self, inputs: list[np.ndarray], dout: np.ndarray) -> np.ndarray:
        """Flat gradient of sum(dout * output) w.r.t. all parameters.

        ``inputs`` is the cache from ``forward_cache``; hidden activations are
        the tanh outputs, so dtanh/dz = 1 - act**2 needs no recomputation.
        """
        grad = np.zeros_like(self.params)
        offset = self.n_params
        d = np.asarray(dout, dtype=np.float64)
        if d.ndim == 1:
            d = d[None, :]
        for i in range(len(self._weights) - 1, -1, -1):
            w = self._weights[i]
            h_in = inputs[i]
            fan_in, fan_out = w.shape
            offset -= fan_out
            grad[offset : offset + fan_out] = d.sum(axis=0)
            offset -= fan_in * fan_out
            grad[offset : offset + fan_in * fan_out] = (h_in.T @ d).ravel()
            if i > 0:
                d = (d @ w.T) * (1.0 - inputs[i] ** 2)
        return grad


class GaussianPolicy:
    """Diagonal Gaussian policy: MLP mean, state-independent log std.

    The flat parameter vector is the mean net's parameters followed by one
    log-std entry per action dimension.

    log pi(a|s) = sum_d [ -(a_d - mu_d)^2 / (2 sigma_d^2) - log sigma_d
                          - 0.5 log(2 pi) ]
    """

    LOG_STD_MIN = math.log(0.1)
    LOG_STD_MAX = math.log(2.0)

    def __init__(
        self,
        obs_dim: int,
        action_dim: int,
        hidden: Sequence[int] = (32, 32),
        init_log_std: float = math.log(0.5),
    ):
        widths = (obs_dim, *hidden, action_dim)
        n_mean = parameter_count(widths)
        self.params = np.zeros(n_mean + action_dim, dtype=np.float64)
        self.mean_net = Mlp(widths, self.params[:n_mean])
        self.log_std = self.params[n_mean:]
        self.log_std[...] = init_log_std
        self.action_dim = action_dim
        self.obs_dim = obs_dim
        self._init_log_std = init_log_std

    def project(self) -> None:
        """Clamp log-std into a sane band after an optimizer step.

        Keeps exploration alive across task changes and keeps the score
        scale (and with it importance estimates) bounded.
        """
        np.clip(self.log_std, self.LOG_STD_MIN, self.LOG_STD_MAX, out=self.log_std)

    @property
    def n_params(self) -> int:
        return self.params.shape[0]

    @property
    def widths(self) -> tuple[int, ...]:
        return self.mean_net.widths

    def init(self, rng: np.random.Generator) -> None:
        self.mean_net.init(rng)
        self.log_std[...] = self._init_log_std

    def get_params(self) -> np.ndarray:
        return self.params.copy()

    def set_params(self, values: np.ndarray) -> None:
        self.params[...] = values

    def _std(self) -> np.ndarray:
        std = np.exp(self.log_std)
        if not np.all(np.isfinite(std)) or np.any(std <= 0.0):
            raise NumericError("policy std is non-finite or non-positive")
        return std

    def act(self, obs: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, float]:
        mu = self.mean_net.forward(obs)
        std = self._std()
        action = mu + std * rng.standard_normal(self.action_dim)
        z = (action - mu) / std
        log_prob = float(np.sum(-0.5 * z * z - self.log_std - 0.5 * LOG_2PI))
        return action, log_prob

    def log_prob(self, obs: np.ndarray, action: np.ndarray) -> float:
        return float(self.log_prob_batch(obs[None, :], np.asarray(action)[None, :])[0])

    def log_prob_batch(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        mu = self.mean_net.forward(states)
        std = self._std()
        z = (actions - mu) / std
        return np.sum(-0.5 * z * z - self.log_std - 0.5 * LOG_2PI, axis=1)

    def log_prob_grad_weighted(
        self, states: np.ndarray, actions: np.ndarray, weights: np.ndarray
    ) -> np.ndarray:
        """Gradient of sum_i w_i * log pi(a_i|s_i) w.r.t. the flat parameters."""
        out, cache = self.mean_net.forward_cache(states)
        std = self._std()
        var = std * std
        diff = actions - out
        dmu = weights[:, None] * diff / var
        grad_mean = self.mean_net.backward(cache, dmu)
        # d log pi / d log_std_d = (a_d - mu_d)^2 / sigma_d^2 - 1
        dlog_std = np.sum(weights[:, None] * (diff * diff / var - 1.0), axis=0)
        return np.concatenate([grad_mean, dlog_std])

    def score(self, obs: np.ndarray, action: np.ndarray) -> np.ndarray:
        """Gradient of log pi(a|s) for a single (s, a) pair."""
        return self.log_prob_grad_weighted(
            np.asarray(obs, dtype=np.float64)[None, :],
            np.asarray(action, dtype=np.float64)[None, :],
            np.ones(1),
        )

    def entropy(self) -> float:
        """Differential entropy, same for every state."""
        return float(np.sum(0.5 * (LOG_2PI + 1.0) + self.log_std))

    def entropy_mean_and_grad(self, states: np.ndarray) -> tuple[float, np.ndarray]:
        grad = np.zeros_like(self.params)
        grad[self.mean_net.n_params :] = 1.0
        return self.entropy(), grad


class CategoricalPolicy:
    """Softmax policy over a finite action set; MLP produces the logits."""

    def __init__(self, obs_dim: int, n_actions: int, hidden: Sequence[int] = (32, 32)):
        self.mlp = Mlp((obs_dim, *hidden, n_actions))
        self.params = self.mlp.params
        self.n_actions = n_actions
        self.obs_dim = obs_dim

    def project(self) -> None:
        """No projection needed for the softmax head."""

    @property
    def n_params(self) -> int:
        return self.params.shape[0]

    @property
    def widths(self) -> tuple[int, ...]:
        return self.mlp.widths

    def init(self, rng: np.random.Generator) -> None:
        self.mlp.init(rng)

    def get_params(self) -> np.ndarray:
        return self.params.copy()

    def set_params(self, values: np.ndarray) -> None:
        self.params[...] = values

    @staticmethod
    def _log_softmax(logits: np.ndarray) -> np.ndarray:
        shifted = logits - logits.max(axis=-1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def act(self, obs: np.ndarray, rng: np.random.Generator) -> tuple[int, float]:
        log_p = self._log_softmax(self.mlp.forward(obs))
        p = np.exp(log_p)
        action = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
        action = min(action, self.n_actions - 1)
        return action, float(log_p[action])

    def action_probs(self, obs: np.ndarray) -> np.ndarray:
        return np.exp(self._log_softmax(self.mlp.forward(obs)))

    def log_prob_batch(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        log_p = self._log_softmax(self.mlp.forward(states))
        idx = np.asarray(actions, dtype=np.int64).reshape(-1)
        return log_p[np.arange(len(idx)), idx]

    def log_prob_grad_weighted(
        self, states: np.ndarray, actions: np.ndarray, weights: np.ndarray
    ) -> np.ndarray:
        logits, cache = self.mlp.forward_cache(states)
        p = np.exp(self._log_softmax(logits))
        idx = np.asarray(actions, dtype=np.int64).reshape(-1)
        dlogits = -p * weights[:, None]
        dlogits[np.arange(len(idx)), idx] += weights
        return self.mlp.backward(cache, dlogits)

    def score(self, obs: np.ndarray, action: int) -> np.ndarray:
        return self.log_prob_grad_weighted(
            np.asarray(obs, dtype=np.float64)[None, :],
            np.array([action]),
            np.ones(1),
        )

    def entropy_mean_and_grad(self, states: np.ndarray) -> tuple[float, np.ndarray]:
        logits, cache = self.mlp.forward_cache(states)
        log_p = self._log_softmax(logits)
        p = np.exp(log_p)
        ent = -np.sum(p * log_p, axis=1)
        # dH/dlogit_j = -p_j (log p_j + H)
        dlogits = -p * (log_p + ent[:, None]) / len(ent)
        return float(ent.mean()), self.mlp.backward(cache, dlogits)


Policy = Union[GaussianPolicy, CategoricalPolicy]


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_index: int
    passed: bool


def grad_check(
    f: Callable[[np.ndarray], float],
    analytic_grad: Union[np.ndarray, Callable[[np.ndarray], np.ndarray]],
    params: np.ndarray,
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare an analytic gradient against central finite differences.

    Relative error per coordinate uses max(|analytic|, |numeric|, 1e-8)
    as the denominator.
    """
    params = np.asarray(params, dtype=np.float64)
    grad = analytic_grad(params) if callable(analytic_grad) else np.asarray(analytic_grad)
    if grad.shape != params.shape:
        raise ContractViolation("analytic gradient shape mismatch")
    max_err, worst = 0.0, -1
    for i in range(params.shape[0]):
        bumped = params.copy()
        bumped[i] = params[i] + h
        f_plus = f(bumped)
        bumped[i] = params[i] - h
        f_minus = f(bumped)
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NumericError(f"non-finite evaluation at coordinate {i}")
        numeric = (f_plus - f_minus) / (2.0 * h)
        denom = max(abs(grad[i]), abs(numeric), 1e-8)
        err = abs(grad[i] - numeric) / denom
        if err > max_err:
            max_err, worst = err, i
    return GradCheckReport(max_err, worst, max_err < tol)


# ---------------------------------------------------------------------------
# Checkpoint format: header line, kind, layer widths, one float per line in
# flat parameter order. Floats are written with repr(), which round-trips
# float64 values exactly (17 significant digits suffice).


def save_checkpoint(path: str, kind: str, widths: Sequence[int], params: np.ndarray) -> None:
    lines = [
        CHECKPOINT_HEADER,
        f"kind: {kind}",
        "layer_widths: " + " ".join(str(w) for w in widths),
    ]
    lines.extend(repr(float(v)) for v in np.asarray(params, dtype=np.float64))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path: str) -> tuple[str, tuple[int, ...], np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise ConfigurationError(f"{path}: not a {CHECKPOINT_HEADER} file")
    if not lines[1].startswith("kind: ") or not lines[2].startswith("layer_widths: "):
        raise ConfigurationError(f"{path}: malformed checkpoint header")
    kind = lines[1][len("kind: ") :].strip()
    widths = tuple(int(w) for w in lines[2][len("layer_widths: ") :].split())
    values = np.array([float(v) for v in lines[3:] if v.strip()], dtype=np.float64)
    return kind, widths, values


def save_policy(path: str, policy: Policy) -> None:
    if isinstance(policy, GaussianPolicy):
        save_checkpoint(path, "gaussian-policy", policy.widths, policy.params)
    else:
        save_checkpoint(path, "categorical-policy", policy.widths, policy.params)


def load_policy(path: str) -> Policy:
    kind, widths, values = load_checkpoint(path)
    hidden = widths[1:-1]
    if kind == "gaussian-policy":
        policy: Policy = GaussianPolicy(widths[0], widths[-1], hidden)
    elif kind == "categorical-policy":
        policy = CategoricalPolicy(widths[0], widths[-1], hidden)
    else:
        raise ConfigurationError(f"{path}: unknown checkpoint kind {kind!r}")
    if values.shape != policy.params.shape:
        raise ConfigurationError(
            f"{path}: expected {policy.params.shape[0]} parameters, found {values.shape[0]}"
        )
    policy.set_params(values)
    return policy


def save_mlp(path: str, net: Mlp) -> None:
    save_checkpoint(path, "mlp", net.widths, net.params)


def load_mlp(path: str) -> Mlp:
    kind, widths, values = load_checkpoint(path)
    if kind != "mlp":
        raise ConfigurationError(f"{path}: expected an mlp checkpoint, got {kind!r}")
    net = Mlp(widths)
    net.params[...] = values
    return net
