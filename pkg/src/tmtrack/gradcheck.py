"""Finite-difference verification of the agent's analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import agent as ag

# central differences at h=1e-5 cannot resolve gradients much below this, even in
# extended precision; smaller gradients are compared in absolute terms against it
RELATIVE_FLOOR = 1e-8


@dataclass
class GradcheckReport:
    actor_error: float
    critic_error: float
    checked: int

    def passed(self, tol: float = 1e-4) -> bool:
        return self.actor_error < tol and self.critic_error < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), RELATIVE_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _forward_ext(params, s):
    """Reference forward pass in extended precision, written independently of the agent's."""
    h1 = np.tanh(params["W1"].dot(s) + params["b1"])
    h2 = np.tanh(params["W2"].dot(h1) + params["b2"])
    return params["W3"].dot(h2) + params["b3"]


def _log_pi_ext(params, s, action):
    logits = _forward_ext(params, s)
    shifted = logits - logits.max()
    return shifted[action] - np.log(np.exp(shifted).sum())


def numeric_gradient(f, params, name, index, h=1e-5) -> float:
    """Central difference of ``f()`` in one coordinate of ``params[name]``.

    ``params`` should hold ``np.longdouble`` arrays so that rounding noise
    (about ``eps * |f| / h``) stays far below the gradients being checked.
    """
    array = params[name]
    old = array[index]
    array[index] = old + h
    up = f()
    array[index] = old - h
    down = f()
    array[index] = old
    return float((up - down) / (2 * np.longdouble(h)))


def _coordinates(rng, shape, limit):
    size = int(np.prod(shape))
    flat = np.arange(size) if limit is None or size <= limit else rng.choice(size, limit, replace=False)
    return [np.unravel_index(i, shape) for i in flat]


def random_net(rng: np.random.Generator, feature_dim: int, hidden: int) -> ag.AgentNet:
    """Agent with every parameter drawn uniformly from [-0.5, 0.5]."""
    net = ag.AgentNet(feature_dim, hidden, seed=None)
    for params in (net.actor, net.critic):
        for name in params:
            params[name] = rng.uniform(-0.5, 0.5, size=params[name].shape)
    return net


def random_state(rng: np.random.Generator, net: ag.AgentNet) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=net.input_dim)


def gradient_check(seed: int = 0, pairs: int = 10, feature_dim: int = 262, hidden: int = 128,
                   per_array: int = 64, h: float = 1e-5, corrupt: bool = False) -> GradcheckReport:
    """Compare analytic and central-difference gradients on random nets.

    ``per_array`` bounds the coordinates sampled from each parameter array
    (``None`` checks all of them). ``corrupt`` perturbs the analytic actor
    gradient so callers can confirm the check is able to fail.
    """
    rng = np.random.default_rng(seed)
    worst_actor = worst_critic = 0.0
    checked = 0
    for _ in range(pairs):
        net = random_net(rng, feature_dim, hidden)
        s = random_state(rng, net)
        action = int(rng.integers(2))
        g_actor = ag.log_policy_gradient(net, s, action)
        g_critic = ag.critic_gradient(net, s)
        if corrupt:
            g_actor["b3"] = g_actor["b3"] * 1.01 + 1e-3

        s_ext = s.astype(np.longdouble)
        actor_ext = {k: v.astype(np.longdouble) for k, v in net.actor.items()}
        critic_ext = {k: v.astype(np.longdouble) for k, v in net.critic.items()}

        def log_pi():
            return _log_pi_ext(actor_ext, s_ext, action)

        def value():
            return _forward_ext(critic_ext, s_ext)[0]

        for params, grads, f, slot in ((actor_ext, g_actor, log_pi, 0), (critic_ext, g_critic, value, 1)):
            for name in ag.LAYERS:
                coords = _coordinates(rng, params[name].shape, per_array)
                analytic = np.array([grads[name][c] for c in coords])
                numeric = np.array([numeric_gradient(f, params, name, c, h) for c in coords])
                err = relative_error(analytic, numeric)
                checked += len(coords)
                if slot == 0:
                    worst_actor = max(worst_actor, err)
                else:
                    worst_critic = max(worst_critic, err)
    return GradcheckReport(worst_actor, worst_critic, checked)
