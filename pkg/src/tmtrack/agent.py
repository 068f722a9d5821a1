"""Actor-critic agent deciding whether to accept a predicted result.

Actor and critic are separate two-hidden-layer tanh MLPs over the state
vector. The actor ends in two logits (softmax over UPDATE/KEEP), the critic
in a single state value. Both are trained by per-transition updates driven
by the TD error.
"""
from __future__ import annotations

import json
import math
import struct
from typing import Dict, Optional

import numpy as np

from .template import Action

LAYERS = ("W1", "b1", "W2", "b2", "W3", "b3")
CHECKPOINT_MAGIC = b"TMAGENT\n"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _init_mlp(rng: np.random.Generator, sizes) -> Dict[str, np.ndarray]:
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]), 1):
        bound = 1.0 / math.sqrt(fan_in)
        params[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        params[f"b{i}"] = rng.uniform(-bound, bound, size=fan_out)
    return params


class AgentNet:
    """Parameters and learning-rate state of the actor and critic.

    ``feature_dim`` is the per-view feature length D; the nets consume
    states of length ``2 * D``.
    """

    def __init__(self, feature_dim: int = 262, hidden: int = 128, actor_lr: float = 1e-4,
                 critic_lr: float = 5e-4, lr_decay: float = 0.99, decay_every: int = 200,
                 seed: Optional[int] = 0):
        self.feature_dim = int(feature_dim)
        self.hidden = int(hidden)
        self.actor_lr = float(actor_lr)
        self.critic_lr = float(critic_lr)
        self.lr_decay = float(lr_decay)
        self.decay_every = int(decay_every)
        self.iteration = 0
        rng = np.random.default_rng(seed)
        self.actor = _init_mlp(rng, (self.input_dim, self.hidden, self.hidden, 2))
        self.critic = _init_mlp(rng, (self.input_dim, self.hidden, self.hidden, 1))

    @property
    def input_dim(self) -> int:
        return 2 * self.feature_dim

    def copy(self) -> "AgentNet":
        other = object.__new__(AgentNet)
        other.__dict__.update(self.__dict__)
        other.actor = {k: v.copy() for k, v in self.actor.items()}
        other.critic = {k: v.copy() for k, v in self.critic.items()}
        return other

    def zero_(self) -> "AgentNet":
        for params in (self.actor, self.critic):
            for v in params.values():
                v[...] = 0.0
        return self

    def check_state(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        if s.shape != (self.input_dim,):
            raise ValueError(f"state has shape {s.shape}, agent expects ({self.input_dim},)")
        return s


def _mlp_forward(params, s):
    z1 = params["W1"] @ s + params["b1"]
    h1 = np.tanh(z1)
    z2 = params["W2"] @ h1 + params["b2"]
    h2 = np.tanh(z2)
    return params["W3"] @ h2 + params["b3"], (s, z1, h1, z2, h2)


def _dtanh(z):
    # sech^2 from the pre-activation; 1 - tanh^2 cancels badly once |z| is large
    with np.errstate(over="ignore"):
        return 1.0 / np.cosh(z) ** 2


def _mlp_backward(params, cache, dout) -> Dict[str, np.ndarray]:
    s, z1, h1, z2, h2 = cache
    grads = {"W3": np.outer(dout, h2), "b3": dout.copy()}
    dz2 = (params["W3"].T @ dout) * _dtanh(z2)
    grads["W2"] = np.outer(dz2, h1)
    grads["b2"] = dz2
    dz1 = (params["W2"].T @ dz2) * _dtanh(z1)
    grads["W1"] = np.outer(dz1, s)
    grads["b1"] = dz1
    return grads


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max())
    return z / z.sum()


def actor_forward(net: AgentNet, s) -> np.ndarray:
    """``(pi(UPDATE|s), pi(KEEP|s))``."""
    logits, _ = _mlp_forward(net.actor, net.check_state(s))
    return softmax(logits)


def critic_forward(net: AgentNet, s) -> float:
    value, _ = _mlp_forward(net.critic, net.check_state(s))
    return float(value[0])


def critic_gradient(net: AgentNet, s) -> Dict[str, np.ndarray]:
    """Gradient of V(s) with respect to every critic parameter."""
    value, cache = _mlp_forward(net.critic, net.check_state(s))
    return _mlp_backward(net.critic, cache, np.ones(1))


def log_policy_gradient(net: AgentNet, s, action) -> Dict[str, np.ndarray]:
    """Gradient of log pi(action|s) with respect to every actor parameter."""
    logits, cache = _mlp_forward(net.actor, net.check_state(s))
    dlogits = -softmax(logits)
    dlogits[int(action)] += 1.0
    return _mlp_backward(net.actor, cache, dlogits)


def reward(j: float) -> float:
    """Cubic reward on region similarity; ``J <= 0.1`` is a flat penalty."""
    if not 0.0 <= j <= 1.0:
        raise ValueError(f"region similarity {j} outside [0, 1]")
    if j > 0.1:
        return 100.0 * j ** 3 + 10.0
    return -10.0


def td_error(r: float, v_next: float, v: float, gamma: float, terminal: bool = False) -> float:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"discount {gamma} outside [0, 1]")
    if terminal:
        v_next = 0.0
    return r + gamma * v_next - v


def _apply(params, grads, step: float):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    for name, g in grads.items():
        params[name] += step * g
    for name, v in params.items():
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"parameter {name} became non-finite")


def update_critic(net: AgentNet, s, delta: float) -> AgentNet:
    """``w <- w + l_c * delta * grad V(s)``, in place."""
    if not math.isfinite(delta):
        raise FloatingPointError(f"non-finite TD error {delta}")
    if delta:
        _apply(net.critic, critic_gradient(net, s), net.critic_lr * delta)
    return net


def update_actor(net: AgentNet, s, action, delta: float) -> AgentNet:
    """``theta <- theta + l_a * delta * grad log pi(action|s)``, in place."""
    if not math.isfinite(delta):
        raise FloatingPointError(f"non-finite TD error {delta}")
    if delta:
        _apply(net.actor, log_policy_gradient(net, s, action), net.actor_lr * delta)
    return net


def decay_learning_rates(net: AgentNet) -> AgentNet:
    """Count one iteration; every ``decay_every`` iterations both rates shrink by ``lr_decay``."""
    net.iteration += 1
    if net.iteration % net.decay_every == 0:
        net.actor_lr *= net.lr_decay
        net.critic_lr *= net.lr_decay
    return net


def sample_action(probs, mode: str = "greedy", rng: Optional[np.random.Generator] = None) -> Action:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (2,) or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError(f"not a distribution over two actions: {probs}")
    if mode == "greedy":
        return Action.UPDATE if probs[0] >= probs[1] else Action.KEEP
    if mode == "stochastic":
        if rng is None:
            raise ValueError("stochastic sampling needs a seeded generator")
        return Action.UPDATE if rng.random() < probs[0] else Action.KEEP
    raise ValueError(f"unknown sampling mode {mode!r}")


def _arrays(net: AgentNet):
    for prefix, params in (("actor", net.actor), ("critic", net.critic)):
        for name in LAYERS:
            yield f"{prefix}.{name}", params[name]


def dumps_checkpoint(net: AgentNet) -> bytes:
    header = {
        "version": CHECKPOINT_VERSION,
        "feature_dim": net.feature_dim,
        "hidden": net.hidden,
        "actor_lr": net.actor_lr.hex(),
        "critic_lr": net.critic_lr.hex(),
        "lr_decay": net.lr_decay.hex(),
        "decay_every": net.decay_every,
        "iteration": net.iteration,
        "arrays": [[name, list(a.shape)] for name, a in _arrays(net)],
    }
    raw = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in _arrays(net))
    return CHECKPOINT_MAGIC + struct.pack("<I", len(raw)) + raw + body


def loads_checkpoint(data: bytes, feature_dim: Optional[int] = None) -> AgentNet:
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("not an agent checkpoint (bad magic)")
    offset = len(CHECKPOINT_MAGIC)
    if len(data) < offset + 4:
        raise CheckpointError("checkpoint truncated in header")
    (size,) = struct.unpack_from("<I", data, offset)
    offset += 4
    try:
        header = json.loads(data[offset:offset + size].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint header unreadable: {exc}") from None
    offset += size
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {header.get('version')} != {CHECKPOINT_VERSION}")
    if feature_dim is not None and header["feature_dim"] != feature_dim:
        raise CheckpointError(
            f"feature dimension mismatch: expected D={feature_dim}, found D={header['feature_dim']}")
    net = AgentNet(header["feature_dim"], header["hidden"], seed=None)
    net.actor_lr = float.fromhex(header["actor_lr"])
    net.critic_lr = float.fromhex(header["critic_lr"])
    net.lr_decay = float.fromhex(header["lr_decay"])
    net.decay_every = header["decay_every"]
    net.iteration = header["iteration"]
    targets = dict(_arrays(net))
    for name, shape in header["arrays"]:
        if name not in targets or list(targets[name].shape) != shape:
            raise CheckpointError(f"unexpected array {name} with shape {shape}")
        n = int(np.prod(shape)) * 8
        if len(data) < offset + n:
            raise CheckpointError(f"checkpoint truncated while reading {name}")
        targets[name][...] = np.frombuffer(data, dtype="<f8", count=n // 8, offset=offset).reshape(shape)
        offset += n
    if offset != len(data):
        raise CheckpointError(f"{len(data) - offset} trailing bytes after checkpoint data")
    return net


def save_checkpoint(net: AgentNet, path: str):
    with open(path, "wb") as fh:
        fh.write(dumps_checkpoint(net))


def load_checkpoint(path: str, feature_dim: Optional[int] = None) -> AgentNet:
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read(), feature_dim)
