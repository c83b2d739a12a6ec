"""Small numpy encoders with hand-written backward passes, and AdamW."""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass

import numpy as np


class Arch(enum.Enum):
    LINEAR = "linear"
    MLP = "mlp"


@dataclass(frozen=True)
class EncoderSpec:
    arch: Arch
    input_dim: int
    output_dim: int
    hidden_dim: int = 0

    @property
    def parameter_count(self) -> int:
        if self.arch is Arch.LINEAR:
            return self.input_dim * self.output_dim + self.output_dim
        return (self.input_dim * self.hidden_dim + self.hidden_dim
                + self.hidden_dim * self.output_dim + self.output_dim)


class FrozenError(RuntimeError):
    pass


class Encoder:
    """Linear or one-hidden-layer tanh network whose output rows are L2-normalized."""

    def __init__(self, spec: EncoderSpec, rng: np.random.Generator):
        self.spec = spec
        self.params: dict[str, np.ndarray] = {}
        if spec.arch is Arch.LINEAR:
            self.params["w"] = rng.standard_normal((spec.input_dim, spec.output_dim)) / np.sqrt(spec.input_dim)
            self.params["b"] = np.zeros(spec.output_dim)
        else:
            self.params["w1"] = rng.standard_normal((spec.input_dim, spec.hidden_dim)) / np.sqrt(spec.input_dim)
            self.params["b1"] = np.zeros(spec.hidden_dim)
            self.params["w2"] = rng.standard_normal((spec.hidden_dim, spec.output_dim)) / np.sqrt(spec.hidden_dim)
            self.params["b2"] = np.zeros(spec.output_dim)
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        if self.spec.arch is Arch.LINEAR:
            h = None
            z = x @ p["w"] + p["b"]
        else:
            h = np.tanh(x @ p["w1"] + p["b1"])
            z = h @ p["w2"] + p["b2"]
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        unit = z / norms
        self._cache = (x, h, unit, norms)
        return unit

    def backward(self, grad_unit: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients given d(loss)/d(normalized output) of the last forward."""
        x, h, unit, norms = self._cache
        gz = (grad_unit - unit * np.sum(unit * grad_unit, axis=1, keepdims=True)) / norms
        p = self.params
        if self.spec.arch is Arch.LINEAR:
            return {"w": x.T @ gz, "b": gz.sum(axis=0)}
        gh = (gz @ p["w2"].T) * (1.0 - h * h)
        return {"w1": x.T @ gh, "b1": gh.sum(axis=0), "w2": h.T @ gz, "b2": gz.sum(axis=0)}


def params_digest(named: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(named):
        h.update(name.encode())
        h.update(np.ascontiguousarray(named[name], dtype=np.float64).tobytes())
    return h.hexdigest()


class AdamW:
    """Adam with decoupled weight decay; decay applies to names in ``decay``."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01, decay: set | None = None):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decay = set(params) if decay is None else set(decay)
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in sorted(grads):
            g = grads[k]
            p = self.params[k]
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if k in self.decay:
                p -= self.lr * self.weight_decay * p
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
