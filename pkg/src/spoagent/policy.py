"""Linear-softmax policy with exact log-probabilities and KL.

The policy maps a state feature vector ``x`` to logits ``W.T @ x`` and
samples from ``softmax(logits / temperature)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np


class InfiniteKLError(ValueError):
    """The reference assigns zero probability where the policy does not."""


@dataclass
class PolicyParams:
    weights: np.ndarray
    vocab: tuple[str, ...]
    temperature: float = 1.0
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64)
        self.vocab = tuple(self.vocab)
        if not self.vocab:
            raise ValueError("vocab must be non-empty")
        if self.weights.ndim != 2 or self.weights.shape[1] != len(self.vocab):
            raise ValueError(
                f"weights shape {self.weights.shape} does not match vocab size {len(self.vocab)}"
            )
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")
        if not (self.temperature > 0 and math.isfinite(self.temperature)):
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        self._index = {a: i for i, a in enumerate(self.vocab)}

    @classmethod
    def zeros(cls, feature_dim: int, vocab: Sequence[str], temperature: float = 1.0):
        return cls(np.zeros((feature_dim, len(vocab))), tuple(vocab), temperature)

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[0]

    def action_index(self, action: Union[str, int]) -> int:
        if isinstance(action, (int, np.integer)):
            if not 0 <= action < len(self.vocab):
                raise ValueError(f"action index {action} out of range")
            return int(action)
        try:
            return self._index[action]
        except KeyError:
            raise ValueError(f"unknown action {action!r}") from None

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.weights.copy(), self.vocab, self.temperature)

    def snapshot(self) -> "ReferenceSnapshot":
        return ReferenceSnapshot(self)

    def to_dict(self) -> dict:
        return {
            "vocab": list(self.vocab),
            "feature_dim": self.feature_dim,
            "temperature": self.temperature,
            "weights": [float(w) for w in self.weights.ravel(order="C")],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyParams":
        vocab = tuple(d["vocab"])
        w = np.asarray(d["weights"], dtype=np.float64).reshape(int(d["feature_dim"]), len(vocab))
        return cls(w, vocab, float(d["temperature"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PolicyParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


class ReferenceSnapshot(PolicyParams):
    """Frozen copy of a policy; its weights array is read-only."""

    def __init__(self, params: PolicyParams):
        super().__init__(params.weights.copy(), params.vocab, params.temperature)
        self.weights.setflags(write=False)

    def copy(self) -> PolicyParams:
        return PolicyParams(self.weights.copy(), self.vocab, self.temperature)


def _features(params: PolicyParams, state_features) -> np.ndarray:
    x = np.asarray(state_features, dtype=np.float64)
    if x.shape != (params.feature_dim,):
        raise ValueError(f"expected {params.feature_dim} features, got shape {x.shape}")
    return x


def logits(params: PolicyParams, state_features) -> np.ndarray:
    return _features(params, state_features) @ params.weights / params.temperature


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def action_distribution(params: PolicyParams, state_features) -> np.ndarray:
    p = np.exp(_log_softmax(logits(params, state_features)))
    return p / p.sum()


def log_probs(params: PolicyParams, state_features) -> np.ndarray:
    return _log_softmax(logits(params, state_features))


def log_prob(params: PolicyParams, state_features, action) -> float:
    return float(log_probs(params, state_features)[params.action_index(action)])


def grad_log_prob(params: PolicyParams, state_features, action) -> np.ndarray:
    """d log pi(action | x) / d W, shape ``[feature_dim, vocab]``."""
    x = _features(params, state_features)
    a = params.action_index(action)
    g = -action_distribution(params, x)
    g[a] += 1.0
    return np.outer(x, g) / params.temperature


def sample_action(params: PolicyParams, state_features, rng_seed) -> str:
    """Draw an action. ``rng_seed`` is an int seed or a numpy Generator."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    p = action_distribution(params, state_features)
    # inverse-CDF on one uniform keeps draws reproducible across numpy versions
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    return params.vocab[min(idx, len(p) - 1)]


def categorical_kl(p: np.ndarray, q: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions have different support sizes")
    mask = p > 0
    if np.any(q[mask] <= 0):
        raise InfiniteKLError("reference has zero probability on a policy-supported action")
    kl = float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))
    return max(kl, 0.0)


def kl_divergence(params: PolicyParams, reference: PolicyParams, state_features) -> float:
    """Exact KL(pi_params || pi_reference) at one state."""
    if tuple(params.vocab) != tuple(reference.vocab):
        raise ValueError("policy and reference vocabularies differ")
    return categorical_kl(
        action_distribution(params, state_features), action_distribution(reference, state_features)
    )


def grad_kl(params: PolicyParams, reference: PolicyParams, state_features) -> np.ndarray:
    """d KL(pi_params || pi_reference) / d W at one state."""
    x = _features(params, state_features)
    lp = log_probs(params, x)
    lq = log_probs(reference, x)
    p = np.exp(lp)
    d = lp - lq
    dz = p * (d - np.dot(p, d))
    return np.outer(x, dz) / params.temperature
