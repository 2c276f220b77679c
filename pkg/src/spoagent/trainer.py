"""GRPO / SPO policy-gradient training of the linear-softmax policy.

Each update collects ``batch_size`` groups of ``group_size`` trajectories,
computes per-trajectory advantages with the configured estimator, and takes
one optimizer step on the clipped surrogate with a KL penalty toward the
initial policy. A decision step plays the role of a token: every step of a
trajectory shares the trajectory's advantage.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import os
import re
from importlib import resources
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import yaml

from . import policy as pol
from .advantage import (
    GRPO,
    SPO,
    AdvantageConfig,
    ConstantEmbedder,
    HashingEmbedder,
    HttpEmbedder,
    compute_advantage,
    embed_trajectories,
)
from .envs import Environment
from .policy import PolicyParams
from .trajectory import RolloutGroup, Trajectory, Turn, broadcast_reward

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """A training step failed; ``reports`` holds the updates completed so far."""

    def __init__(self, msg, reports=None):
        super().__init__(msg)
        self.reports = list(reports or [])


@dataclass
class TrainConfig:
    group_size: int = 4
    rollout_length: int = 4
    batch_size: int = 4
    clip_epsilon: float = 0.2
    kl_beta: float = 0.005
    learning_rate: float = 0.01
    temperature: float = 0.8
    max_updates: int = 200
    estimator: str = SPO
    seed: int = 0
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    ppo_epochs: int = 1
    kl_estimator: str = "exact"
    kl_placement: str = "outside"
    clamp_negative: bool = True
    exclude_self: bool = False
    normalize_std: bool = False
    include_feedback: bool = False
    embedder: str = "hashing"
    top_k: int = 10

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if self.kl_beta < 0:
            raise ValueError("kl_beta must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        for name in ("group_size", "rollout_length", "batch_size", "ppo_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.max_updates < 0:
            raise ValueError("max_updates must be non-negative")
        if self.estimator not in (GRPO, SPO):
            raise ValueError(f"estimator must be {GRPO!r} or {SPO!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.kl_estimator not in ("exact", "k3"):
            raise ValueError("kl_estimator must be 'exact' or 'k3'")
        if self.kl_placement not in ("outside", "inside"):
            raise ValueError("kl_placement must be 'outside' or 'inside'")

    def advantage_config(self) -> AdvantageConfig:
        return AdvantageConfig(
            clamp_negative=self.clamp_negative,
            exclude_self=self.exclude_self,
            normalize_std=self.normalize_std,
            include_feedback=self.include_feedback,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)
# Large-model fine-tuning hyperparameters; the desk defaults above use a larger

# The appendix hyperparameters; the desk defaults above use a larger
# learning rate because the policy has ~10^2 parameters.
PRESETS = {
    "desk": {},
    "paper": {
        "rollout_length": 4,
        "batch_size": 4,
        "group_size": 4,
        "temperature": 0.8,
        "learning_rate": 5e-7,
        "kl_beta": 0.005,
        "top_k": 10,
    },
}


def read_config_file(path) -> tuple[dict, dict]:
    """Split a YAML run config into trainer keys and the ``env`` section.

    ``path`` may also name a bundled config such as ``two_cluster``.
    """
    if not os.path.exists(path) and re.fullmatch(r"[a-z_]+", str(path)):
        bundled = resources.files("spoagent") / "configs" / f"{path}.yaml"
        if bundled.is_file():
            path = bundled
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping")
    env_section = data.pop("env", None) or {}
    if not isinstance(env_section, dict):
        raise ValueError(f"{path}: 'env' must be a mapping")
    return data, env_section


def load_config(path=None, preset: Optional[str] = None, **overrides) -> tuple[TrainConfig, dict]:
    """Config from preset, then YAML file, then non-None keyword overrides.

    Returns the trainer config and the environment section of the file.
    """
    d: dict = {}
    if preset:
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        d.update(PRESETS[preset])
    env_section: dict = {}
    if path is not None:
        file_cfg, env_section = read_config_file(path)
        d.update(file_cfg)
    d.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(d), env_section


def make_embedder(spec: str, env: Optional[Environment] = None):
    if spec == "hashing":
        return HashingEmbedder()
    if spec == "constant":
        return ConstantEmbedder()
    if spec == "env":
        return env.default_embedder() if env is not None else HashingEmbedder()
    if spec.startswith("http://") or spec.startswith("https://"):
        return HttpEmbedder(spec)
    raise ValueError(f"unknown embedder {spec!r}")


# ---------------------------------------------------------------------------
# Rollouts


def collect_group(
    params: PolicyParams,
    env: Environment,
    prompt_id: str,
    config: TrainConfig,
    rng: np.random.Generator,
    tag: str = "",
) -> RolloutGroup:
    """Sample ``group_size`` trajectories from one prompt."""
    trajs = []
    cap = config.rollout_length
    for g in range(config.group_size):
        state = env.reset(prompt_id)
        turns = []
        done = False
        states = [state]
        for t in range(cap):
            x = env.features(state, t, cap)
            action = pol.sample_action(params, x, rng)
            try:
                nxt, done = env.step(state, action, rng)
            except Exception as exc:
                raise TrainingError(f"environment step failed on prompt {prompt_id}: {exc}") from exc
            turns.append(
                Turn(
                    state_text=env.state_text(state),
                    action_tokens=(params.action_index(action),),
                    action_text=env.action_text(state, action, nxt),
                    feedback_text=env.feedback_text(nxt),
                    features=tuple(x),
                )
            )
            state = nxt
            states.append(state)
            if done:
                break
        traj = Trajectory(
            id=f"{tag}{prompt_id}/{g}",
            prompt_id=prompt_id,
            turns=tuple(turns),
            finished=done,
            turn_cap=cap,
            meta={"states": states},
        )
        trajs.append(broadcast_reward(traj, env.reward(state)))
    return RolloutGroup(prompt_id, tuple(trajs), config.group_size)


# ---------------------------------------------------------------------------
# Loss


@dataclass
class LossResult:
    loss: float
    grad: np.ndarray
    surrogate: float
    kl: float
    clip_fraction: float


def _steps(trajs: Sequence[Trajectory]):
    for i, tr in enumerate(trajs):
        for turn in tr.turns:
            if turn.features is None:
                raise ValueError(f"trajectory {tr.id} has turns without features")
            yield i, np.asarray(turn.features), turn.action_tokens[0]


def surrogate_loss(
    trajectories: Sequence[Trajectory],
    advantages,
    params: PolicyParams,
    old_params: PolicyParams,
    reference: PolicyParams,
    config: TrainConfig,
) -> LossResult:
    """Negative clipped surrogate plus ``kl_beta`` times the mean KL.

    ``loss = -(1/M) sum_i (1/|o_i|) sum_t min(r A_i, clip(r, 1-eps, 1+eps) A_i) + beta * KL``
    where ``M`` is the number of trajectories and ``r`` the probability
    ratio against ``old_params``. With ``kl_placement="outside"`` KL is the
    mean over all decision steps; with ``"inside"`` it is averaged per
    trajectory first.
    """
    trajs = list(trajectories)
    adv = np.asarray(advantages, dtype=np.float64)
    if adv.shape != (len(trajs),):
        raise ValueError(f"{adv.size} advantages for {len(trajs)} trajectories")
    eps = config.clip_epsilon
    beta = config.kl_beta
    m = len(trajs)
    grad = np.zeros_like(params.weights)
    surr = 0.0
    kl_out = 0.0
    kl_in = 0.0
    clipped = 0
    n_steps = sum(len(t.turns) for t in trajs)
    kl_grad_out = np.zeros_like(grad)
    kl_grad_in = np.zeros_like(grad)
    for i, x, a in _steps(trajs):
        length = len(trajs[i].turns)
        lp = pol.log_probs(params, x)
        lp_old = pol.log_probs(old_params, x)
        if not np.isfinite(lp_old[a]):
            raise ValueError(f"old policy gives zero probability to a sampled action in {trajs[i].id}")
        ratio = math.exp(lp[a] - lp_old[a])
        if not math.isfinite(ratio):
            raise ValueError(
                f"non-finite importance ratio in {trajs[i].id}: log p={lp[a]}, log p_old={lp_old[a]}"
            )
        A = adv[i]
        unclipped = ratio * A
        clipped_val = min(max(ratio, 1.0 - eps), 1.0 + eps) * A
        if clipped_val < unclipped:
            clipped += 1
            surr += clipped_val / length
        else:
            surr += unclipped / length
            grad -= (A * ratio / (m * length)) * pol.grad_log_prob(params, x, a)
        if config.kl_estimator == "exact":
            k = pol.kl_divergence(params, reference, x)
            gk = pol.grad_kl(params, reference, x)
        else:
            u = pol.log_prob(reference, x, a) - lp[a]
            k = math.exp(u) - u - 1.0
            gk = (1.0 - math.exp(u)) * pol.grad_log_prob(params, x, a)
        kl_out += k / n_steps
        kl_in += k / (m * length)
        kl_grad_out += gk / n_steps
        kl_grad_in += gk / (m * length)
    surr /= m
    kl = kl_out if config.kl_placement == "outside" else kl_in
    grad += beta * (kl_grad_out if config.kl_placement == "outside" else kl_grad_in)
    return LossResult(
        loss=-surr + beta * kl,
        grad=grad,
        surrogate=surr,
        kl=kl,
        clip_fraction=clipped / max(n_steps, 1),
    )


# ---------------------------------------------------------------------------
# Optimizer


class Optimizer:
    """Adam or plain gradient descent over the weight matrix."""

    def __init__(self, config: TrainConfig, shape):
        self.kind = config.optimizer
        self.lr = config.learning_rate
        self.b1 = config.adam_beta1
        self.b2 = config.adam_beta2
        self.eps = config.adam_eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.skipped = 0

    def step(self, params: PolicyParams, grad: np.ndarray) -> PolicyParams:
        return apply_update(params, grad, self.lr, self)


def apply_update(params: PolicyParams, grad, learning_rate: float, optimizer: Optional[Optimizer] = None):
    """One descent step. Without an Adam optimizer this is ``W - lr * g``.

    A non-finite gradient leaves the parameters unchanged and is counted in
    ``optimizer.skipped``.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        log.warning("non-finite gradient; update skipped")
        if optimizer is not None:
            optimizer.skipped += 1
        return params
    if optimizer is None or optimizer.kind == "sgd":
        new = params.weights - learning_rate * grad
    else:
        o = optimizer
        o.t += 1
        o.m = o.b1 * o.m + (1 - o.b1) * grad
        o.v = o.b2 * o.v + (1 - o.b2) * grad * grad
        mhat = o.m / (1 - o.b1**o.t)
        vhat = o.v / (1 - o.b2**o.t)
        new = params.weights - learning_rate * mhat / (np.sqrt(vhat) + o.eps)
    return PolicyParams(new, params.vocab, params.temperature)


# ---------------------------------------------------------------------------
# Loop


@dataclass
class UpdateReport:
    update_index: int
    mean_reward: float
    mean_advantage_abs: float
    surrogate_loss: float
    kl_term: float
    clip_fraction: float
    update_skipped: int = 0

    FIELDS = (
        "update_index",
        "mean_reward",
        "mean_advantage_abs",
        "surrogate_loss",
        "kl_term",
        "clip_fraction",
        "update_skipped",
    )

    def row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


@dataclass
class TrainResult:
    reports: list[UpdateReport]
    params: PolicyParams
    initial: PolicyParams
    groups: list[list[RolloutGroup]] = field(default_factory=list)


BatchHook = Callable[[int, list, list, PolicyParams], None]


def initial_params(env: Environment, config: TrainConfig) -> PolicyParams:
    return PolicyParams.zeros(env.feature_dim, env.vocab, config.temperature)


def batch_advantages(groups, config: TrainConfig, embedder):
    """Advantages per group; SPO groups get embeddings attached first."""
    out = []
    embedded = []
    acfg = config.advantage_config()
    for g in groups:
        if config.estimator == SPO:
            trajs = embed_trajectories(embedder, g.trajectories, acfg.include_feedback)
            g = RolloutGroup(g.prompt_id, tuple(trajs), g.group_size)
        embedded.append(g)
        out.append(compute_advantage(config.estimator, g, embedder, acfg))
    return embedded, out


def train(
    env: Environment,
    config: TrainConfig,
    embedder=None,
    params: Optional[PolicyParams] = None,
    on_batch: Optional[BatchHook] = None,
    keep_groups: bool = False,
) -> TrainResult:
    """Run ``max_updates`` collect / advantage / update iterations.

    ``on_batch(update_index, groups, advantages, rollout_params)`` is called
    after advantages are computed, before the update.
    """
    prompts = env.prompt_ids()
    if not prompts:
        raise ValueError("environment has no prompts")
    if embedder is None and config.estimator == SPO:
        embedder = make_embedder(config.embedder, env)
    rng = np.random.default_rng(config.seed)
    params = params.copy() if params is not None else initial_params(env, config)
    initial = params.copy()
    reference = params.snapshot()
    opt = Optimizer(config, params.weights.shape)
    reports: list[UpdateReport] = []
    kept = []
    for u in range(config.max_updates):
        try:
            batch_prompts = [prompts[i] for i in rng.choice(len(prompts), size=config.batch_size, replace=True)]
            old = params.copy()
            groups = [collect_group(old, env, p, config, rng, tag=f"u{u}/b{k}/") for k, p in enumerate(batch_prompts)]
            groups, advs = batch_advantages(groups, config, embedder)
            if on_batch is not None:
                on_batch(u, groups, advs, old)
            trajs = [t for g in groups for t in g.trajectories]
            adv = np.concatenate([a.values for a in advs])
            res = None
            skipped_before = opt.skipped
            for _ in range(config.ppo_epochs):
                res = surrogate_loss(trajs, adv, params, old, reference, config)
                params = apply_update(params, res.grad, config.learning_rate, opt)
        except Exception as exc:
            raise TrainingError(f"update {u} failed: {exc}", reports) from exc
        rewards = np.array([t.reward for t in trajs])
        reports.append(
            UpdateReport(
                update_index=u,
                mean_reward=float(rewards.mean()),
                mean_advantage_abs=float(np.abs(adv).mean()),
                surrogate_loss=float(res.loss),
                kl_term=float(res.kl),
                clip_fraction=float(res.clip_fraction),
                update_skipped=opt.skipped - skipped_before,
            )
        )
        if keep_groups:
            kept.append(groups)
    return TrainResult(reports, params, initial, kept)


def quartile_means(reports: Sequence[UpdateReport]) -> tuple[float, float]:
    """Mean reward over the first and last quarter of the updates."""
    r = np.array([x.mean_reward for x in reports])
    q = max(len(r) // 4, 1)
    return float(r[:q].mean()), float(r[-q:].mean())
