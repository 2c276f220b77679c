"""Group-relative (GRPO) and similarity-weighted (SPO) advantage estimators.

Both estimators subtract a baseline from each trajectory's reward. GRPO uses
the group mean. SPO gives trajectory ``i`` the baseline
``sum_j w_ij R_j`` where ``w_ij`` is the cosine similarity of the two
trajectory embeddings, normalised over the row.
"""
from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from . import kernels
from .text import tokenize
from .trajectory import RolloutGroup, Trajectory, render_trajectory_text

log = logging.getLogger(__name__)

GRPO = "grpo"
SPO = "spo"


class EmbedderError(RuntimeError):
    """The embedding backend failed for a trajectory."""


# ---------------------------------------------------------------------------
# Embedders


class Embedder(Protocol):
    name: str
    dimension: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class HashingEmbedder:
    """L2-normalised term-frequency vector with stable feature hashing.

    Stop-words are dropped; each remaining token is hashed with blake2b to
    one of ``dimension`` buckets.
    """

    def __init__(self, dimension: int = 1024):
        self.dimension = dimension
        self.name = f"hashing-tf-{dimension}"
        self._cache: dict[str, int] = {}

    def _bucket(self, tok: str) -> int:
        b = self._cache.get(tok)
        if b is None:
            h = hashlib.blake2b(tok.encode("utf-8"), digest_size=8).digest()
            b = int.from_bytes(h, "little") % self.dimension
            self._cache[tok] = b
        return b

    def embed_one(self, text: str) -> np.ndarray:
        v = np.zeros(self.dimension)
        for tok in tokenize(text):
            v[self._bucket(tok)] += 1.0
        n = np.linalg.norm(v)
        return v / n if n > 0 else v

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        return np.array([self.embed_one(t) for t in texts]).reshape(len(texts), self.dimension)


class ConstantEmbedder:
    """Maps every text to the same vector; SPO then reduces to GRPO."""

    def __init__(self, dimension: int = 4):
        self.dimension = dimension
        self.name = "constant"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        return np.ones((len(texts), self.dimension)) / math.sqrt(self.dimension)


class FunctionEmbedder:
    """Wrap a ``text -> vector`` callable."""

    def __init__(self, fn: Callable[[str], Sequence[float]], dimension: int, name: str = "function"):
        self.fn = fn
        self.dimension = dimension
        self.name = name

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.array([np.asarray(self.fn(t), dtype=np.float64) for t in texts])
        return out.reshape(len(texts), self.dimension)


class HttpEmbedder:
    """Client for an external embedding service.

    Wire contract: ``GET {url}/info`` returns ``{"name", "dimension"}``;
    ``POST {url}/embed`` with ``{"texts": [...]}`` returns
    ``{"embeddings": [[float, ...], ...]}`` in request order.
    """

    def __init__(
        self,
        url: str,
        timeout: float = 30.0,
        retries: int = 3,
        batch_size: int = 16,
        max_concurrency: int = 4,
        session=None,
    ):
        import requests

        self.url = url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.batch_size = batch_size
        self.max_concurrency = max_concurrency
        self.session = session or requests.Session()
        info = self._request("GET", "/info")
        self.name = str(info.get("name", "remote"))
        self.dimension = int(info["dimension"])

    def _request(self, method, path, payload=None):
        import requests

        last = None
        for attempt in range(self.retries):
            try:
                resp = self.session.request(method, self.url + path, json=payload, timeout=self.timeout)
                resp.raise_for_status()
                return resp.json()
            except (requests.RequestException, ValueError) as exc:
                last = exc
                log.warning("embedder %s%s attempt %d failed: %s", self.url, path, attempt + 1, exc)
        raise EmbedderError(f"embedding service {self.url} unreachable: {last}")

    def _embed_batch(self, texts):
        data = self._request("POST", "/embed", {"texts": list(texts)})
        vecs = np.asarray(data["embeddings"], dtype=np.float64)
        if vecs.shape != (len(texts), self.dimension):
            raise EmbedderError(
                f"embedding service returned shape {vecs.shape}, expected {(len(texts), self.dimension)}"
            )
        return vecs

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        texts = list(texts)
        batches = [texts[i : i + self.batch_size] for i in range(0, len(texts), self.batch_size)]
        if not batches:
            return np.zeros((0, self.dimension))
        with ThreadPoolExecutor(max_workers=self.max_concurrency) as pool:
            parts = list(pool.map(self._embed_batch, batches))  # map preserves order
        return np.vstack(parts)


# ---------------------------------------------------------------------------
# Matrices and estimators


@dataclass(frozen=True)
class SimilarityMatrix:
    values: np.ndarray
    source: str = ""


@dataclass(frozen=True)
class WeightMatrix:
    values: np.ndarray


@dataclass(frozen=True)
class AdvantageVector:
    values: np.ndarray
    estimator: str
    baseline: Optional[np.ndarray] = None


@dataclass(frozen=True)
class AdvantageConfig:
    clamp_negative: bool = True
    exclude_self: bool = False
    normalize_std: bool = False
    std_eps: float = 1e-6
    include_feedback: bool = False


def embed_trajectory(embedder, traj: Trajectory, include_feedback: bool = False) -> Trajectory:
    """Return a copy of ``traj`` carrying its embedding."""
    return embed_trajectories(embedder, [traj], include_feedback)[0]


def embed_trajectories(embedder, trajs: Sequence[Trajectory], include_feedback: bool = False):
    texts = [render_trajectory_text(t, include_feedback) for t in trajs]
    try:
        vecs = np.asarray(embedder.embed(texts), dtype=np.float64)
    except EmbedderError as exc:
        ids = ", ".join(t.id for t in trajs)
        raise EmbedderError(f"{exc} (trajectories: {ids})") from exc
    if vecs.shape != (len(trajs), embedder.dimension):
        raise EmbedderError(f"embedder {embedder.name} returned shape {vecs.shape}")
    return [t.with_embedding(v) for t, v in zip(trajs, vecs)]


def _check_embeddings(embeddings) -> np.ndarray:
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] == 0:
        raise ValueError("embeddings must be a non-empty [N, D] array")
    if not np.all(np.isfinite(emb)):
        raise ValueError("embeddings must be finite")
    zero = np.flatnonzero(~np.any(emb != 0.0, axis=1))
    if zero.size:
        raise ValueError(f"cosine similarity undefined for all-zero embeddings at rows {zero.tolist()}")
    return emb


def similarity_matrix(embeddings, clamp: bool = True, source: str = "") -> SimilarityMatrix:
    """Pairwise cosine similarity; negatives clamped to 0 unless ``clamp`` is off."""
    return SimilarityMatrix(kernels.cosine_similarity(_check_embeddings(embeddings), clamp), source)


def spo_weights(sim, exclude_self: bool = False) -> WeightMatrix:
    """Row-normalise a similarity matrix into baseline weights.

    With ``exclude_self`` the diagonal is zeroed first (leave-one-out); a row
    whose remaining similarities are all zero falls back to a uniform average
    over the other trajectories.
    """
    s = np.array(sim.values if isinstance(sim, SimilarityMatrix) else sim, dtype=np.float64)
    n = s.shape[0]
    if exclude_self:
        if n < 2:
            raise ValueError("leave-one-out weights need at least two trajectories")
        np.fill_diagonal(s, 0.0)
        dead = s.sum(axis=1) <= 0.0
        if np.any(dead):
            s[dead] = 1.0
            s[dead, np.flatnonzero(dead)] = 0.0
    if np.any(s < 0):
        log.warning("negative similarities present; weights may be negative")
    sums = s.sum(axis=1)
    if np.any(sums == 0.0) or not np.all(np.isfinite(sums)):
        raise ValueError("similarity row sums must be non-zero")
    return WeightMatrix(kernels.row_normalize(s))


def _check_rewards(group) -> np.ndarray:
    r = group.rewards if isinstance(group, RolloutGroup) else np.asarray(group, dtype=np.float64)
    if r.size == 0:
        raise ValueError("empty group")
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    return r


def _finish(r, baseline, estimator, cfg: AdvantageConfig) -> AdvantageVector:
    adv = r - baseline
    if cfg.normalize_std and r.size > 1:
        adv = adv / (r.std(ddof=1) + cfg.std_eps)
    return AdvantageVector(adv, estimator, baseline)


def grpo_baseline(rewards) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    # centred on r[0] so a constant group gives exactly zero advantages
    return np.full(r.shape, r[0] + (r - r[0]).mean())


def grpo_advantage(group, config: AdvantageConfig = AdvantageConfig()) -> AdvantageVector:
    """``A_i = R_i - mean(R)``. Accepts a RolloutGroup or a reward vector."""
    r = _check_rewards(group)
    return _finish(r, grpo_baseline(r), GRPO, config)


def spo_baseline(embeddings, rewards, config: AdvantageConfig = AdvantageConfig()) -> np.ndarray:
    """Similarity-weighted baseline ``sum_j w_ij R_j`` for every trajectory."""
    r = np.asarray(rewards, dtype=np.float64)
    if config.exclude_self or not config.clamp_negative:
        w = spo_weights(similarity_matrix(embeddings, config.clamp_negative), config.exclude_self)
        return kernels.weighted_baseline(w.values, r)
    emb = _check_embeddings(embeddings)
    if emb.shape[0] != r.size:
        raise ValueError(f"{emb.shape[0]} embeddings for {r.size} rewards")
    return kernels.spo_baseline(emb, r, True)


def spo_advantage(
    group: RolloutGroup,
    embedder=None,
    config: AdvantageConfig = AdvantageConfig(),
    embeddings=None,
) -> AdvantageVector:
    """``A_i = R_i - sum_j w_ij R_j`` with cosine-similarity weights.

    Embeddings are taken from ``embeddings`` if given, else from the
    trajectories' stored embeddings, else computed with ``embedder``.
    """
    r = _check_rewards(group)
    if embeddings is None:
        trajs = group.trajectories
        if all(t.embedding is not None for t in trajs):
            embeddings = np.array([t.embedding for t in trajs])
        else:
            if embedder is None:
                raise ValueError("spo_advantage needs an embedder or precomputed embeddings")
            trajs = embed_trajectories(embedder, trajs, config.include_feedback)
            embeddings = np.array([t.embedding for t in trajs])
    baseline = spo_baseline(embeddings, r, config)
    return _finish(r, baseline, SPO, config)


def compute_advantage(estimator: str, group, embedder=None, config=AdvantageConfig(), embeddings=None):
    if estimator == GRPO:
        return grpo_advantage(group, config)
    if estimator == SPO:
        return spo_advantage(group, embedder, config, embeddings)
    raise ValueError(f"unknown estimator {estimator!r}")


@dataclass(frozen=True)
class BaselineQuality:
    mse_grpo: float
    mse_spo: float


def baseline_quality(
    group, oracle_values, embedder=None, config: AdvantageConfig = AdvantageConfig(), embeddings=None
) -> BaselineQuality:
    """Mean squared error of each estimator's baseline against oracle values.

    ``oracle_values[i]`` is the exact expected reward of the context that
    trajectory ``i`` reached.
    """
    r = _check_rewards(group)
    oracle = np.asarray(oracle_values, dtype=np.float64)
    if oracle.shape != r.shape:
        raise ValueError(f"oracle has {oracle.size} values for a group of {r.size}")
    spo = spo_advantage(group, embedder, config, embeddings)
    b_grpo = grpo_baseline(r)
    return BaselineQuality(
        mse_grpo=float(np.mean((b_grpo - oracle) ** 2)),
        mse_spo=float(np.mean((spo.baseline - oracle) ** 2)),
    )
