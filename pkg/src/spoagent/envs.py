"""Environments driven by the linear-softmax policy during training.

An environment exposes a fixed action vocabulary, a feature encoding of its
states, a transition function and a terminal reward. ``expected_value``
computes the exact expected final reward from a state under a policy by
enumerating every remaining action sequence; it is the oracle used when
measuring baseline quality.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import doc_env
from .advantage import FunctionEmbedder, HashingEmbedder
from .agent.protocol import Finish, Read, ReadRequest, Search, render_tool_call
from .policy import PolicyParams, action_distribution
from .text import tokenize


class Environment:
    vocab: tuple[str, ...]
    feature_dim: int

    def prompt_ids(self) -> list[str]:
        raise NotImplementedError

    def reset(self, prompt_id: str):
        raise NotImplementedError

    def features(self, state, turn: int, cap: int) -> np.ndarray:
        raise NotImplementedError

    def step(self, state, action: str, rng: np.random.Generator):
        """Return ``(new_state, done)``."""
        raise NotImplementedError

    def reward(self, state) -> float:
        raise NotImplementedError

    def state_text(self, state) -> str:
        raise NotImplementedError

    def action_text(self, before, action: str, after) -> str:
        return action

    def feedback_text(self, after) -> str:
        return ""

    def default_embedder(self):
        return HashingEmbedder()

    def is_deterministic(self) -> bool:
        return True

    def transitions(self, state, action: str):
        """All ``(probability, next_state, done)`` outcomes of an action."""
        nxt, done = self.step(state, action, None)
        return [(1.0, nxt, done)]

    def expected_value(self, state, params: PolicyParams, turn: int, cap: int) -> float:
        """Exact expected final reward from ``state`` at decision index ``turn``."""
        if self._done(state) or turn >= cap:
            return self.reward(state)
        p = action_distribution(params, self.features(state, turn, cap))
        total = 0.0
        for a, pa in zip(params.vocab, p):
            if pa == 0.0:
                continue
            for pt, nxt, done in self.transitions(state, a):
                v = self.reward(nxt) if done else self.expected_value(nxt, params, turn + 1, cap)
                total += pa * pt * v
        return total

    def _done(self, state) -> bool:
        return False


# ---------------------------------------------------------------------------
# Seeker over the synthetic corpus

SEEKER_VOCAB = ("search_query", "search_bridge", "read_top", "read_top3", "finish")


@dataclass(frozen=True)
class SeekerState:
    episode: doc_env.EpisodeState
    last_action: Optional[str] = None
    bridge_searched: bool = False
    answer: Optional[str] = None


def query_keywords(query: str) -> list[str]:
    return tokenize(query)


class SeekerEnv(Environment):
    """The seeker loop as a small discrete decision problem.

    Each vocabulary entry expands to a concrete tool call:

    ``search_query``   search with the question's content words
    ``search_bridge``  search for the bridge entity found in read pages
                       (falls back to the question words if none is known)
    ``read_top``       read the best-ranked unread hit of the last search
    ``read_top3``      read up to three best-ranked unread hits
    ``finish``         stop

    The answer model sees the read-tool output only.
    """

    vocab = SEEKER_VOCAB
    feature_dim = 2 + (len(SEEKER_VOCAB) + 1) + 6

    def __init__(self, corpus: doc_env.DocumentCorpus, top_k: int = 10, questions=None, **env_kwargs):
        self.corpus = corpus
        self.docs = doc_env.DocEnvironment(corpus, top_k=top_k, **env_kwargs)
        qs = corpus.questions if questions is None else questions
        self._qids = [q.qid for q in qs]
        self._answer_cache: dict = {}

    def prompt_ids(self):
        return list(self._qids)

    def reset(self, prompt_id):
        return SeekerState(self.docs.reset(prompt_id))

    def _answer(self, ep: doc_env.EpisodeState) -> str:
        key = (ep.question.qid, tuple(sorted(ep.pages_read)))
        ans = self._answer_cache.get(key)
        if ans is None:
            ans = self._answer_cache[key] = doc_env.answer_from_context(ep.question.query, ep.read_text)
        return ans

    def _bridge(self, ep):
        return doc_env.find_bridge(ep.question.query, ep.read_text)

    def _unread_hits(self, ep):
        return [p for p in ep.last_hits if p not in ep.pages_read]

    def features(self, state: SeekerState, turn: int, cap: int) -> np.ndarray:
        ep = state.episode
        x = np.zeros(self.feature_dim)
        x[0] = 1.0
        x[1] = (cap - turn) / cap
        last = self.vocab.index(state.last_action) if state.last_action else len(self.vocab)
        x[2 + last] = 1.0
        o = 2 + len(self.vocab) + 1
        x[o] = 1.0 if any(isinstance(c, Search) for c, _ in ep.tool_transcript) else 0.0
        x[o + 1] = 1.0 if self._unread_hits(ep) else 0.0
        x[o + 2] = 1.0 if (self._bridge(ep) is not None and not state.bridge_searched) else 0.0
        parsed = doc_env.parse_question(ep.question.query)
        x[o + 3] = 1.0 if parsed is not None and parsed[1] is not None else 0.0
        x[o + 4] = 0.0 if doc_env.declines(self._answer(ep)) else 1.0
        x[o + 5] = min(len(ep.pages_read) / 3.0, 1.0)
        return x

    def tool_call(self, state: SeekerState, action: str):
        ep = state.episode
        q = ep.question.query
        if action == "finish":
            return Finish()
        if action == "search_query":
            return Search(tuple(query_keywords(q)))
        if action == "search_bridge":
            bridge = self._bridge(ep)
            parsed = doc_env.parse_question(q)
            if bridge is None or parsed is None:
                return Search(tuple(query_keywords(q)))
            return Search((parsed[0], bridge))
        unread = self._unread_hits(ep)
        if not unread:
            # nothing new to read: re-read the top hit, or the first page
            unread = list(ep.last_hits[:1]) or [1]
        n = 1 if action == "read_top" else 3
        return Read((ReadRequest(tuple(unread[:n]), q),))

    def step(self, state: SeekerState, action: str, rng=None):
        call = self.tool_call(state, action)
        ep, _, done = self.docs.step(state.episode, call)
        new = SeekerState(
            ep,
            last_action=action,
            bridge_searched=state.bridge_searched or (action == "search_bridge" and self._bridge(state.episode) is not None),
        )
        return new, done

    def _done(self, state):
        return state.episode.done

    def final_answer(self, state: SeekerState) -> str:
        return self._answer(state.episode)

    def reward(self, state: SeekerState) -> float:
        return self.docs.final_reward(state.episode, self._answer(state.episode))

    def state_text(self, state: SeekerState) -> str:
        ep = state.episode
        lines = [f"Query: {ep.question.query}"]
        for call, out in ep.tool_transcript:
            lines.append(render_tool_call(call))
            lines.append(out)
        return "\n".join(lines)

    def action_text(self, before, action, after) -> str:
        return render_tool_call(after.episode.tool_transcript[-1][0])

    def feedback_text(self, after) -> str:
        return after.episode.tool_transcript[-1][1]


# ---------------------------------------------------------------------------
# Two-cluster bandit

CLUSTER_A = "cluster-a"
CLUSTER_B = "cluster-b"


@dataclass(frozen=True)
class ClusterState:
    prompt_id: str
    context: Optional[str] = None
    turn: int = 0
    reward_value: float = 0.0
    done: bool = False


class TwoClusterEnv(Environment):
    """Two-step task whose trajectories split into two latent contexts.

    The first action is uninformative; the environment then moves the
    episode into context A or B with equal probability. In the second step
    ``good`` earns ``base + spread`` and ``bad`` earns ``base - spread``,
    with base 1 in context A and 0 in context B. Under a uniform policy the
    context values are therefore exactly 1 and 0.
    """

    vocab = ("good", "bad")
    feature_dim = 4

    def __init__(self, n_prompts: int = 4, base=(1.0, 0.0), spread: float = 0.5, p_a: float = 0.5):
        self.n_prompts = n_prompts
        self.base = {CLUSTER_A: float(base[0]), CLUSTER_B: float(base[1])}
        self.spread = spread
        self.p_a = p_a

    def prompt_ids(self):
        return [f"task{i}" for i in range(self.n_prompts)]

    def reset(self, prompt_id):
        return ClusterState(prompt_id)

    def features(self, state: ClusterState, turn: int, cap: int) -> np.ndarray:
        return np.array(
            [
                1.0,
                1.0 if state.context == CLUSTER_A else 0.0,
                1.0 if state.context == CLUSTER_B else 0.0,
                1.0 if state.context is None else 0.0,
            ]
        )

    def step(self, state: ClusterState, action: str, rng):
        if state.context is None:
            if rng is None:
                raise ValueError("the context draw needs a random generator")
            ctx = CLUSTER_A if rng.random() < self.p_a else CLUSTER_B
            return replace(state, context=ctx, turn=1), False
        sign = 1.0 if action == "good" else -1.0
        r = self.base[state.context] + sign * self.spread
        return replace(state, turn=state.turn + 1, reward_value=r, done=True), True

    def _done(self, state):
        return state.done

    def is_deterministic(self) -> bool:
        return False

    def transitions(self, state: ClusterState, action: str):
        if state.context is None:
            return [
                (self.p_a, replace(state, context=CLUSTER_A, turn=1), False),
                (1.0 - self.p_a, replace(state, context=CLUSTER_B, turn=1), False),
            ]
        return [(1.0, *self.step(state, action, None))]

    def reward(self, state):
        return state.reward_value

    def state_text(self, state):
        return f"{state.prompt_id} context={state.context or 'unknown'}"

    def action_text(self, before, action, after):
        if before.context is None:
            return f"start {action}"
        return f"{before.context} {action}"

    def feedback_text(self, after):
        return f"entered {after.context}" if not after.done else f"reward {after.reward_value}"

    def context_embedding(self, text: str):
        return [1.0, 0.0] if CLUSTER_A in text else [0.0, 1.0]

    def default_embedder(self):
        return FunctionEmbedder(self.context_embedding, 2, "cluster-onehot")


def make_env(kind: str, corpus=None, **kwargs) -> Environment:
    if kind == "two_cluster":
        return TwoClusterEnv(**kwargs)
    if kind == "seeker":
        if corpus is None:
            corpus = doc_env.generate_corpus(kwargs.pop("corpus_seed", 0))
        return SeekerEnv(corpus, **kwargs)
    raise ValueError(f"unknown environment kind {kind!r}")

