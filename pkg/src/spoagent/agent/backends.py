"""Completion backends for the planner, seeker, reader and answer roles.

Every backend implements ``complete(messages, role=..., context=None) -> str``.
``context`` carries simulation-only information (the question and the
current episode state) that scripted backends may use; remote backends
ignore it.
"""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .. import doc_env
from ..policy import PolicyParams, action_distribution, sample_action
from .protocol import Finish, Search, render_tool_call

log = logging.getLogger(__name__)

PLANNER = "planner"
SEEKER = "seeker"
ANSWER = "answer"
READER = "reader"


class BackendError(RuntimeError):
    """The backend could not produce a completion."""


def _turn_index(messages) -> int:
    return sum(1 for m in messages if m.get("role") == "assistant")


class ScriptedBackend:
    """Replays canned completions.

    ``script`` maps a role to a string, a list of strings (the n-th
    assistant turn in the history gets entry n, the last entry repeats), or
    a callable ``(messages, context) -> str``. The output depends only on
    the message history, so identical histories give identical completions.
    """

    kind = "scripted"

    def __init__(self, script: dict, name: str = "scripted"):
        self.script = script
        self.name = name

    def complete(self, messages, role: str = SEEKER, context: Optional[dict] = None) -> str:
        if role not in self.script:
            raise BackendError(f"scripted backend {self.name} has no entry for role {role!r}")
        entry = self.script[role]
        if callable(entry):
            return entry(messages, context or {})
        if isinstance(entry, str):
            return entry
        if not entry:
            raise BackendError(f"scripted backend {self.name} has an empty script for {role!r}")
        return entry[min(_turn_index(messages), len(entry) - 1)]

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh), name=os.path.basename(str(path)))


class OracleBackend:
    """Simulation backend that knows each question's evidence pages.

    The seeker reads exactly the evidence pages and finishes; for an
    unanswerable question it searches once and finishes. The answer role
    extracts the planted fact from the gathered text, or declines.
    """

    kind = "scripted"
    name = "oracle"

    def complete(self, messages, role: str = SEEKER, context: Optional[dict] = None) -> str:
        context = context or {}
        if role == PLANNER:
            return "Here is my proposed initial plan.\n(1) Read the pages that hold the evidence.\n(2) Finish."
        if role == ANSWER:
            return doc_env.answer_from_context(context.get("query", ""), context.get("gathered", ""))
        if role == SEEKER:
            q: doc_env.Question = context["question"]
            state: doc_env.EpisodeState = context["state"]
            if state.turns_used == 0:
                call = doc_env.oracle_read_call(q)
                if call is None:
                    from ..envs import query_keywords

                    call = Search(tuple(query_keywords(q.query)) or (q.query,))
                return f"I will gather the evidence.\n{render_tool_call(call)}"
            return render_tool_call(Finish())
        raise BackendError(f"oracle backend has no role {role!r}")


class SimulatedAnswerBackend:
    """Answer role for simulation: extract the fact from gathered text."""

    kind = "scripted"
    name = "sim-answer"

    def complete(self, messages, role: str = ANSWER, context: Optional[dict] = None) -> str:
        context = context or {}
        return doc_env.answer_from_context(context.get("query", ""), context.get("gathered", ""))


class PolicyBackend:
    """Seeker role driven by a trained linear-softmax policy.

    Mirrors the training environment's macro actions and renders the
    resulting tool call as tag text. ``greedy`` picks the most likely
    action; otherwise actions are sampled from ``seed``.
    """

    kind = "scripted"

    def __init__(self, params: PolicyParams, seeker_env, max_turns: int = 4, greedy: bool = True, seed: int = 0):
        self.params = params
        self.env = seeker_env
        self.max_turns = max_turns
        self.greedy = greedy
        self.rng = np.random.default_rng(seed)
        self.name = "policy"
        self._states: dict = {}
        self._lock = threading.Lock()

    def complete(self, messages, role: str = SEEKER, context: Optional[dict] = None) -> str:
        from ..envs import SeekerState

        if role != SEEKER:
            raise BackendError("policy backend only plays the seeker role")
        ep: doc_env.EpisodeState = context["state"]
        with self._lock:
            prev = self._states.get(ep.question.qid)
            if ep.turns_used == 0 or prev is None:
                st = SeekerState(ep)
            else:
                st = SeekerState(ep, prev.last_action, prev.bridge_searched)
            x = self.env.features(st, ep.turns_used, self.max_turns)
            if self.greedy:
                action = self.params.vocab[int(np.argmax(action_distribution(self.params, x)))]
            else:
                action = sample_action(self.params, x, self.rng)
            call = self.env.tool_call(st, action)
            bridge = action == "search_bridge" and doc_env.find_bridge(ep.question.query, ep.read_text) is not None
            self._states[ep.question.qid] = SeekerState(ep, action, st.bridge_searched or bridge)
        return render_tool_call(call)


class RemoteBackend:
    """OpenAI-compatible chat-completion client.

    Retries with exponential backoff; a class-wide semaphore bounds the
    number of requests in flight.
    """

    kind = "remote"
    _semaphores: dict = {}
    _sem_lock = threading.Lock()

    def __init__(
        self,
        url: Optional[str] = None,
        model: str = "default",
        temperature: float = 0.8,
        timeout: float = 120.0,
        retries: int = 3,
        backoff: float = 1.0,
        api_key: Optional[str] = None,
        max_concurrency: int = 4,
        max_tokens: int = 1024,
        session=None,
    ):
        import requests

        self.url = (url or os.environ.get("SPOAGENT_BACKEND_URL", "http://localhost:8000/v1")).rstrip("/")
        self.model = model
        self.temperature = temperature
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.api_key = api_key or os.environ.get("SPOAGENT_API_KEY", "EMPTY")
        self.max_tokens = max_tokens
        self.session = session or requests.Session()
        self.name = f"remote:{self.model}"
        with self._sem_lock:
            key = (self.url, max_concurrency)
            if key not in self._semaphores:
                self._semaphores[key] = threading.BoundedSemaphore(max_concurrency)
            self._sem = self._semaphores[key]

    def complete(self, messages, role: str = SEEKER, context: Optional[dict] = None) -> str:
        import requests

        payload = {
            "model": self.model,
            "messages": list(messages),
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        headers = {"Authorization": f"Bearer {self.api_key}", "Content-Type": "application/json"}
        last = None
        for attempt in range(self.retries):
            try:
                with self._sem:
                    resp = self.session.post(
                        f"{self.url}/chat/completions", json=payload, headers=headers, timeout=self.timeout
                    )
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last = exc
                log.warning("%s attempt %d/%d failed: %s", self.name, attempt + 1, self.retries, exc)
                if attempt < self.retries - 1 and self.backoff > 0:
                    time.sleep(self.backoff * 2**attempt)
        raise BackendError(f"{self.name} failed after {self.retries} attempts: {last}")


def remote_reader(backend, template: str) -> Callable:
    """Read-tool callable that asks ``backend`` to summarise a page."""

    def read(page: doc_env.Page, origin_query: str, sub_query: str) -> str:
        prompt = template.format(origin_query=origin_query, sub_query=sub_query)
        msgs = [{"role": "user", "content": f"{prompt}\n[Page {page.page_id}]\n{page.text}"}]
        return backend.complete(msgs, role=READER)

    return read


Backend = Union[ScriptedBackend, OracleBackend, RemoteBackend, PolicyBackend, SimulatedAnswerBackend]


def backend_from_spec(spec: str, **kwargs):
    """Parse ``scripted:oracle``, ``scripted:<file.json>`` or ``remote:<url>``."""
    kind, _, arg = spec.partition(":")
    if kind == "scripted":
        if arg in ("", "oracle"):
            return OracleBackend()
        return ScriptedBackend.from_file(arg)
    if kind == "remote":
        return RemoteBackend(url=arg or None, **kwargs)
    raise ValueError(f"unknown backend spec {spec!r}; use scripted:oracle, scripted:<file> or remote:<url>")


__all__: Sequence[str] = (
    "BackendError",
    "OracleBackend",
    "PolicyBackend",
    "RemoteBackend",
    "ScriptedBackend",
    "SimulatedAnswerBackend",
    "backend_from_spec",
    "remote_reader",
)
