"""Planner, seeker and answer orchestration over a ``DocEnvironment``."""
from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

from .. import doc_env
from ..trajectory import Trajectory, Turn
from .backends import ANSWER, PLANNER, SEEKER
from .protocol import Finish, ProtocolError, Read, ToolCall, parse_tool_call, render_tool_call

log = logging.getLogger(__name__)

MAX_PLAN_STEPS = 10
DEFAULT_MAX_TURNS = 4
FALLBACK_TOC = "(no table of contents available)"
NO_FIGURES = "(none)"

# "(3) ..." or "3. ..." / "3) ..." at the start of a line
_STEP = re.compile(r"^\s*(?:\((\d+)\)|(\d+)[.)])\s", re.MULTILINE)


@lru_cache(maxsize=None)
def load_prompt(name: str) -> str:
    return resources.files(__package__).joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")


def format_prompt(name: str, **values) -> str:
    values.setdefault("example", "")
    return load_prompt(name).format(**values)


def truncate_plan(plan: str, max_steps: int = MAX_PLAN_STEPS) -> tuple[str, int]:
    """Cut ``plan`` before its ``max_steps + 1``-th numbered step.

    Returns the (possibly shortened) text and the number of dropped steps.
    """
    steps = list(_STEP.finditer(plan))
    if len(steps) <= max_steps:
        return plan, 0
    cut = steps[max_steps].start()
    return plan[:cut].rstrip() + "\n", len(steps) - max_steps


@dataclass
class AgentRun:
    qid: str
    plan: str
    transcript: list = field(default_factory=list)  # (role, text)
    tool_calls: list = field(default_factory=list)
    final_answer: str = ""
    pages_read: tuple = ()
    finished: bool = False
    diagnostics: list = field(default_factory=list)
    state: Optional[doc_env.EpisodeState] = None

    def to_dict(self) -> dict:
        return {
            "qid": self.qid,
            "plan": self.plan,
            "transcript": [list(t) for t in self.transcript],
            "tool_calls": [render_tool_call(c) for c in self.tool_calls],
            "final_answer": self.final_answer,
            "pages_read": list(self.pages_read),
            "finished": self.finished,
            "diagnostics": list(self.diagnostics),
        }

    def render(self) -> str:
        lines = [f"# {self.qid}", "## plan", self.plan.strip()]
        for role, text in self.transcript[1:]:
            lines += [f"## {role}", text.strip()]
        lines += [f"## pages read: {list(self.pages_read)}"]
        lines += [f"## finished: {self.finished}"]
        lines += [f"! {d}" for d in self.diagnostics]
        return "\n".join(lines)


def run_planner(backend, query: str, toc: str, figure_captions: Sequence[str] = (), example: str = "") -> tuple[str, list]:
    """Ask the planner role for a plan. Returns ``(plan, diagnostics)``."""
    prompt = format_prompt(
        "planner",
        example=example,
        query=query,
        document_toc=toc.strip() or FALLBACK_TOC,
        list_of_figures="\n".join(figure_captions) or NO_FIGURES,
    )
    plan = backend.complete([{"role": "user", "content": prompt}], role=PLANNER, context={"query": query})
    plan, dropped = truncate_plan(plan)
    notes = []
    if dropped:
        msg = f"plan exceeded {MAX_PLAN_STEPS} steps; dropped {dropped}"
        log.warning(msg)
        notes.append(msg)
    return plan, notes


def _correction(err: ProtocolError) -> str:
    return (
        f"Tool call error: {err}. Reply with exactly one tool call: "
        '<search>["keyword"]</search>, <read>[{"page_ids": [1], "query": "..."}]</read> or <FINISH>.'
    )


def run_seeker(
    backend,
    env: doc_env.DocEnvironment,
    state: doc_env.EpisodeState,
    plan: str,
    max_turns: int = DEFAULT_MAX_TURNS,
    example: str = "",
) -> AgentRun:
    """Seeker loop until Finish or ``max_turns`` tool calls.

    A malformed completion is answered once with corrective feedback that
    does not use up a turn; a second consecutive one forces Finish.
    """
    if max_turns < 1:
        raise ValueError("max_turns must be >= 1")
    q = state.question
    run = AgentRun(q.qid, plan, transcript=[(PLANNER, plan)])
    messages = [
        {"role": "user", "content": format_prompt("seeker", example=example, query=q.query, plan_done=plan)}
    ]
    errors = 0
    while state.turns_used < max_turns and not state.done:
        completion = backend.complete(messages, role=SEEKER, context={"question": q, "state": state})
        messages.append({"role": "assistant", "content": completion})
        run.transcript.append((SEEKER, completion))
        try:
            call: ToolCall = parse_tool_call(completion)
            errors = 0
        except ProtocolError as err:
            errors += 1
            if errors >= 2:
                run.diagnostics.append(f"forced finish after repeated protocol errors: {err}")
                call = Finish()
            else:
                fb = _correction(err)
                run.diagnostics.append(f"protocol error: {err}")
                messages.append({"role": "user", "content": fb})
                run.transcript.append(("tool", fb))
                continue
        state, out, _ = env.step(state, call)
        run.tool_calls.append(call)
        run.transcript.append(("tool", out))
        messages.append({"role": "user", "content": out})
    run.finished = state.done
    run.pages_read = state.pages_read
    run.state = state
    return run


def run_answer(backend, query: str, gathered: str, context: Optional[dict] = None) -> str:
    prompt = format_prompt("answer", origin_query=query, past_information=gathered)
    ctx = {"query": query, "gathered": gathered}
    ctx.update(context or {})
    return backend.complete([{"role": "user", "content": prompt}], role=ANSWER, context=ctx).strip()


def run_agent(
    env: doc_env.DocEnvironment,
    question,
    planner,
    seeker=None,
    answerer=None,
    max_turns: int = DEFAULT_MAX_TURNS,
    example: str = "",
) -> AgentRun:
    """Full planner, seeker, answer pipeline for one question.

    ``seeker`` and ``answerer`` default to ``planner``.
    """
    seeker = seeker or planner
    answerer = answerer or planner
    state = env.reset(question)
    q = state.question
    doc = env.document(q)
    plan, notes = run_planner(planner, q.query, doc.toc, doc.figure_captions, example)
    run = run_seeker(seeker, env, state, plan, max_turns, example)
    run.diagnostics[:0] = notes
    # the prompt sees everything gathered; the simulated answerer reads page text only
    run.final_answer = run_answer(
        answerer, q.query, run.state.gathered_text, {"gathered": run.state.read_text, "question": q}
    )
    run.transcript.append((ANSWER, run.final_answer))
    return run


def run_agents(env, questions, planner, seeker=None, answerer=None, max_turns=DEFAULT_MAX_TURNS, jobs: int = 1):
    """Run independent questions concurrently; results keep input order."""
    def one(q):
        return run_agent(env, q, planner, seeker, answerer, max_turns)

    if jobs <= 1:
        return [one(q) for q in questions]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, questions))


_CALL_KIND = ("Search", "Read", "Finish")


def to_trajectory(run: AgentRun, reward: float, max_turns: int = DEFAULT_MAX_TURNS) -> Trajectory:
    """Log form of a run: one turn per executed tool call."""
    turns = []
    ctx = run.plan
    for call, (_, out) in zip(run.tool_calls, run.state.tool_transcript):
        text = render_tool_call(call)
        turns.append(Turn(ctx, (_CALL_KIND.index(type(call).__name__),), text, out or "(empty)"))
        ctx = out or ctx
    if not turns:
        turns.append(Turn(ctx, (_CALL_KIND.index("Finish"),), "<FINISH>"))
    return Trajectory(
        id=f"{run.qid}/agent",
        prompt_id=run.qid,
        turns=tuple(turns),
        reward=float(reward),
        finished=run.finished,
        turn_cap=max_turns,
    )


def score_run(env: doc_env.DocEnvironment, run: AgentRun) -> float:
    return env.final_reward(run.state, run.final_answer)


__all__ = [
    "AgentRun",
    "Finish",
    "Read",
    "format_prompt",
    "load_prompt",
    "run_agent",
    "run_agents",
    "run_answer",
    "run_planner",
    "run_seeker",
    "score_run",
    "to_trajectory",
    "truncate_plan",
]
