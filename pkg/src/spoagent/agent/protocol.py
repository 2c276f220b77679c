"""Seeker tool-call wire format: ``<search>``, ``<read>`` and ``<FINISH>`` tags."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Union

MAX_READ_PAGES = 3


class ProtocolError(ValueError):
    """A completion did not contain exactly one well-formed tool call."""


@dataclass(frozen=True)
class Search:
    keywords: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "keywords", tuple(self.keywords))
        if not self.keywords:
            raise ProtocolError("search needs at least one keyword")
        if not all(isinstance(k, str) for k in self.keywords):
            raise ProtocolError("search keywords must be strings")


@dataclass(frozen=True)
class ReadRequest:
    page_ids: tuple[int, ...]
    query: str = ""

    def __post_init__(self):
        object.__setattr__(self, "page_ids", tuple(self.page_ids))
        if not self.page_ids:
            raise ProtocolError("read request needs at least one page id")
        if len(self.page_ids) > MAX_READ_PAGES:
            raise ProtocolError(
                f"read request asks for {len(self.page_ids)} pages; at most {MAX_READ_PAGES} per request"
            )
        for p in self.page_ids:
            if isinstance(p, bool) or not isinstance(p, int):
                raise ProtocolError(f"page id {p!r} is not an integer")
        if not isinstance(self.query, str):
            raise ProtocolError("read query must be a string")


@dataclass(frozen=True)
class Read:
    requests: tuple[ReadRequest, ...]

    def __post_init__(self):
        object.__setattr__(self, "requests", tuple(self.requests))
        if not self.requests:
            raise ProtocolError("read needs at least one request")

    @property
    def page_ids(self) -> list[int]:
        out = []
        for r in self.requests:
            out.extend(r.page_ids)
        return out


@dataclass(frozen=True)
class Finish:
    pass


ToolCall = Union[Search, Read, Finish]

_TAG = re.compile(r"<(search|read)>(.*?)</\1>|<FINISH>", re.DOTALL)
_STRAY = re.compile(r"</?(search|read)>|<FINISH>")


def parse_tool_call(completion: str) -> ToolCall:
    """Extract the single tool call from a model completion.

    Any reasoning text around the tag is ignored. Raises ``ProtocolError``
    for zero or several tags, malformed JSON inside a tag, or a read
    request with more than three pages.
    """
    if not isinstance(completion, str):
        raise ProtocolError("completion is not text")
    matches = list(_TAG.finditer(completion))
    if not matches:
        if _STRAY.search(completion):
            raise ProtocolError("unterminated or unbalanced tool tag")
        raise ProtocolError("no tool call found; use <search>, <read> or <FINISH>")
    if len(matches) > 1:
        raise ProtocolError(f"found {len(matches)} tool calls; exactly one is allowed")
    m = matches[0]
    rest = completion[: m.start()] + completion[m.end() :]
    if _STRAY.search(rest):
        raise ProtocolError("stray tool tag outside the tool call")
    if m.group(0) == "<FINISH>":
        return Finish()
    kind, body = m.group(1), m.group(2)
    try:
        payload = json.loads(body)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed JSON in <{kind}>: {exc.msg}") from None
    if kind == "search":
        if not isinstance(payload, list) or not all(isinstance(k, str) for k in payload):
            raise ProtocolError("<search> must contain a JSON array of strings")
        return Search(tuple(payload))
    if not isinstance(payload, list):
        raise ProtocolError("<read> must contain a JSON array of {page_ids, query} objects")
    reqs = []
    for item in payload:
        if not isinstance(item, dict) or "page_ids" not in item:
            raise ProtocolError("each read request must be an object with page_ids")
        ids = item["page_ids"]
        if not isinstance(ids, list):
            raise ProtocolError("page_ids must be a JSON array")
        reqs.append(ReadRequest(tuple(ids), item.get("query", "")))
    return Read(tuple(reqs))


def _dumps(obj) -> str:
    # "<" escaped so payload text can never form a tag
    return json.dumps(obj, ensure_ascii=False).replace("<", "\\u003c")


def render_tool_call(call: ToolCall) -> str:
    """Tag text for a tool call; ``parse_tool_call`` inverts it."""
    if isinstance(call, Finish):
        return "<FINISH>"
    if isinstance(call, Search):
        return "<search>" + _dumps(list(call.keywords)) + "</search>"
    if isinstance(call, Read):
        body = [{"page_ids": list(r.page_ids), "query": r.query} for r in call.requests]
        return "<read>" + _dumps(body) + "</read>"
    raise TypeError(f"not a tool call: {call!r}")
