import json

import pytest
import requests

from spoagent import doc_env, envs
from spoagent.agent import backends
from spoagent.agent.backends import BackendError, OracleBackend, RemoteBackend, ScriptedBackend, backend_from_spec
from spoagent.agent.protocol import Finish, Read, parse_tool_call
from spoagent.policy import PolicyParams


def test_scripted_depends_on_history_only():
    b = ScriptedBackend({"seeker": ["one", "two"]})
    h0 = [{"role": "user", "content": "x"}]
    h1 = h0 + [{"role": "assistant", "content": "one"}, {"role": "user", "content": "y"}]
    assert b.complete(h0) == b.complete(h0) == "one"
    assert b.complete(h1) == "two"
    assert b.complete(h1 + h1[1:]) == "two"  # last entry repeats
    with pytest.raises(BackendError):
        b.complete(h0, role="answer")


def test_scripted_from_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"planner": "plan", "seeker": ["<FINISH>"], "answer": "a"}))
    assert backend_from_spec(f"scripted:{p}").complete([], role="planner") == "plan"
    assert isinstance(backend_from_spec("scripted:oracle"), OracleBackend)
    with pytest.raises(ValueError):
        backend_from_spec("magic:x")


def test_oracle_reads_evidence(corpus):
    q = next(q for q in corpus.questions if q.hops == doc_env.MULTI)
    state = doc_env.EpisodeState(q)
    call = parse_tool_call(OracleBackend().complete([], role="seeker", context={"question": q, "state": state}))
    assert isinstance(call, Read) and set(call.page_ids) == set(q.evidence_pages)
    later = doc_env.EpisodeState(q, turns_used=1)
    assert parse_tool_call(OracleBackend().complete([], context={"question": q, "state": later})) == Finish()
    ctx = "The budget of Orion Lab is 1,234."
    assert OracleBackend().complete([], role="answer", context={"query": "What is the budget of Orion Lab?", "gathered": ctx}) == "1,234"


def test_policy_backend_emits_valid_calls(corpus):
    env = envs.SeekerEnv(corpus)
    p = PolicyParams.zeros(env.feature_dim, env.vocab)
    p.weights[0, env.vocab.index("search_query")] = 5.0
    b = backends.PolicyBackend(p, env)
    q = corpus.questions[0]
    out = b.complete([], context={"question": q, "state": doc_env.EpisodeState(q)})
    assert parse_tool_call(out).keywords


class Resp:
    def __init__(self, status, payload):
        self.status_code = status
        self.payload = payload

    def raise_for_status(self):
        if self.status_code >= 400:
            raise requests.HTTPError(f"{self.status_code}")

    def json(self):
        return self.payload


class Session:
    def __init__(self, responses):
        self.responses = list(responses)
        self.posts = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.posts.append((url, json, headers))
        r = self.responses.pop(0)
        if isinstance(r, Exception):
            raise r
        return r


def ok(text):
    return Resp(200, {"choices": [{"message": {"content": text}}]})


def test_remote_retries_then_succeeds(monkeypatch):
    monkeypatch.setenv("SPOAGENT_API_KEY", "k123")
    s = Session([requests.ConnectionError("down"), Resp(503, {}), ok("<FINISH>")])
    b = RemoteBackend("http://llm.local/v1/", model="m", backoff=0, session=s)
    assert b.complete([{"role": "user", "content": "hi"}]) == "<FINISH>"
    assert len(s.posts) == 3
    url, payload, headers = s.posts[-1]
    assert url == "http://llm.local/v1/chat/completions"
    assert payload["model"] == "m" and payload["temperature"] == 0.8
    assert headers["Authorization"] == "Bearer k123"


def test_remote_gives_up_after_three(monkeypatch):
    s = Session([requests.Timeout("t")] * 3)
    b = RemoteBackend("http://llm.local", backoff=0, session=s)
    with pytest.raises(BackendError, match="3 attempts"):
        b.complete([])


def test_remote_url_from_environment(monkeypatch):
    monkeypatch.setenv("SPOAGENT_BACKEND_URL", "http://env.local/v1")
    assert RemoteBackend(session=Session([])).url == "http://env.local/v1"


def test_remote_reader_formats_prompt():
    s = Session([ok("summary")])
    b = RemoteBackend("http://x", backoff=0, session=s)
    read = backends.remote_reader(b, "O={origin_query} S={sub_query}")
    out = read(doc_env.Page(3, "page body"), "orig", "sub")
    assert out == "summary"
    assert s.posts[0][1]["messages"][0]["content"].startswith("O=orig S=sub")
