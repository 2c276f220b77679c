import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spoagent.agent.protocol import Finish, ProtocolError, Read, ReadRequest, Search, parse_tool_call, render_tool_call

SEARCH_TEXT = 'reasoning… <search>["budget", "2021"]</search>'
READ_TEXT = '<read>[{"page_ids":[4,5,8],"query":"q1"}]</read>'


def test_documented_tag_formats():
    assert parse_tool_call(SEARCH_TEXT) == Search(("budget", "2021"))
    assert parse_tool_call(READ_TEXT) == Read((ReadRequest((4, 5, 8), "q1"),))
    assert parse_tool_call("<FINISH>") == Finish()


def test_prompt_block_formats():
    block = """```tool_code
<read> 
[{
    "page_ids": [4, 5, 8],
    "query": "sub_query1"
}, {
    "page_ids": [13, 19, 20],
    "query": "sub_query2"
}]
</read>
```"""
    call = parse_tool_call(block)
    assert call.page_ids == [4, 5, 8, 13, 19, 20]
    assert parse_tool_call('```tool_code\n<search>["keyword1", "keyword2"]</search>\n```') == Search(
        ("keyword1", "keyword2")
    )


@pytest.mark.parametrize(
    "text,msg",
    [
        ("just thinking", "no tool call"),
        ("<search>[\"a\"]</search> <FINISH>", "2 tool calls"),
        ("<search>[\"a\"", "unterminated"),
        ("<search>[a]</search>", "malformed JSON"),
        ("<search>{\"a\": 1}</search>", "array of strings"),
        ("<search>[]</search>", "at least one"),
        ("<read>[{\"page_ids\": [4,5,8,13]}]</read>", "at most 3"),
        ("<read>[{\"query\": \"x\"}]</read>", "page_ids"),
        ("<read>[{\"page_ids\": [\"4\"]}]</read>", "not an integer"),
        ("<read>[]</read>", "at least one"),
        ("<read>{\"page_ids\": [1]}</read>", "JSON array"),
        ("<FINISH> </read>", "stray"),
    ],
)
def test_malformed_inputs(text, msg):
    with pytest.raises(ProtocolError, match=msg):
        parse_tool_call(text)


def test_non_text_rejected():
    with pytest.raises(ProtocolError):
        parse_tool_call(None)


keywords = st.lists(st.text(min_size=1, max_size=12), min_size=1, max_size=4)
requests_ = st.builds(
    ReadRequest, st.lists(st.integers(1, 500), min_size=1, max_size=3).map(tuple), st.text(max_size=20)
)
calls = st.one_of(
    st.builds(Search, keywords.map(tuple)),
    st.builds(Read, st.lists(requests_, min_size=1, max_size=3).map(tuple)),
    st.just(Finish()),
)


@settings(max_examples=300, deadline=None)
@given(calls, st.text(alphabet="abc xyz.\n", max_size=30))
def test_round_trip(call, prefix):
    assert parse_tool_call(prefix + render_tool_call(call)) == call


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=60))
def test_arbitrary_text_never_crashes(text):
    try:
        parse_tool_call(text)
    except ProtocolError:
        pass


def test_render_escapes_angle_brackets():
    s = render_tool_call(Search(("<read>",)))
    assert "<read>" not in s[len("<search>") :]
    assert json.loads(s[len("<search>") : -len("</search>")]) == ["<read>"]
