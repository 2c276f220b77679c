"""Synthetic long-document QA environment.

Documents are lists of pages with planted facts of the form
``The <attribute> of <entity> is <value>.``. Questions ask for one fact
(single hop), chain two facts through a bridge entity (multi hop), or ask
about an entity that does not exist (unanswerable). Near-miss distractor
facts about similarly named entities are planted on other pages.
"""
from __future__ import annotations

import hashlib
import json
import math
import random
import re
import unicodedata
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

from . import retrieval
from .agent.protocol import MAX_READ_PAGES, Finish, Read, ReadRequest, Search, ToolCall

SINGLE = "single"
MULTI = "multi"

CANNOT_ANSWER = "Cannot answer the question due to lack of relevant data."
_DECLINE = re.compile(
    r"\b(cannot|can't|can not|unable to)\s+answer\b|\bunanswerable\b|\binsufficient data\b"
    r"|\black of relevant data\b",
    re.IGNORECASE,
)


class CorpusSpecError(ValueError):
    """The requested corpus cannot be generated."""


@dataclass(frozen=True)
class Page:
    page_id: int
    text: str
    figure_captions: tuple[str, ...] = ()

    def __post_init__(self):
        if self.page_id < 1:
            raise ValueError("page ids start at 1")
        if not self.text:
            raise ValueError(f"page {self.page_id} has no text")
        object.__setattr__(self, "figure_captions", tuple(self.figure_captions))


@dataclass(frozen=True)
class Document:
    doc_id: str
    pages: tuple[Page, ...]
    toc: str = ""

    def __post_init__(self):
        object.__setattr__(self, "pages", tuple(self.pages))
        ids = [p.page_id for p in self.pages]
        if len(set(ids)) != len(ids):
            raise ValueError(f"document {self.doc_id} has duplicate page ids")
        if not self.toc:
            object.__setattr__(self, "toc", retrieval.build_toc(self.pages))

    @property
    def page_ids(self) -> frozenset[int]:
        return frozenset(p.page_id for p in self.pages)

    def page(self, page_id: int) -> Page:
        for p in self.pages:
            if p.page_id == page_id:
                return p
        raise KeyError(page_id)

    @property
    def figure_captions(self) -> list[str]:
        return [c for p in self.pages for c in p.figure_captions]


@dataclass(frozen=True)
class Question:
    qid: str
    doc_id: str
    query: str
    evidence_pages: frozenset[int]
    gold_answer: Optional[str]
    hops: str = SINGLE

    def __post_init__(self):
        object.__setattr__(self, "evidence_pages", frozenset(int(p) for p in self.evidence_pages))
        if self.hops not in (SINGLE, MULTI):
            raise ValueError(f"hops must be {SINGLE!r} or {MULTI!r}")
        if self.hops == MULTI and len(self.evidence_pages) < 2:
            raise ValueError(f"multi-hop question {self.qid} needs at least two evidence pages")
        if self.gold_answer is None and self.evidence_pages:
            raise ValueError(f"unanswerable question {self.qid} must have no evidence pages")

    @property
    def answerable(self) -> bool:
        return self.gold_answer is not None


@dataclass
class DocumentCorpus:
    documents: dict[str, Document]
    questions: list[Question]

    def __post_init__(self):
        for q in self.questions:
            doc = self.documents.get(q.doc_id)
            if doc is None:
                raise ValueError(f"question {q.qid} refers to unknown document {q.doc_id}")
            missing = q.evidence_pages - doc.page_ids
            if missing:
                raise ValueError(f"question {q.qid} evidence pages {sorted(missing)} not in {q.doc_id}")

    def question(self, qid: str) -> Question:
        for q in self.questions:
            if q.qid == qid:
                return q
        raise KeyError(qid)

    def to_jsonl(self) -> str:
        lines = []
        for doc in self.documents.values():
            lines.append(
                {
                    "doc_id": doc.doc_id,
                    "toc": doc.toc,
                    "pages": [
                        {"page_id": p.page_id, "text": p.text, "figure_captions": list(p.figure_captions)}
                        for p in doc.pages
                    ],
                }
            )
        for q in self.questions:
            lines.append(
                {
                    "qid": q.qid,
                    "doc_id": q.doc_id,
                    "query": q.query,
                    "evidence_pages": sorted(q.evidence_pages),
                    "gold_answer": q.gold_answer,
                    "hops": q.hops,
                }
            )
        return "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in lines)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "DocumentCorpus":
        docs: dict[str, Document] = {}
        questions = []
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "pages" in rec:
                pages = [
                    Page(int(p["page_id"]), p["text"], tuple(p.get("figure_captions", ())))
                    for p in rec["pages"]
                ]
                docs[rec["doc_id"]] = Document(rec["doc_id"], tuple(pages), rec.get("toc", ""))
            elif "query" in rec:
                questions.append(
                    Question(
                        qid=str(rec.get("qid", f"q{len(questions)}")),
                        doc_id=rec["doc_id"],
                        query=rec["query"],
                        evidence_pages=frozenset(rec.get("evidence_pages", ())),
                        gold_answer=rec.get("gold_answer"),
                        hops=rec.get("hops", SINGLE),
                    )
                )
            else:
                raise ValueError(f"line {n}: neither a document nor a question record")
        return cls(docs, questions)

    @classmethod
    def load(cls, path) -> "DocumentCorpus":
        with open(path, encoding="utf-8") as fh:
            return cls.from_jsonl(fh.read())

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Reward


def recall(pages_read, evidence) -> float:
    """|read & evidence| / |evidence|; 1.0 when no evidence is required."""
    evidence = set(evidence)
    if not evidence:
        return 1.0
    return len(set(pages_read) & evidence) / len(evidence)


def _as_number(s: str):
    t = s.strip().rstrip(".").replace(",", "").replace(" ", "")
    try:
        v = float(t)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def normalize_answer(s: str) -> str:
    s = unicodedata.normalize("NFKC", s).casefold()
    s = "".join(ch for ch in s if not unicodedata.category(ch).startswith("P"))
    return " ".join(s.split())


def declines(predicted: str) -> bool:
    return bool(_DECLINE.search(predicted or ""))


def correctness(predicted: str, gold: Optional[str]) -> float:
    """1.0 if the prediction matches the gold answer after normalisation.

    ``gold=None`` marks an unanswerable question; it is matched by an
    explicit "cannot answer" style reply.
    """
    predicted = predicted or ""
    if gold is None:
        return 1.0 if declines(predicted) else 0.0
    if declines(predicted):
        return 0.0
    a, b = _as_number(predicted), _as_number(gold)
    if a is not None and b is not None:
        return 1.0 if abs(a - b) <= 1e-9 * max(1.0, abs(b)) else 0.0
    return 1.0 if normalize_answer(predicted) == normalize_answer(gold) else 0.0


# ---------------------------------------------------------------------------
# Episodes


@dataclass(frozen=True)
class EpisodeState:
    question: Question
    pages_read: tuple[int, ...] = ()
    tool_transcript: tuple[tuple[ToolCall, str], ...] = ()
    turns_used: int = 0
    done: bool = False
    search_pages: tuple[int, ...] = ()
    last_hits: tuple[int, ...] = ()

    @property
    def gathered_text(self) -> str:
        return "\n\n".join(out for call, out in self.tool_transcript if isinstance(call, (Read, Search)))

    @property
    def read_text(self) -> str:
        return "\n\n".join(out for call, out in self.tool_transcript if isinstance(call, Read))


class EpisodeError(RuntimeError):
    pass


Reader = Callable[[Page, str, str], str]


class DocEnvironment:
    """Executes seeker tool calls against a corpus.

    ``reader`` turns a page into the read-tool output; by default the page
    text is returned verbatim.
    """

    def __init__(
        self,
        corpus: DocumentCorpus,
        top_k: int = retrieval.DEFAULT_TOP_K,
        turn_cap: Optional[int] = None,
        count_search_pages: bool = False,
        reader: Optional[Reader] = None,
        per_keyword_search: bool = False,
    ):
        self.corpus = corpus
        self.top_k = top_k
        self.turn_cap = turn_cap
        self.count_search_pages = count_search_pages
        self.reader = reader
        self.per_keyword_search = per_keyword_search
        self._indexes: dict[str, retrieval.Bm25Index] = {}
        self._search_cache: dict = {}

    def index(self, doc_id: str) -> retrieval.Bm25Index:
        idx = self._indexes.get(doc_id)
        if idx is None:
            idx = self._indexes[doc_id] = retrieval.build_index(self.corpus.documents[doc_id].pages)
        return idx

    def document(self, state_or_question) -> Document:
        q = state_or_question.question if isinstance(state_or_question, EpisodeState) else state_or_question
        return self.corpus.documents[q.doc_id]

    def reset(self, question) -> EpisodeState:
        if isinstance(question, str):
            question = self.corpus.question(question)
        return EpisodeState(question)

    def search(self, doc_id: str, keywords: Sequence[str]):
        key = (doc_id, tuple(keywords))
        hits = self._search_cache.get(key)
        if hits is None:
            hits = retrieval.search(self.index(doc_id), keywords, self.top_k, self.per_keyword_search)
            self._search_cache[key] = hits
        return hits

    def step(self, state: EpisodeState, call: ToolCall):
        """Apply one tool call. Returns ``(new_state, tool_output, done)``."""
        if state.done:
            raise EpisodeError("episode already finished")
        if self.turn_cap is not None and state.turns_used >= self.turn_cap:
            raise EpisodeError(f"turn cap {self.turn_cap} reached")
        turns = state.turns_used + 1
        if isinstance(call, Finish):
            out = "Finished."
            new = replace(
                state, tool_transcript=state.tool_transcript + ((call, out),), turns_used=turns, done=True
            )
            return new, out, True
        doc = self.document(state)
        if isinstance(call, Search):
            hits = self.search(doc.doc_id, call.keywords)
            if hits:
                out = "\n".join(f"[p.{h.page_id}] (score {h.score:.3f}) {h.snippet}" for h in hits)
            else:
                out = "No matching pages."
            ids = tuple(h.page_id for h in hits)
            seen = state.search_pages + tuple(p for p in ids if p not in state.search_pages)
            new = replace(
                state,
                tool_transcript=state.tool_transcript + ((call, out),),
                turns_used=turns,
                search_pages=seen,
                last_hits=ids,
            )
            return new, out, False
        if isinstance(call, Read):
            out, ok = self._read(doc, state.question, call)
            read = state.pages_read
            if ok:
                read = read + tuple(p for p in dict.fromkeys(call.page_ids) if p not in read)
            new = replace(
                state, tool_transcript=state.tool_transcript + ((call, out),), turns_used=turns, pages_read=read
            )
            return new, out, False
        raise TypeError(f"not a tool call: {call!r}")

    def _read(self, doc: Document, question: Question, call: Read):
        for r in call.requests:
            if len(r.page_ids) > MAX_READ_PAGES:
                return (
                    f"Error: you may read up to {MAX_READ_PAGES} pages at a time; "
                    f"request asked for {len(r.page_ids)}.",
                    False,
                )
        unknown = sorted(set(call.page_ids) - doc.page_ids)
        if unknown:
            return (
                f"Error: page ids {unknown} do not exist; valid pages are 1-{max(doc.page_ids)}.",
                False,
            )
        parts = []
        for r in call.requests:
            for pid in r.page_ids:
                page = doc.page(pid)
                body = self.reader(page, question.query, r.query) if self.reader else page.text
                parts.append(f"[Page {pid}]\n{body}")
        return "\n\n".join(parts), True

    def pages_for_recall(self, state: EpisodeState) -> set[int]:
        pages = set(state.pages_read)
        if self.count_search_pages:
            pages |= set(state.search_pages)
        return pages

    def final_reward(self, state: EpisodeState, predicted: str) -> float:
        """Read-page recall plus answer correctness, in [0, 2]."""
        q = state.question
        return recall(self.pages_for_recall(state), q.evidence_pages) + correctness(predicted, q.gold_answer)


def final_reward(state: EpisodeState, predicted: str) -> float:
    q = state.question
    return recall(state.pages_read, q.evidence_pages) + correctness(predicted, q.gold_answer)


# ---------------------------------------------------------------------------
# Simulated answer model


_MULTI_Q = re.compile(r"^What is the (?P<attr>.+?) of the (?P<rel>\w+) of (?P<ent>.+?)\?$")
_SINGLE_Q = re.compile(r"^What is the (?P<attr>.+?) of (?P<ent>(?!the ).+?)\?$")


def parse_question(query: str):
    """Split a generated question into ``(attribute, relation or None, entity)``."""
    q = query.strip()
    m = _MULTI_Q.match(q)
    if m:
        return m.group("attr"), m.group("rel"), m.group("ent")
    m = _SINGLE_Q.match(q)
    if m:
        return m.group("attr"), None, m.group("ent")
    return None


def lookup_fact(text: str, attribute: str, entity: str) -> Optional[str]:
    m = re.search(rf"The {re.escape(attribute)} of {re.escape(entity)} is ([^.\n]+)\.", text)
    return m.group(1).strip() if m else None


def find_bridge(query: str, text: str) -> Optional[str]:
    """Bridge entity of a multi-hop question, if its fact appears in ``text``."""
    parsed = parse_question(query)
    if parsed is None or parsed[1] is None:
        return None
    _, rel, ent = parsed
    return lookup_fact(text, rel, ent)


def answer_from_context(query: str, context: str) -> str:
    """Answer a generated question using only facts present in ``context``."""
    parsed = parse_question(query)
    if parsed is None:
        return CANNOT_ANSWER
    attr, rel, ent = parsed
    if rel is not None:
        ent = lookup_fact(context, rel, ent)
        if ent is None:
            return CANNOT_ANSWER
    value = lookup_fact(context, attr, ent)
    return value if value is not None else CANNOT_ANSWER


# ---------------------------------------------------------------------------
# Corpus generation


@dataclass(frozen=True)
class CorpusSpec:
    n_docs: int = 5
    pages_per_doc: int = 20
    n_questions: int = 40
    multi_hop_fraction: float = 0.5
    unanswerable_fraction: float = 0.1
    filler_sentences: tuple[int, int] = (4, 8)

    def counts(self) -> tuple[int, int, int]:
        n_multi = int(round(self.n_questions * self.multi_hop_fraction))
        n_unans = int(round(self.n_questions * self.unanswerable_fraction))
        return self.n_questions - n_multi - n_unans, n_multi, n_unans

    def validate(self) -> None:
        if self.n_docs < 1 or self.pages_per_doc < 1 or self.n_questions < 1:
            raise CorpusSpecError("n_docs, pages_per_doc and n_questions must be positive")
        if not (0 <= self.multi_hop_fraction <= 1 and 0 <= self.unanswerable_fraction <= 1):
            raise CorpusSpecError("fractions must lie in [0, 1]")
        n_single, n_multi, n_unans = self.counts()
        if n_single < 0:
            raise CorpusSpecError("multi-hop and unanswerable fractions sum to more than 1")
        if n_multi and self.pages_per_doc < 2:
            raise CorpusSpecError(
                f"multi-hop questions need 2 evidence pages but documents have {self.pages_per_doc}"
            )


_NAME_A = (
    "Orion Vega Lyra Altair Cygnus Draco Hydra Pavo Carina Fornax Lupus Norma Perseus Phoenix "
    "Sagitta Tucana Volans Auriga Columba Corvus Crater Dorado Indus Mensa Octans Pyxis "
    "Reticulum Scutum Vela Pictor"
).split()
_NAME_B = "Lab Group Institute Works Foundry Collective Bureau Studio Council Agency Trust Center".split()
_ATTRIBUTES = ("budget", "headcount", "founding year", "patent count", "office count", "annual revenue")
_RELATIONS = ("partner", "parent", "supplier", "auditor")
_TOPICS = (
    "Overview", "Operations", "Finance", "Governance", "Research", "Facilities", "Partnerships",
    "Outlook", "Methods", "Staffing", "Procurement", "Appendix",
)
_SUBJ = ("The committee", "Staff", "The review panel", "Management", "The planning office", "Analysts")
_VERB = ("reviewed", "summarised", "revised", "discussed", "documented", "audited", "scheduled")
_OBJ = (
    "quarterly logistics", "maintenance schedules", "travel policy", "storage capacity",
    "training sessions", "safety procedures", "archive retention", "vendor contracts",
    "seasonal demand", "regional outreach", "equipment upgrades", "reporting templates",
)
_TAIL = ("in detail", "without changes", "ahead of the deadline", "for the coming year", "once more", "at length")


def _value(rng: random.Random, attribute: str) -> str:
    if attribute == "founding year":
        return str(rng.randint(1901, 2019))
    v = rng.randint(120, 98000)
    return f"{v:,}" if rng.random() < 0.5 else str(v)


def _filler(rng: random.Random, n: int) -> list[str]:
    return [
        f"{rng.choice(_SUBJ)} {rng.choice(_VERB)} {rng.choice(_OBJ)} {rng.choice(_TAIL)}."
        for _ in range(n)
    ]


class _Names:
    def __init__(self, rng: random.Random):
        self.rng = rng
        self.used: set[str] = set()

    def fresh(self, first: Optional[str] = None) -> str:
        for k in range(1, 1000):
            a = first or self.rng.choice(_NAME_A)
            cands = [f"{a} {b}" + (f" {k}" if k > 1 else "") for b in _NAME_B]
            cands = [c for c in cands if c not in self.used]
            if cands:
                name = self.rng.choice(cands)
                self.used.add(name)
                return name
        raise CorpusSpecError("ran out of entity names")

    def near_miss(self, name: str) -> str:
        return self.fresh(first=name.split()[0])


def generate_corpus(seed: int, spec: CorpusSpec = CorpusSpec()) -> DocumentCorpus:
    """Build a deterministic synthetic corpus for ``seed``.

    Each answerable question's answer is recoverable only from its evidence
    pages. Multi-hop questions chain two facts on two different pages.
    """
    spec.validate()
    rng = random.Random(seed)
    names = _Names(rng)
    n_single, n_multi, n_unans = spec.counts()
    kinds = [SINGLE] * n_single + [MULTI] * n_multi + ["unanswerable"] * n_unans
    rng.shuffle(kinds)

    facts: dict[str, dict[int, list[str]]] = {}
    doc_ids = [f"doc{d:03d}" for d in range(spec.n_docs)]
    for d in doc_ids:
        facts[d] = {p: [] for p in range(1, spec.pages_per_doc + 1)}
    questions = []
    page_range = list(range(1, spec.pages_per_doc + 1))

    def plant(doc, page, sentence):
        facts[doc][page].append(sentence)

    def other_page(exclude):
        free = [p for p in page_range if p not in exclude]
        return rng.choice(free) if free else None

    for k, kind in enumerate(kinds):
        doc = doc_ids[k % spec.n_docs]
        qid = f"q{k:04d}"
        attr = rng.choice(_ATTRIBUTES)
        ent = names.fresh()
        if kind == SINGLE:
            page = rng.choice(page_range)
            value = _value(rng, attr)
            plant(doc, page, f"The {attr} of {ent} is {value}.")
            dp = other_page({page})
            if dp is not None:
                plant(doc, dp, f"The {attr} of {names.near_miss(ent)} is {_value(rng, attr)}.")
            questions.append(Question(qid, doc, f"What is the {attr} of {ent}?", frozenset({page}), value, SINGLE))
        elif kind == MULTI:
            rel = rng.choice(_RELATIONS)
            bridge = names.fresh()
            p1, p2 = rng.sample(page_range, 2)
            value = _value(rng, attr)
            plant(doc, p1, f"The {rel} of {ent} is {bridge}.")
            plant(doc, p2, f"The {attr} of {bridge} is {value}.")
            dp = other_page({p1, p2})
            if dp is not None:
                plant(doc, dp, f"The {attr} of {names.near_miss(bridge)} is {_value(rng, attr)}.")
            dp = other_page({p1, p2})
            if dp is not None:
                plant(doc, dp, f"The {rel} of {names.near_miss(ent)} is {names.fresh()}.")
            questions.append(
                Question(
                    qid, doc, f"What is the {attr} of the {rel} of {ent}?", frozenset({p1, p2}), value, MULTI
                )
            )
        else:
            plant(doc, rng.choice(page_range), f"The {attr} of {names.near_miss(ent)} is {_value(rng, attr)}.")
            questions.append(Question(qid, doc, f"What is the {attr} of {ent}?", frozenset(), None, SINGLE))

    documents = {}
    lo, hi = spec.filler_sentences
    for d_i, doc in enumerate(doc_ids):
        title = f"Annual Report of the {rng.choice(_NAME_A)} Consortium, Volume {d_i + 1}"
        pages = []
        for p in page_range:
            lines = []
            if p == 1:
                lines.append(f"# {title}")
            elif rng.random() < 0.4:
                lines.append(f"## {rng.choice(_TOPICS)} {p}")
            sentences = _filler(rng, rng.randint(lo, hi)) + facts[doc][p]
            rng.shuffle(sentences)
            lines.append(" ".join(sentences))
            captions = (f"Figure {p}: {rng.choice(_OBJ)} by month",) if rng.random() < 0.2 else ()
            pages.append(Page(p, "\n".join(lines), captions))
        documents[doc] = Document(doc, tuple(pages))
    return DocumentCorpus(documents, questions)


@dataclass
class SweepResult:
    n_questions: int
    solved: int
    recall_full: int
    leaks: list[str] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.solved == self.n_questions and self.recall_full == self.n_questions and not self.leaks

    def summary(self) -> str:
        pct = 100.0 * self.solved / max(self.n_questions, 1)
        return (
            f"oracle sweep: {self.solved}/{self.n_questions} solvable ({pct:.1f}%), "
            f"full recall {self.recall_full}/{self.n_questions}, leaks {len(self.leaks)}"
        )


def oracle_sweep(corpus: DocumentCorpus) -> SweepResult:
    """Check every question with an agent that reads exactly its evidence pages.

    Also checks that no answerable question can be answered from the
    non-evidence pages alone.
    """
    res = SweepResult(len(corpus.questions), 0, 0)
    for q in corpus.questions:
        doc = corpus.documents[q.doc_id]
        ev_text = "\n".join(doc.page(p).text for p in sorted(q.evidence_pages))
        pred = answer_from_context(q.query, ev_text)
        if correctness(pred, q.gold_answer) == 1.0:
            res.solved += 1
        else:
            res.failures.append(q.qid)
        if recall(q.evidence_pages, q.evidence_pages) == 1.0:
            res.recall_full += 1
        if q.answerable:
            rest = "\n".join(p.text for p in doc.pages if p.page_id not in q.evidence_pages)
            if correctness(answer_from_context(q.query, rest), q.gold_answer) == 1.0:
                res.leaks.append(q.qid)
    return res


def oracle_read_call(question: Question) -> Optional[Read]:
    """The read call an oracle agent issues: exactly the evidence pages."""
    pages = sorted(question.evidence_pages)
    if not pages:
        return None
    reqs = tuple(
        ReadRequest(tuple(pages[i : i + MAX_READ_PAGES]), question.query)
        for i in range(0, len(pages), MAX_READ_PAGES)
    )
    return Read(reqs)

