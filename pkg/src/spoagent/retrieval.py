"""BM25 page index and table-of-contents extraction for the search tool."""
from __future__ import annotations

import hashlib
import math
import pickle
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .text import STOPWORDS, token_spans, tokenize

DEFAULT_TOP_K = 10
SNIPPET_CHARS = 160


@dataclass(frozen=True)
class SearchHit:
    page_id: int
    score: float
    snippet: str


class Bm25Index:
    """Okapi BM25 over page chunks.

    Postings are stored per term as parallel arrays of page positions and
    term frequencies. IDF is ``max(0, log((N - df + 0.5) / (df + 0.5)))``.
    """

    def __init__(self, pages, k1: float = 1.2, b: float = 0.75):
        if not (k1 > 0):
            raise ValueError("k1 must be positive")
        if not (0.0 <= b <= 1.0):
            raise ValueError("b must lie in [0, 1]")
        pages = list(pages)
        if not pages:
            raise ValueError("cannot index an empty corpus")
        self.k1 = float(k1)
        self.b = float(b)
        self.page_ids = [int(_page_id(p)) for p in pages]
        self.texts = [_page_text(p) for p in pages]
        self.term_freqs: list[Counter] = [Counter(tokenize(t)) for t in self.texts]
        self.doc_len = np.array([sum(tf.values()) for tf in self.term_freqs], dtype=np.float64)
        self.n_pages = len(pages)
        self.avgdl = float(self.doc_len.mean())
        if self.avgdl == 0.0:
            self.avgdl = 1.0  # every page empty after stop-word removal
        df: Counter = Counter()
        for tf in self.term_freqs:
            df.update(tf.keys())
        self.doc_freq = dict(df)
        postings: dict[str, tuple[list, list]] = {}
        for pos, tf in enumerate(self.term_freqs):
            for term, f in tf.items():
                idx, freqs = postings.setdefault(term, ([], []))
                idx.append(pos)
                freqs.append(f)
        self.postings = {
            t: (np.array(i, dtype=np.int64), np.array(f, dtype=np.float64))
            for t, (i, f) in postings.items()
        }

    def idf(self, term: str) -> float:
        df = self.doc_freq.get(term, 0)
        if df == 0:
            return 0.0
        return max(0.0, math.log((self.n_pages - df + 0.5) / (df + 0.5)))

    def term_scores(self, term: str) -> np.ndarray:
        scores = np.zeros(self.n_pages)
        if term in self.postings:
            idx, tf = self.postings[term]
            kernels.bm25_accumulate(scores, idx, tf, self.doc_len, self.idf(term), self.k1, self.b, self.avgdl)
        return scores

    def scores(self, terms: Sequence[str]) -> np.ndarray:
        """BM25 score of every page, summed over query terms (repeats count)."""
        scores = np.zeros(self.n_pages)
        for term in terms:
            if term in self.postings:
                idx, tf = self.postings[term]
                kernels.bm25_accumulate(
                    scores, idx, tf, self.doc_len, self.idf(term), self.k1, self.b, self.avgdl
                )
        return scores

    def corpus_hash(self) -> str:
        h = hashlib.sha256()
        for pid, text in zip(self.page_ids, self.texts):
            h.update(f"{pid}\0{text}\0".encode("utf-8"))
        h.update(f"{self.k1}:{self.b}".encode())
        return h.hexdigest()

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            pickle.dump({"hash": self.corpus_hash(), "index": self}, fh)

    @staticmethod
    def load(path, expected_hash: str | None = None) -> "Bm25Index":
        with open(path, "rb") as fh:
            blob = pickle.load(fh)
        if expected_hash is not None and blob["hash"] != expected_hash:
            raise ValueError("index cache does not match corpus")
        return blob["index"]


def _page_id(p):
    return p.page_id if hasattr(p, "page_id") else p[0]


def _page_text(p):
    return p.text if hasattr(p, "text") else p[1]


def build_index(pages, k1: float = 1.2, b: float = 0.75) -> Bm25Index:
    """Index pages given as ``Page`` objects or ``(page_id, text)`` pairs."""
    return Bm25Index(pages, k1=k1, b=b)


def query_terms(keywords: Sequence[str]) -> list[str]:
    terms = []
    for kw in keywords:
        terms.extend(tokenize(kw))
    return terms


def _rank(index: Bm25Index, scores: np.ndarray, top_k: int) -> list[int]:
    candidates = np.flatnonzero(scores > 0)
    order = sorted(candidates, key=lambda i: (-scores[i], index.page_ids[i]))
    return order[:top_k]


def snippet(text: str, terms: Sequence[str], term_weight: dict, width: int = SNIPPET_CHARS) -> str:
    """``width`` characters centred on the first occurrence of the best term."""
    best = None
    for tok, start, end in token_spans(text):
        if tok in term_weight and tok not in STOPWORDS:
            w = term_weight[tok]
            if best is None or w > best[0]:
                best = (w, start, end)
    if best is None:
        return text[:width]
    centre = (best[1] + best[2]) // 2
    lo = max(0, centre - width // 2)
    hi = min(len(text), lo + width)
    lo = max(0, hi - width)
    return text[lo:hi]


def search(index: Bm25Index, keywords: Sequence[str], top_k: int = DEFAULT_TOP_K, per_keyword: bool = False):
    """Top-k pages for the keywords, by descending score then page id.

    By default all keyword terms are scored jointly. With ``per_keyword``
    each keyword is ranked separately and the hit lists are merged keeping
    each page's best score.
    """
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    if per_keyword:
        best = np.zeros(index.n_pages)
        for kw in keywords:
            best = np.maximum(best, index.scores(query_terms([kw])))
        scores = best
    else:
        scores = index.scores(query_terms(keywords))
    terms = query_terms(keywords)
    per_term = {t: index.term_scores(t) for t in set(terms)}
    hits = []
    for pos in _rank(index, scores, top_k):
        weights = {t: s[pos] for t, s in per_term.items()}
        hits.append(SearchHit(index.page_ids[pos], float(scores[pos]), snippet(index.texts[pos], terms, weights)))
    return hits


def build_toc(pages) -> str:
    """Markdown headings with their page ids, in document order.

    Falls back to each page's first non-empty line when no page has a
    heading; the fallback is marked in the first line of the output.
    """
    lines = []
    for p in pages:
        for raw in _page_text(p).splitlines():
            s = raw.strip()
            if s.startswith("#"):
                title = s.lstrip("#").strip()
                if title:
                    lines.append(f"{title} ... p.{_page_id(p)}")
    if lines:
        return "\n".join(lines)
    out = ["(no headings found; first line of each page)"]
    for p in pages:
        first = next((ln.strip() for ln in _page_text(p).splitlines() if ln.strip()), "")
        out.append(f"{first} ... p.{_page_id(p)}")
    return "\n".join(out)
