import random

import numpy as np
import pytest

import oracles
from spoagent import retrieval
from spoagent.retrieval import build_index, build_toc, search

WORDS = "alpha beta gamma delta epsilon zeta eta theta iota kappa lambda mu".split()


def random_pages(seed, n=100):
    rng = random.Random(seed)
    return [(i + 1, " ".join(rng.choice(WORDS) for _ in range(rng.randint(3, 25)))) for i in range(n)]


def test_index_counts_single_page():
    idx = build_index([(1, "a a b")])  # "a" is a stop-word, so use real words below
    assert idx.doc_len[0] == 1
    idx = build_index([(1, "cat cat dog")])
    assert idx.term_freqs[0] == {"cat": 2, "dog": 1}
    assert idx.avgdl == 3.0


def test_index_matches_recount_oracle():
    pages = random_pages(5)
    idx = build_index(pages)
    for pos, (_, text) in enumerate(pages):
        toks = oracles._tokens(text)
        assert idx.doc_len[pos] == len(toks)
        assert idx.term_freqs[pos] == {t: toks.count(t) for t in set(toks)}
    assert idx.avgdl == pytest.approx(sum(len(oracles._tokens(t)) for _, t in pages) / len(pages))
    for w in WORDS:
        assert idx.doc_freq.get(w, 0) == sum(1 for _, t in pages if w in oracles._tokens(t))


def test_rebuild_identical():
    pages = random_pages(1, 20)
    assert build_index(pages).corpus_hash() == build_index(pages).corpus_hash()
    a, b = build_index(pages), build_index(pages)
    np.testing.assert_array_equal(a.scores(["alpha", "beta"]), b.scores(["alpha", "beta"]))


def test_empty_corpus_rejected():
    with pytest.raises(ValueError, match="empty"):
        build_index([])


def test_unique_match_ranks_first():
    pages = [(1, "common words here"), (2, "common unique words"), (3, "common words")]
    hits = search(build_index(pages), ["unique"])
    assert [h.page_id for h in hits] == [2]


def test_all_stopword_query_empty():
    assert search(build_index(random_pages(2, 10)), ["the", "of and"]) == []


def test_ties_break_by_page_id():
    pages = [(5, "cat dog"), (2, "cat dog"), (9, "cat dog")] + [(i, "bird fish") for i in (1, 3, 4, 6, 7, 8)]
    hits = search(build_index(pages), ["cat"])
    assert [h.page_id for h in hits] == [2, 5, 9]
    assert hits[0].score == hits[1].score == hits[2].score


def test_search_matches_brute_force(kernel, monkeypatch):
    monkeypatch.setattr(retrieval.kernels, "bm25_accumulate", kernel.bm25_accumulate)
    pages = random_pages(11)
    idx = build_index(pages)
    rng = random.Random(3)
    for _ in range(20):
        kws = rng.sample(WORDS, rng.randint(1, 3))
        got = [(h.page_id, h.score) for h in search(idx, kws, 10)]
        want = oracles.bm25_rank(pages, kws, 10)
        assert [p for p, _ in got] == [p for p, _ in want]
        np.testing.assert_allclose([s for _, s in got], [s for _, s in want], rtol=1e-12)


def test_per_keyword_mode_takes_best_score():
    pages = random_pages(4, 30)
    idx = build_index(pages)
    hits = search(idx, ["alpha", "beta"], top_k=30, per_keyword=True)
    best = np.maximum(idx.scores(["alpha"]), idx.scores(["beta"]))
    for h in hits:
        assert h.score == pytest.approx(best[idx.page_ids.index(h.page_id)])


def test_snippet_centred_on_best_term():
    text = "filler " * 60 + "zebra" + " filler" * 60
    hit = search(build_index([(1, text), (2, "other page"), (3, "more text")]), ["zebra"])[0]
    assert len(hit.snippet) == retrieval.SNIPPET_CHARS
    assert "zebra" in hit.snippet


def test_top_k_validation():
    with pytest.raises(ValueError):
        search(build_index([(1, "x")]), ["x"], top_k=0)


def test_save_load(tmp_path):
    idx = build_index(random_pages(8, 10))
    idx.save(tmp_path / "i.pkl")
    back = retrieval.Bm25Index.load(tmp_path / "i.pkl", idx.corpus_hash())
    assert back.doc_freq == idx.doc_freq
    with pytest.raises(ValueError, match="does not match"):
        retrieval.Bm25Index.load(tmp_path / "i.pkl", "nope")


def test_toc_extraction():
    pages = [(1, "# Report\nintro"), (2, "## Methods\nbody"), (3, "text only"), (4, "### Deep\n# Top")]
    assert build_toc(pages).splitlines() == ["Report ... p.1", "Methods ... p.2", "Deep ... p.4", "Top ... p.4"]


def test_toc_fallback():
    toc = build_toc([(1, "first line\nsecond"), (2, "\n  another page  ")])
    lines = toc.splitlines()
    assert "no headings" in lines[0]
    assert lines[1:] == ["first line ... p.1", "another page ... p.2"]
