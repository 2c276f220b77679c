"""Numpy implementations of the numeric kernels.

These are the reference fallback for ``_ckernels``; both modules expose the
same functions with the same argument conventions.
"""
import numpy as np


def cosine_similarity(emb, clamp=True):
    emb = np.asarray(emb, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", emb, emb))
    unit = emb / norms[:, None]
    sim = unit @ unit.T
    # symmetric by construction, exact unit diagonal
    sim = 0.5 * (sim + sim.T)
    np.fill_diagonal(sim, 1.0)
    np.clip(sim, 0.0 if clamp else -1.0, 1.0, out=sim)
    return sim


def row_normalize(mat):
    mat = np.asarray(mat, dtype=np.float64)
    return mat / mat.sum(axis=1, keepdims=True)


def weighted_baseline(weights, rewards):
    return np.asarray(weights, dtype=np.float64) @ np.asarray(rewards, dtype=np.float64)


def spo_baseline(emb, rewards, clamp=True):
    """Fused cosine -> row-normalise -> weighted reward average."""
    return weighted_baseline(row_normalize(cosine_similarity(emb, clamp)), rewards)


def bm25_accumulate(scores, page_idx, tf, doc_len, idf, k1, b, avgdl):
    """Add one query term's BM25 contribution to ``scores`` in place."""
    if idf == 0.0 or len(page_idx) == 0:
        return scores
    dl = doc_len[page_idx]
    norm = k1 * (1.0 - b + b * dl / avgdl)
    scores[page_idx] += idf * tf * (k1 + 1.0) / (tf + norm)
    return scores
