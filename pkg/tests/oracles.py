"""Independent reference implementations used to check the package.

Everything here is written from the defining formulas with plain Python
loops (``math``/``fractions``), sharing no code with ``spoagent`` beyond the
stop-word list.
"""
import math
import re
from fractions import Fraction

from spoagent.text import STOPWORDS


def softmax(logits):
    m = max(logits)
    ex = [math.exp(z - m) for z in logits]
    s = sum(ex)
    return [e / s for e in ex]


def kl(p, q):
    return sum(pi * math.log(pi / qi) for pi, qi in zip(p, q) if pi > 0)


def cosine(u, v, clamp=True):
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    c = dot / (nu * nv)
    return max(c, 0.0) if clamp else c


def spo_weights(embeddings, clamp=True, exclude_self=False):
    n = len(embeddings)
    rows = []
    for i in range(n):
        sims = []
        for j in range(n):
            if i == j:
                sims.append(0.0 if exclude_self else 1.0)
            else:
                sims.append(cosine(embeddings[i], embeddings[j], clamp))
        total = sum(sims)
        rows.append([s / total for s in sims])
    return rows


def spo_advantage(rewards, embeddings, clamp=True):
    w = spo_weights(embeddings, clamp)
    return [r - sum(wij * rj for wij, rj in zip(row, rewards)) for r, row in zip(rewards, w)]


def spo_baseline(rewards, embeddings, clamp=True):
    w = spo_weights(embeddings, clamp)
    return [sum(wij * rj for wij, rj in zip(row, rewards)) for row in w]


def grpo_advantage(rewards):
    mean = sum(rewards) / len(rewards)
    return [r - mean for r in rewards]


def mse(a, b):
    return sum((x - y) ** 2 for x, y in zip(a, b)) / len(a)


def recall(read, evidence):
    """|read ∩ evidence| / |evidence| as an exact fraction."""
    evidence = set(evidence)
    if not evidence:
        return Fraction(1)
    return Fraction(len(set(read) & evidence), len(evidence))


def clipped_term(ratio, adv, eps):
    return min(ratio * adv, min(max(ratio, 1 - eps), 1 + eps) * adv)


# ---------------------------------------------------------------------------
# BM25 by brute force

_WORD = re.compile(r"\w+")


def _tokens(text):
    return [t for t in _WORD.findall(text.lower()) if t not in STOPWORDS]


def bm25_rank(pages, keywords, top_k=10, k1=1.2, b=0.75):
    """Score every page from scratch and return [(page_id, score)]."""
    docs = [(pid, _tokens(text)) for pid, text in pages]
    n = len(docs)
    avgdl = sum(len(toks) for _, toks in docs) / n or 1.0
    query = [t for kw in keywords for t in _tokens(kw)]
    scored = []
    for pid, toks in docs:
        score = 0.0
        for term in query:
            df = sum(1 for _, other in docs if term in other)
            if df == 0:
                continue
            idf = max(0.0, math.log((n - df + 0.5) / (df + 0.5)))
            tf = toks.count(term)
            if tf == 0:
                continue
            score += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(toks) / avgdl))
        if score > 0:
            scored.append((pid, score))
    scored.sort(key=lambda x: (-x[1], x[0]))
    return scored[:top_k]


# ---------------------------------------------------------------------------
# Surrogate loss evaluated directly


def _log_softmax_row(W, x, tau):
    cols = len(W[0])
    z = [sum(x[f] * W[f][k] for f in range(len(x))) / tau for k in range(cols)]
    m = max(z)
    lse = m + math.log(sum(math.exp(v - m) for v in z))
    return [v - lse for v in z]


def surrogate_loss(steps, advantages, lengths, W, W_old, W_ref, eps, beta, tau):
    """Clipped surrogate with mean exact KL over all steps.

    ``steps`` is a list of ``(trajectory index, features, action index)``.
    """
    m = len(advantages)
    surr = 0.0
    kl_sum = 0.0
    for i, x, a in steps:
        lp = _log_softmax_row(W, x, tau)
        lp_old = _log_softmax_row(W_old, x, tau)
        lp_ref = _log_softmax_row(W_ref, x, tau)
        ratio = math.exp(lp[a] - lp_old[a])
        surr += clipped_term(ratio, advantages[i], eps) / lengths[i]
        kl_sum += sum(math.exp(p) * (p - q) for p, q in zip(lp, lp_ref))
    return -surr / m + beta * kl_sum / len(steps)


def central_difference(f, W, h=1e-5):
    """Gradient of scalar ``f`` at nested-list ``W`` by central differences."""
    grad = [[0.0] * len(W[0]) for _ in W]
    for r in range(len(W)):
        for c in range(len(W[0])):
            orig = W[r][c]
            W[r][c] = orig + h
            up = f(W)
            W[r][c] = orig - h
            down = f(W)
            W[r][c] = orig
            grad[r][c] = (up - down) / (2 * h)
    return grad
