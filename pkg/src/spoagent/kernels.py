"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy versions in ``_pykernels`` are used. Set ``SPOAGENT_PURE=1`` to force
the numpy path.
"""
import os

from . import _pykernels as py

if os.environ.get("SPOAGENT_PURE"):
    compiled = None
else:
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None

_impl = compiled if compiled is not None else py
BACKEND = "cython" if compiled is not None else "numpy"

cosine_similarity = _impl.cosine_similarity
row_normalize = _impl.row_normalize
weighted_baseline = _impl.weighted_baseline
spo_baseline = _impl.spo_baseline
bm25_accumulate = _impl.bm25_accumulate


def backends():
    """Return every importable backend module keyed by name."""
    out = {"numpy": py}
    if compiled is not None:
        out["cython"] = compiled
    return out
