import math

from ..kernels import lcs
from .text import check_pairs


def _ids(a, b):
    table: dict = {}
    return ([table.setdefault(w, len(table)) for w in a],
            [table.setdefault(w, len(table)) for w in b])


def rouge_l_item(cand, refs, beta=1.2):
    """Best LCS F-measure of the candidate against any reference (0-1)."""
    best = 0.0
    for ref in refs:
        if not cand or not ref:
            continue
        a, b = _ids(cand, ref)
        m = lcs(a, b)
        if m == 0:
            continue
        p, r = m / len(cand), m / len(ref)
        f = (1 + beta ** 2) * p * r / (r + beta ** 2 * p)
        best = max(best, f)
    return best


def rouge_l(pairs, beta=1.2):
    """Corpus mean of per-item ROUGE-L F on a 0-1 scale."""
    check_pairs(pairs)
    if beta <= 0:
        raise ValueError("beta must be positive")
    return math.fsum(rouge_l_item(c, r, beta) for c, r in pairs) / len(pairs)
