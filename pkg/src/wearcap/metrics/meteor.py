"""METEOR with exact and Porter-stem unigram matching (no paraphrase tables)."""
import math
from functools import lru_cache

from nltk.stem.porter import PorterStemmer

from .text import check_pairs

_stemmer = PorterStemmer()


@lru_cache(maxsize=65536)
def stem(word: str) -> str:
    return _stemmer.stem(word)


def _match_sets(cand, ref):
    rs = [stem(w) for w in ref]
    out = []
    for w in cand:
        s = stem(w)
        out.append([j for j, r in enumerate(ref) if r == w or rs[j] == s])
    return out


def align(cand, ref):
    """Alignment maximising matches, then minimising chunks.

    Returns (matches, chunks).  Depth-first search with bound pruning; the
    candidate lists are short enough that this stays small.
    """
    options = _match_sets(cand, ref)
    n = len(cand)
    # suffix upper bound on matches still obtainable
    avail = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        avail[i] = avail[i + 1] + (1 if options[i] else 0)
    best = [0, 0]
    used = [False] * len(ref)

    def dfs(i, matches, chunks, prev_j):
        if matches + avail[i] < best[0]:
            return
        if matches + avail[i] == best[0] and best[0] > 0 and chunks >= best[1]:
            return
        if i == n:
            if matches > best[0] or (matches == best[0] and chunks < best[1]):
                best[0], best[1] = matches, chunks
            return
        opts = options[i]
        if prev_j is not None and prev_j + 1 in opts:
            opts = [prev_j + 1] + [j for j in opts if j != prev_j + 1]
        for j in opts:
            if used[j]:
                continue
            used[j] = True
            dfs(i + 1, matches + 1, chunks + (0 if prev_j is not None and j == prev_j + 1 else 1), j)
            used[j] = False
        dfs(i + 1, matches, chunks, None)

    dfs(0, 0, 0, None)
    return best[0], best[1]


def meteor_item(cand, refs):
    best = 0.0
    for ref in refs:
        if not cand or not ref:
            continue
        m, chunks = align(cand, ref)
        if m == 0:
            continue
        p, r = m / len(cand), m / len(ref)
        fmean = 10 * p * r / (r + 9 * p)
        pen = 0.5 * (chunks / m) ** 3
        best = max(best, fmean * (1 - pen))
    return best


def meteor_lite(pairs):
    """Corpus mean METEOR (0-1), best reference per item."""
    check_pairs(pairs)
    return math.fsum(meteor_item(c, r) for c, r in pairs) / len(pairs)
