"""Brute-force reference implementations of the caption metrics.

Written directly from the metric definitions without importing anything
from wearcap, so agreement with the package is meaningful.  Speed is not a
goal: LCS is a full recursion with memoisation, METEOR enumerates every
one-to-one alignment, CIDEr builds explicit dense vectors.
"""
import itertools
import math
from collections import Counter
from functools import lru_cache

from nltk.stem.porter import PorterStemmer

_porter = PorterStemmer()


def grams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_oracle(pairs, max_n=4):
    c_len = sum(len(c) for c, _ in pairs)
    r_len = 0
    for c, refs in pairs:
        lens = sorted(len(r) for r in refs)
        r_len += min(lens, key=lambda L: (abs(L - len(c)), L))
    out = []
    for N in range(1, max_n + 1):
        precisions = []
        for n in range(1, N + 1):
            num = den = 0
            for c, refs in pairs:
                cg = grams(c, n)
                best = Counter()
                for r in refs:
                    best |= grams(r, n)
                num += sum((cg & best).values())
                den += sum(cg.values())
            precisions.append(num / den if den else 0.0)
        if min(precisions) == 0:
            out.append(0.0)
            continue
        bp = 1.0 if c_len > r_len else math.exp(1 - r_len / c_len)
        out.append(bp * math.prod(precisions) ** (1.0 / N))
    return out


def lcs_oracle(a, b):
    @lru_cache(maxsize=None)
    def rec(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + rec(i + 1, j + 1)
        return max(rec(i + 1, j), rec(i, j + 1))
    return rec(0, 0)


def rouge_oracle(pairs, beta=1.2):
    total = 0.0
    for c, refs in pairs:
        fs = [0.0]
        for r in refs:
            m = lcs_oracle(tuple(c), tuple(r))
            if m:
                p, rc = m / len(c), m / len(r)
                fs.append((1 + beta * beta) * p * rc / (rc + beta * beta * p))
        total += max(fs)
    return total / len(pairs)


def _alignments(cand, ref):
    options = []
    for w in cand:
        ok = [j for j, r in enumerate(ref) if r == w or _porter.stem(r) == _porter.stem(w)]
        options.append([None] + ok)
    for choice in itertools.product(*options):
        used = [j for j in choice if j is not None]
        if len(used) == len(set(used)):
            yield choice


def _chunks(choice):
    chunks = 0
    for i, j in enumerate(choice):
        if j is None:
            continue
        if i > 0 and choice[i - 1] is not None and choice[i - 1] + 1 == j:
            continue
        chunks += 1
    return chunks


def meteor_oracle(pairs):
    total = 0.0
    for c, refs in pairs:
        best = 0.0
        for r in refs:
            if not c or not r:
                continue
            m_best, ch_best = 0, 0
            for choice in _alignments(c, r):
                m = sum(j is not None for j in choice)
                ch = _chunks(choice)
                if m > m_best or (m == m_best and ch < ch_best):
                    m_best, ch_best = m, ch
            if m_best == 0:
                continue
            p, rc = m_best / len(c), m_best / len(r)
            f = p * rc / (0.9 * p + 0.1 * rc)
            best = max(best, f * (1 - 0.5 * (ch_best / m_best) ** 3))
        total += best
    return total / len(pairs)


def cider_oracle(pairs, max_n=4, sigma=6.0):
    N = len(pairs)
    scores = []
    for c, refs in pairs:
        score = 0.0
        for n in range(1, max_n + 1):
            vocab = sorted(set(grams(c, n)) | {g for r in refs for g in grams(r, n)})

            def df(g):
                return sum(any(g in grams(r, n) for r in rs) for _, rs in pairs)

            def vec(tokens):
                cnt = grams(tokens, n)
                return [cnt[g] * math.log(N / max(1, df(g))) for g in vocab]

            vc = vec(c)
            nc = math.sqrt(sum(x * x for x in vc))
            sims = 0.0
            for r in refs:
                vr = vec(r)
                nr = math.sqrt(sum(x * x for x in vr))
                if nc and nr:
                    dot = sum(min(x, y) * y for x, y in zip(vc, vr))
                    sims += dot / (nc * nr) * math.exp(-((len(c) - len(r)) ** 2) / (2 * sigma * sigma))
            score += sims / len(refs)
        scores.append(10 * score / max_n)
    return sum(scores) / N
