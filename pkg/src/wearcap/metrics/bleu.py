"""Corpus BLEU with clipped n-gram precision and closest-reference brevity penalty."""
import math

from .text import check_pairs, ngram_counts

SMOOTH_EPS = 1e-9


def _stats(cand, refs, max_n):
    c = len(cand)
    r = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    clipped, guess = [], []
    for n in range(1, max_n + 1):
        cc = ngram_counts(cand, n)
        ref_max: dict = {}
        for ref in refs:
            for g, k in ngram_counts(ref, n).items():
                ref_max[g] = max(ref_max.get(g, 0), k)
        clipped.append(sum(min(k, ref_max.get(g, 0)) for g, k in cc.items()))
        guess.append(max(0, c - n + 1))
    return c, r, clipped, guess


def _combine(c, r, clipped, guess, smooth):
    scores = []
    logsum = 0.0
    bp = 1.0 if c >= r else (math.exp(1.0 - r / c) if c > 0 else 0.0)
    dead = False
    for k in range(len(clipped)):
        if clipped[k] == 0 or guess[k] == 0:
            if not smooth:
                dead = True
                scores.append(0.0)
                continue
            p = SMOOTH_EPS / max(guess[k], 1)
        else:
            p = clipped[k] / guess[k]
        logsum += math.log(p)
        scores.append(0.0 if dead else bp * math.exp(logsum / (k + 1)))
    return scores


def bleu(pairs, max_n=4):
    """Corpus BLEU-1..max_n on a 0-1 scale.  pairs: [(cand tokens, [ref tokens...])]."""
    check_pairs(pairs)
    if max_n < 1:
        raise ValueError("max_n must be at least 1")
    c_tot = r_tot = 0
    clipped = [0] * max_n
    guess = [0] * max_n
    for cand, refs in pairs:
        c, r, cl, gu = _stats(cand, refs, max_n)
        c_tot += c
        r_tot += r
        for k in range(max_n):
            clipped[k] += cl[k]
            guess[k] += gu[k]
    return _combine(c_tot, r_tot, clipped, guess, smooth=False)


def sentence_bleu(cand, refs, max_n=4):
    """Per-item BLEU with epsilon smoothing of zero precisions."""
    return _combine(*_stats(cand, refs, max_n), smooth=True)
