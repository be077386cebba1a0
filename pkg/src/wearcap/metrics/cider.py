"""CIDEr-D style consensus score: TF-IDF n-gram vectors, clipped cosine,
Gaussian length penalty, x10."""
import math

from .text import check_pairs, ngram_counts


def _vec(counts, df, log_n):
    vec = {g: k * (log_n - math.log(max(1.0, df.get(g, 0)))) for g, k in counts.items()}
    norm = math.sqrt(math.fsum(v * v for v in vec.values()))
    return vec, norm


def _sim(vc, nc, vr, nr, lc, lr, sigma):
    if nc == 0 or nr == 0:
        return 0.0
    dot = math.fsum(min(v, vr[g]) * vr[g] for g, v in vc.items() if g in vr)
    return dot / (nc * nr) * math.exp(-((lc - lr) ** 2) / (2 * sigma ** 2))


def cider_items(pairs, max_n=4, sigma=6.0):
    check_pairs(pairs, min_items=2)
    N = len(pairs)
    log_n = math.log(float(N))
    df = {}
    for _, refs in pairs:
        seen = set()
        for ref in refs:
            for n in range(1, max_n + 1):
                seen.update(ngram_counts(ref, n))
        for g in seen:
            df[g] = df.get(g, 0) + 1
    scores = []
    for cand, refs in pairs:
        per_n = []
        for n in range(1, max_n + 1):
            vc, nc = _vec(ngram_counts(cand, n), df, log_n)
            sims = []
            for ref in refs:
                vr, nr = _vec(ngram_counts(ref, n), df, log_n)
                sims.append(_sim(vc, nc, vr, nr, len(cand), len(ref), sigma))
            per_n.append(math.fsum(sims) / len(refs))
        scores.append(10.0 * math.fsum(per_n) / max_n)
    return scores


def cider(pairs, max_n=4, sigma=6.0):
    """Corpus CIDEr (mean over items, conventional x10 scale)."""
    s = cider_items(pairs, max_n, sigma)
    return math.fsum(s) / len(s)
