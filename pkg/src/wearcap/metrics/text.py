import string

_STRIP = str.maketrans("", "", string.punctuation)


def tokenize_caption(text: str) -> list[str]:
    """Lowercase, drop ASCII punctuation, split on whitespace."""
    return text.lower().translate(_STRIP).split()


def ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def ngram_counts(tokens, n) -> dict:
    counts: dict = {}
    for g in ngrams(tokens, n):
        counts[g] = counts.get(g, 0) + 1
    return counts


class MetricError(ValueError):
    pass


def check_pairs(pairs, min_items=1):
    if len(pairs) < min_items:
        raise MetricError(f"need at least {min_items} caption pairs, got {len(pairs)}")
    for cand, refs in pairs:
        if not refs:
            raise MetricError("every item needs at least one reference")
