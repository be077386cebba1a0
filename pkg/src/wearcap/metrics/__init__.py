from .bleu import bleu, sentence_bleu
from .cider import cider, cider_items
from .meteor import align, meteor_item, meteor_lite, stem
from .report import EvalReport, evaluate_corpus, load_candidates, load_references
from .rouge import rouge_l, rouge_l_item
from .text import MetricError, ngram_counts, tokenize_caption

__all__ = [
    "bleu", "sentence_bleu", "cider", "cider_items", "align", "meteor_item", "meteor_lite",
    "stem", "EvalReport", "evaluate_corpus", "load_candidates", "load_references", "rouge_l",
    "rouge_l_item", "MetricError", "ngram_counts", "tokenize_caption",
]
