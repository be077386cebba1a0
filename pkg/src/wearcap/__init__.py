"""Captioning of wearable-sensor recordings.

Subpackages:
    numerics  dense math, manual backprop layers, Adam, seeded RNG
    ingest    sensor stream parsing, resampling, preprocessing, splits
    encoder   per-modality transformer encoder with late fusion
    bridge    query transformer, small causal decoder, two-stage training
    metrics   BLEU, ROUGE-L, METEOR-lite, CIDEr
    cli       config, checkpoints, pipeline and experiment harness
"""

__version__ = "0.1.0"
