from .core import (
    Adam,
    NumericsError,
    Parameter,
    Rng,
    adam_step,
    as_array,
    gaussian_sample,
    glorot,
    grad_check,
    hash_arrays,
    log_softmax,
    softmax,
)
from .layers import (
    DecoderBlock,
    Dropout,
    EncoderBlock,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    sinusoidal_table,
)

__all__ = [
    "Adam", "NumericsError", "Parameter", "Rng", "adam_step", "as_array",
    "gaussian_sample", "glorot", "grad_check", "hash_arrays", "log_softmax",
    "softmax", "DecoderBlock", "Dropout", "EncoderBlock", "FeedForward",
    "LayerNorm", "Linear", "Module", "MultiHeadAttention", "sinusoidal_table",
]
