"""Q-former bridge, prompt templates, toy decoder and the two training stages."""
from .captions import activity_phrase, ordered_caption, rephrase_label
from .decoder import DecoderConfig, ToyDecoder, generation_loss, greedy_decode, sequence_loss
from .prompts import PromptError, TokenSequence, build_prompt, load_templates, prompt_text
from .qformer import QFormer, QFormerConfig, assemble_temporal, inject_noise, qformer_forward
from .train import (
    INSTRUCT_QUESTIONS,
    BridgeSettings,
    FreezeError,
    LMSettings,
    Run,
    answer_question,
    build_vocab,
    caption_segments,
    instruct_tune_stage2,
    lm_corpus,
    pretrain_lm,
    train_stage1,
)
from .vocab import SLOT, Vocabulary, VocabularyError

__all__ = [
    "activity_phrase", "ordered_caption", "rephrase_label", "DecoderConfig", "ToyDecoder",
    "generation_loss", "greedy_decode", "sequence_loss", "PromptError", "TokenSequence",
    "build_prompt", "load_templates", "prompt_text", "QFormer", "QFormerConfig",
    "assemble_temporal", "inject_noise", "qformer_forward", "INSTRUCT_QUESTIONS",
    "BridgeSettings", "FreezeError", "LMSettings", "Run", "answer_question", "build_vocab",
    "caption_segments", "instruct_tune_stage2", "lm_corpus", "pretrain_lm", "train_stage1",
    "SLOT", "Vocabulary", "VocabularyError",
]
