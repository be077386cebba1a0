"""Word-level vocabulary for the toy decoder."""
from __future__ import annotations

import re

PAD, BOS, EOS, UNK, SENS = "<pad>", "<bos>", "<eos>", "<unk>", "<sens>"
SPECIALS = (PAD, BOS, EOS, UNK, SENS)
SLOT = -1  # id placeholder for a sensor-embedding position

_TOKEN_RE = re.compile(r"\[/?INST\]|<</?SYS>>|<[a-z]+>|\w+|[^\w\s]")
_NO_SPACE_BEFORE = set(".,:;!?")


class VocabularyError(KeyError):
    pass


def split_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


class Vocabulary:
    def __init__(self, tokens):
        self.itos = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate vocabulary tokens")

    @classmethod
    def build(cls, texts):
        words = sorted({w for t in texts for w in split_words(t)} - set(SPECIALS))
        return cls(words)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    @property
    def pad_id(self):
        return self.stoi[PAD]

    @property
    def bos_id(self):
        return self.stoi[BOS]

    @property
    def eos_id(self):
        return self.stoi[EOS]

    @property
    def sens_id(self):
        return self.stoi[SENS]

    def encode(self, text: str) -> list[int]:
        out = []
        for w in split_words(text):
            if w not in self.stoi:
                raise VocabularyError(f"out-of-vocabulary token {w!r}")
            out.append(self.stoi[w])
        return out

    def decode(self, ids) -> str:
        words = []
        for i in ids:
            tok = self.itos[int(i)]
            if tok in (PAD, BOS, EOS):
                continue
            words.append(tok)
        text = ""
        for w in words:
            if text and w not in _NO_SPACE_BEFORE:
                text += " "
            text += w
        return text

    def to_json(self):
        return list(self.itos)

    @classmethod
    def from_json(cls, itos):
        if tuple(itos[:len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary does not start with the special tokens")
        return cls(itos[len(SPECIALS):])
