"""Text normalization, vocabulary handling, and word-level tokenization."""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
UNK_TOKEN = "<unk>"
PAD_TOKEN = "<pad>"

SPECIAL_TOKENS = (BOS_TOKEN, EOS_TOKEN, UNK_TOKEN, PAD_TOKEN)

BOS_ID = 0
EOS_ID = 1
UNK_ID = 2
PAD_ID = 3


def normalize(text: str) -> str:
    """Lowercase, strip punctuation, and collapse whitespace.

    Characters whose Unicode category starts with "P" are deleted outright
    (so "What's" becomes "whats", not "what s"). Runs of whitespace collapse
    to single spaces and the result is stripped.
    """
    lowered = text.lower()
    kept = [ch for ch in lowered if not unicodedata.category(ch).startswith("P")]
    return " ".join("".join(kept).split())


def words(text: str) -> list[str]:
    """Normalized surface words of ``text``; the shared token unit for metrics."""
    return normalize(text).split()


@dataclass(frozen=True)
class Vocabulary:
    """Bidirectional token/id mapping with fixed special tokens at ids 0..3."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) < 5:
            raise ValueError("vocabulary needs the 4 special tokens plus at least one word")
        if tuple(self.tokens[:4]) != SPECIAL_TOKENS:
            raise ValueError(f"first four tokens must be {SPECIAL_TOKENS}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def token_id(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def tokenize(self, text: str, add_markers: bool = False) -> list[int]:
        """Map text to token ids; unknown words map to the <unk> id.

        With ``add_markers`` the sequence is wrapped as <bos> ... <eos>.
        """
        ids = [self.token_id(w) for w in words(text)]
        if add_markers:
            return [BOS_ID] + ids + [EOS_ID]
        return ids

    def detokenize(self, ids: Iterable[int]) -> str:
        """Inverse of tokenize up to normalization; marker tokens are dropped."""
        out = []
        for i in ids:
            if i in (BOS_ID, EOS_ID, PAD_ID):
                continue
            if not 0 <= i < len(self.tokens):
                raise ValueError(f"token id {i} out of range for vocabulary of {len(self.tokens)}")
            out.append(self.tokens[i])
        return " ".join(out)


def build_vocabulary(corpus: Iterable[str], min_freq: int = 1) -> Vocabulary:
    """Count normalized words over ``corpus`` and keep those with freq >= min_freq.

    Ids are assigned by descending frequency, ties broken lexicographically,
    starting after the four special tokens.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts = Counter()
    seen_any = False
    for sentence in corpus:
        seen_any = True
        counts.update(words(sentence))
    if not seen_any:
        raise ValueError("empty corpus")
    kept = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )
    if not kept:
        raise ValueError(f"no token reaches min_freq={min_freq}")
    return Vocabulary(SPECIAL_TOKENS + tuple(kept))


def save_vocabulary(vocab: Vocabulary, path: str) -> None:
    """One token per line; the line number is the token id."""
    with open(path, "w", encoding="utf-8") as f:
        for t in vocab.tokens:
            f.write(t + "\n")


def load_vocabulary(path: str) -> Vocabulary:
    with open(path, encoding="utf-8") as f:
        tokens = [line.rstrip("\n") for line in f]
    while tokens and tokens[-1] == "":
        tokens.pop()
    if len(tokens) < 5:
        raise ValueError(f"vocabulary file {path} has {len(tokens)} tokens, need >= 5")
    return Vocabulary(tuple(tokens))
