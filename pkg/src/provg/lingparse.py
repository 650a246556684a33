"""Deterministic tokenizer and rule-based cue decoupling.

An expression is split into three cue spans: the full token sequence is the
context cue, locative chunks form the spatial cue, and attribute-lexicon
words outside those chunks form the attribute cue.  A chunk starts at a
locative trigger word and extends rightward through determiners, locative
nouns and "of", plus at most one trailing noun phrase; attribute words of a
reference object ("near the blue square") therefore stay inside the spatial
span, since they describe the anchor rather than the target.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

MAX_TOKENS = 16

# Closed vocabulary: every word the scene generator or the rule tables can
# emit, plus a little slack for hand-typed expressions.
_WORDS = [
    "null", "the", "a", "an",
    # colors
    "red", "green", "blue", "yellow",
    # sizes
    "small", "large", "big", "tiny", "little", "huge",
    # categories
    "circle", "square", "triangle", "shape", "object", "thing", "dot", "blob",
    # locative triggers and nouns
    "on", "in", "at", "near", "above", "below", "beside", "next", "between",
    "left", "right", "top", "bottom", "upper", "lower", "center", "middle",
    "corner", "side", "edge", "border", "half", "third", "part", "region", "area",
    # connectives and generic scene nouns
    "of", "to", "image", "picture", "scene", "canvas", "view", "frame",
    "one", "and", "that", "this", "its", "with", "is", "closest", "nearest",
    "located", "lying", "sitting", "placed", "toward", "around", "inside",
    "light", "dark", "bright", "pale",
]

NULL_ID = 0
UNK_ID = len(_WORDS)
VOCAB = {w: i for i, w in enumerate(_WORDS)}
VOCAB_SIZE = len(_WORDS) + 1  # + UNK
UNK_WORD = "unk"

TRIGGERS = {
    "on", "in", "at", "near", "above", "below", "beside", "next", "between",
    "left", "right", "top", "bottom", "upper", "lower", "center", "middle",
    "corner", "side",
}
DETERMINERS = {"the", "a", "an"}
LOCATIVE_NOUNS = {
    "left", "right", "top", "bottom", "upper", "lower", "center", "middle",
    "corner", "side", "edge", "border", "half", "third", "part", "region", "area",
}
COLOR_WORDS = {"red", "green", "blue", "yellow"}
SIZE_WORDS = {"small", "large", "big", "tiny", "little", "huge"}
CATEGORY_NOUNS = {"circle", "square", "triangle", "shape", "object", "thing", "dot", "blob"}
GENERIC_NOUNS = {"image", "picture", "scene", "canvas", "view", "frame"}

ATTRIBUTE_WORDS = COLOR_WORDS | SIZE_WORDS | CATEGORY_NOUNS           # lexicon R2
_NP_ADJECTIVES = COLOR_WORDS | SIZE_WORDS
_NP_NOUNS = CATEGORY_NOUNS | GENERIC_NOUNS

_SPLIT = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class TokenSeq:
    """Lowercased token ids plus the string they came from."""

    tokens: tuple[int, ...]
    raw: str

    def __len__(self) -> int:
        return len(self.tokens)

    def words(self) -> list[str]:
        return [_WORDS[t] if t < len(_WORDS) else UNK_WORD for t in self.tokens]

    def text(self) -> str:
        return " ".join(self.words())


@dataclass(frozen=True)
class LinguisticCues:
    """Decoupled expression: full context plus spatial/attribute sub-spans.

    Index tuples refer to positions in the context sequence; an empty cue is
    padded with the single NULL token and carries no indices.
    """

    context: TokenSeq
    spatial: TokenSeq
    attribute: TokenSeq
    spatial_indices: tuple[int, ...] = field(default=())
    attribute_indices: tuple[int, ...] = field(default=())


def tokenize(expression: str) -> TokenSeq:
    """Lowercase, split on non-alphanumerics, map through the closed
    vocabulary (unknown words -> UNK), truncate at MAX_TOKENS."""
    if not expression or not expression.strip():
        raise ValueError("cannot tokenize an empty expression")
    words = _SPLIT.findall(expression.lower())[:MAX_TOKENS]
    if not words:
        raise ValueError(f"no tokens found in {expression!r}")
    return TokenSeq(tuple(VOCAB.get(w, UNK_ID) for w in words), expression)


def _null_seq() -> TokenSeq:
    return TokenSeq((NULL_ID,), "")


def _chunk_spans(words: list[str]) -> list[tuple[int, int]]:
    """Maximal locative chunks [start, end) found by rule table R1."""
    spans = []
    i, n = 0, len(words)
    while i < n:
        if words[i] not in TRIGGERS:
            i += 1
            continue
        j = i + 1
        while j < n and (words[j] in DETERMINERS or words[j] in LOCATIVE_NOUNS
                         or words[j] == "of"):
            j += 1
        # at most one trailing noun phrase: adjectives then a single noun
        k = j
        while k < n and words[k] in _NP_ADJECTIVES:
            k += 1
        if k < n and words[k] in _NP_NOUNS:
            j = k + 1
        spans.append((i, j))
        i = j
    return spans


def decouple(tokens: TokenSeq) -> LinguisticCues:
    """Split a tokenized expression into context/spatial/attribute cues."""
    words = tokens.words()
    spans = _chunk_spans(words)
    in_chunk = [False] * len(words)
    for lo, hi in spans:
        for idx in range(lo, hi):
            in_chunk[idx] = True

    spatial_idx = tuple(i for i in range(len(words)) if in_chunk[i])
    attribute_idx = tuple(i for i in range(len(words))
                          if not in_chunk[i] and words[i] in ATTRIBUTE_WORDS)

    def sub_seq(indices: tuple[int, ...]) -> TokenSeq:
        if not indices:
            return _null_seq()
        return TokenSeq(tuple(tokens.tokens[i] for i in indices),
                        " ".join(words[i] for i in indices))

    return LinguisticCues(
        context=tokens,
        spatial=sub_seq(spatial_idx),
        attribute=sub_seq(attribute_idx),
        spatial_indices=spatial_idx,
        attribute_indices=attribute_idx,
    )


def decouple_expression(expression: str) -> LinguisticCues:
    return decouple(tokenize(expression))
