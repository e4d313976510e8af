"""Title similarity used to pick multiple-choice distractors."""

from __future__ import annotations

import math
from collections import Counter
from typing import Callable, Protocol, Sequence

from .annotation import normalize_text


class SimilarityProvider(Protocol):
    def score(self, a: str, b: str) -> float: ...


def char_bigrams(s: str) -> Counter:
    s = normalize_text(s)
    if len(s) < 2:
        return Counter([s]) if s else Counter()
    return Counter(s[i : i + 2] for i in range(len(s) - 1))


def _cosine(u: Counter, v: Counter) -> float:
    if not u or not v:
        return 0.0
    dot = sum(c * v[g] for g, c in u.items() if g in v)
    norm = math.sqrt(sum(c * c for c in u.values())) * math.sqrt(sum(c * c for c in v.values()))
    return min(1.0, dot / norm)


class BigramCosine:
    """Cosine similarity of character-bigram count vectors."""

    def score(self, a: str, b: str) -> float:
        if normalize_text(a) == normalize_text(b):
            return 1.0
        return _cosine(char_bigrams(a), char_bigrams(b))


class EmbeddingSimilarity:
    """Cosine similarity over vectors from an external embedding function,
    e.g. a sentence encoder or a remote embedding service. Scores are
    mapped from [-1, 1] onto [0, 1]."""

    def __init__(self, embed: Callable[[str], Sequence[float]]):
        self._embed = embed
        self._cache: dict[str, Sequence[float]] = {}

    def _vec(self, s: str):
        if s not in self._cache:
            self._cache[s] = self._embed(s)
        return self._cache[s]

    def score(self, a: str, b: str) -> float:
        if a == b:
            return 1.0
        u, v = self._vec(a), self._vec(b)
        dot = sum(x * y for x, y in zip(u, v))
        norm = math.sqrt(sum(x * x for x in u)) * math.sqrt(sum(y * y for y in v))
        if norm == 0:
            return 0.0
        return max(0.0, min(1.0, (dot / norm + 1.0) / 2.0))
