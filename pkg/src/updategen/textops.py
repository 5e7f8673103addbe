"""Deterministic text primitives shared by every component.

Tokenization, sentence segmentation, unigram statistics, and the two
token-level ratios (content overlap, repetition) are all defined here so
that models, the dataset pipeline, and the metrics agree on what a token
and a sentence are. Everything is pure and safe to share across threads.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping

TokenSeq = tuple[str, ...]

# A token is a run of word characters, a clitic (apostrophe glued to the
# preceding word, as in "it" + "'s"), or a single non-word character.
_TOKEN_RE = re.compile(r"\w+|(?<=\w)'\w+|[^\w\s]")

_TERMINAL_RE = re.compile(r"[.!?]+")
_SENT_OPENERS = set("\"'“‘([{")


def tokenize(text: str) -> TokenSeq:
    """Lowercase and split `text` into word, clitic, and punctuation tokens."""
    return tuple(_TOKEN_RE.findall(text.lower()))


def _opens_sentence(ch: str) -> bool:
    return ch.isupper() or ch.isdigit() or ch in _SENT_OPENERS


@dataclass(frozen=True)
class SentenceSeq:
    """Sentence segmentation of a source string.

    `char_spans[i]` is the half-open [start, end) span of sentence i in
    `source`; spans are strictly increasing and exclude the inter-sentence
    whitespace. `sentences[i]` holds the tokens of that span.
    """

    sentences: tuple[TokenSeq, ...]
    char_spans: tuple[tuple[int, int], ...]
    source: str = ""

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def texts(self) -> tuple[str, ...]:
        return tuple(self.source[a:b] for a, b in self.char_spans)

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "SentenceSeq":
        """Build a SentenceSeq from already-segmented sentence strings."""
        texts = [t.strip() for t in texts]
        source = " ".join(texts)
        spans = []
        pos = 0
        for t in texts:
            spans.append((pos, pos + len(t)))
            pos += len(t) + 1
        return cls(
            sentences=tuple(tokenize(t) for t in texts),
            char_spans=tuple(spans),
            source=source,
        )


def split_sentences(text: str) -> SentenceSeq:
    """Segment `text` on terminal punctuation followed by whitespace and an
    upper-case, digit, or opening character.

    Never splits inside a token (a boundary requires whitespace), so
    abbreviations followed by lowercase text stay glued to their sentence.
    """
    n = len(text)
    start = 0
    while start < n and text[start].isspace():
        start += 1
    if start == n:
        return SentenceSeq((), (), text)

    spans: list[tuple[int, int]] = []
    for m in _TERMINAL_RE.finditer(text):
        end = m.end()
        if end <= start:
            continue
        j = end
        while j < n and text[j].isspace():
            j += 1
        if j == end:  # punctuation not followed by whitespace
            continue
        if j < n and _opens_sentence(text[j]):
            spans.append((start, end))
            start = j

    # trailing sentence, if any non-space text remains
    tail_end = n
    while tail_end > start and text[tail_end - 1].isspace():
        tail_end -= 1
    if tail_end > start:
        spans.append((start, tail_end))

    return SentenceSeq(
        sentences=tuple(tokenize(text[a:b]) for a, b in spans),
        char_spans=tuple(spans),
        source=text,
    )


def square_discount(p: float) -> float:
    """Default probability discount: p -> p**2.

    Squaring shrinks every probability in (0, 1), which is what makes the
    select-then-discount loop avoid re-picking already-covered words.
    """
    return p * p


@dataclass(frozen=True)
class UnigramDistribution:
    """Token -> probability table from relative frequency estimation.

    Construction normalizes to sum 1; `discounted` copies feed the
    frequency-based selectors and intentionally do not renormalize.
    """

    probs: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def from_counts(cls, counts: Mapping[str, int]) -> "UnigramDistribution":
        total = sum(counts.values())
        if total <= 0:
            raise ValueError("cannot estimate unigram distribution from zero tokens")
        return cls({tok: c / total for tok, c in counts.items()})

    @classmethod
    def from_token_seqs(cls, seqs: Iterable[Iterable[str]]) -> "UnigramDistribution":
        counts: Counter = Counter()
        for seq in seqs:
            counts.update(seq)
        return cls.from_counts(counts)

    def prob(self, token: str) -> float:
        return self.probs.get(token, 0.0)

    def total(self) -> float:
        return sum(self.probs.values())

    def discounted(
        self,
        tokens: Iterable[str],
        discount: Callable[[float], float] = square_discount,
    ) -> "UnigramDistribution":
        """Return a copy with `discount` applied once to each distinct token
        of `tokens` that is present in the table."""
        probs = dict(self.probs)
        for tok in set(tokens):
            if tok in probs:
                probs[tok] = discount(probs[tok])
        return UnigramDistribution(probs)


def unigram_distribution(sentences: SentenceSeq) -> UnigramDistribution:
    """Relative-frequency unigram table over all tokens of `sentences`."""
    return UnigramDistribution.from_token_seqs(sentences.sentences)


def content_overlap(a: Iterable[str], b: Iterable[str], stopwords: frozenset[str] | set[str]) -> float:
    """Fraction of a's distinct non-stopword tokens that also occur in b.

    Returns 0.0 when nothing of a survives stopword removal.
    """
    ua = set(a) - set(stopwords)
    if not ua:
        return 0.0
    ub = set(b) - set(stopwords)
    return len(ua & ub) / len(ua)


def repetition_ratio(tokens: Iterable[str]) -> float:
    """Distinct tokens over total tokens; low values flag degenerate repeats."""
    toks = tuple(tokens)
    if not toks:
        raise ValueError("repetition ratio is undefined for an empty sequence")
    return len(set(toks)) / len(toks)


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """Load a stopword list (one token per line, UTF-8).

    With no path, loads the English list bundled with the package.
    """
    if path is None:
        text = resources.files("updategen").joinpath("data/stopwords.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())
