"""Byte-pair-encoding subword codec.

Trains greedy frequency merges over word-internal character sequences with
an explicit end-of-word symbol, then encodes token sequences to dense ids
and decodes them back. The model round-trips any text over its training
character set; unknown characters collapse to UNK and are dropped on
decode.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Final, Iterable, Sequence

from .textops import TokenSeq

WORD_END: Final = "</w>"

PAD, BOS, EOS, UNK, SEP = "<pad>", "<s>", "</s>", "<unk>", "<sep>"
SPECIALS: Final = (PAD, BOS, EOS, UNK, SEP)
PAD_ID: Final = 0
BOS_ID: Final = 1
EOS_ID: Final = 2
UNK_ID: Final = 3
SEP_ID: Final = 4

_SPECIAL_IDS: Final = frozenset(range(len(SPECIALS)))


def _word_symbols(word: str) -> tuple[str, ...]:
    return tuple(word) + (WORD_END,)


@dataclass(frozen=True)
class BpeModel:
    """Ordered merges plus the dense symbol vocabulary they induce.

    Ids 0..4 are the specials, then the sorted initial alphabet, then merge
    outputs in priority order. Rebuilding the table from (alphabet, merges)
    is deterministic, which is what the text model file relies on.
    """

    merges: tuple[tuple[str, str], ...]
    alphabet: tuple[str, ...]
    vocab: dict[str, int]
    _cache: dict[str, tuple[str, ...]] = field(
        default_factory=dict, repr=False, compare=False
    )

    def __len__(self) -> int:
        return len(self.vocab)

    @classmethod
    def from_parts(
        cls, alphabet: Iterable[str], merges: Iterable[tuple[str, str]]
    ) -> "BpeModel":
        alphabet = tuple(sorted(set(alphabet)))
        merges = tuple((a, b) for a, b in merges)
        vocab: dict[str, int] = {sym: i for i, sym in enumerate(SPECIALS)}
        for sym in alphabet:
            if sym in vocab:
                raise ValueError(f"alphabet symbol collides with a special: {sym!r}")
            vocab[sym] = len(vocab)
        for a, b in merges:
            vocab.setdefault(a + b, len(vocab))
        return cls(merges, alphabet, vocab)

    def _encode_word(self, word: str) -> tuple[str, ...]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        symbols = list(_word_symbols(word))
        for a, b in self.merges:
            i = 0
            while i < len(symbols) - 1:
                if symbols[i] == a and symbols[i + 1] == b:
                    symbols[i : i + 2] = [a + b]
                else:
                    i += 1
        out = tuple(symbols)
        self._cache[word] = out
        return out

    def encode(self, tokens: Iterable[str]) -> tuple[int, ...]:
        """Subword ids for `tokens`; no BOS/EOS attached (callers do that).

        Characters outside the training alphabet become UNK.
        """
        ids: list[int] = []
        unk = self.vocab[UNK]
        for tok in tokens:
            for sym in self._encode_word(tok):
                ids.append(self.vocab.get(sym, unk))
        return tuple(ids)

    def decode(self, ids: Sequence[int]) -> TokenSeq:
        """Tokens back from ids; specials are stripped, UNK leaves a gap."""
        symbols = {i: s for s, i in self.vocab.items()}
        words: list[str] = []
        buf = ""
        for i in ids:
            if i not in symbols:
                raise ValueError(f"id {i} is outside the vocabulary")
            if i in _SPECIAL_IDS:
                continue
            sym = symbols[i]
            if sym.endswith(WORD_END):
                word = buf + sym[: -len(WORD_END)]
                if word:
                    words.append(word)
                buf = ""
            else:
                buf += sym
        if buf:
            words.append(buf)
        return tuple(words)

    def to_text(self) -> str:
        """Model file body: header line (version, vocab size, alphabet), then
        one merge pair per line in priority order."""
        lines = [f"bpe-v1\t{len(self.vocab)}\t{json.dumps(list(self.alphabet))}"]
        lines += [f"{a} {b}" for a, b in self.merges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "BpeModel":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("bpe-v1\t"):
            raise ValueError("not a bpe-v1 model file")
        _, size_s, alpha_s = lines[0].split("\t", 2)
        merges = []
        for ln in lines[1:]:
            if not ln.strip():
                continue
            a, b = ln.split(" ")
            merges.append((a, b))
        model = cls.from_parts(json.loads(alpha_s), merges)
        if len(model.vocab) != int(size_s):
            raise ValueError(
                f"header says {size_s} symbols, rebuilt {len(model.vocab)}"
            )
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), "utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BpeModel":
        try:
            return cls.from_text(Path(path).read_text("utf-8"))
        except ValueError as exc:
            raise ValueError(f"{path}: {exc}") from None


def train_bpe(corpus: Iterable[TokenSeq], vocab_size: int) -> BpeModel:
    """Learn merges by repeatedly fusing the most frequent adjacent symbol
    pair (ties broken lexicographically) until the vocabulary reaches
    `vocab_size` or no pair occurs at least twice.
    """
    word_freq: Counter = Counter()
    for seq in corpus:
        word_freq.update(seq)
    if not word_freq:
        raise ValueError("cannot train BPE on an empty corpus")

    alphabet = sorted({ch for w in word_freq for ch in w} | {WORD_END})
    floor = len(SPECIALS) + len(alphabet)
    if vocab_size <= floor:
        raise ValueError(
            f"vocab_size {vocab_size} cannot cover {len(alphabet)} alphabet symbols "
            f"plus {len(SPECIALS)} specials"
        )

    words: dict[str, tuple[str, ...]] = {w: _word_symbols(w) for w in word_freq}
    merges: list[tuple[str, str]] = []
    produced: set[str] = set()
    vocab_count = floor
    while vocab_count < vocab_size:
        pairs: Counter = Counter()
        for w, symbols in words.items():
            f = word_freq[w]
            for pair in zip(symbols, symbols[1:]):
                pairs[pair] += f
        if not pairs:
            break
        best_freq = max(pairs.values())
        if best_freq < 2:
            break
        best = min(p for p, c in pairs.items() if c == best_freq)
        merged = best[0] + best[1]
        if merged in SPECIALS:  # cannot happen for tokenizer output; guard anyway
            break
        merges.append(best)
        for w, symbols in words.items():
            if best[0] not in symbols:
                continue
            out = list(symbols)
            i = 0
            while i < len(out) - 1:
                if out[i] == best[0] and out[i + 1] == best[1]:
                    out[i : i + 2] = [merged]
                else:
                    i += 1
            words[w] = tuple(out)
        if merged not in produced:
            produced.add(merged)
            vocab_count += 1
    return BpeModel.from_parts(alphabet, merges)
