"""Extractive update selection.

Four selectors over a document's sentences: frequency-based Sum-Basic, its
context-informed variant (CISB), model-likelihood ranking for trained
seq2seq variants, and the ROUGE-L oracle upper bound. All tie-breaks go to
the lowest sentence index, so every selector is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Literal, Sequence

from .metrics import rouge_l_f1
from .textops import (
    SentenceSeq,
    TokenSeq,
    UnigramDistribution,
    square_discount,
    unigram_distribution,
)

if TYPE_CHECKING:
    from .seq2seq import Seq2SeqModel

Method = Literal["SB", "CISB", "EXTRACTIVE_MODEL", "ORACLE"]


@dataclass(frozen=True)
class ExtractionResult:
    """A selected sentence index with the score that won the argmax."""

    chosen: int
    score: float
    method: Method


def _mean_prob(sentence: TokenSeq, dist: UnigramDistribution) -> float:
    if not sentence:
        return 0.0
    return sum(dist.prob(tok) for tok in sentence) / len(sentence)


def _argmax(indices: Sequence[int], scores: Sequence[float]) -> tuple[int, float]:
    best_i = indices[0]
    best_s = scores[0]
    for i, s in zip(indices[1:], scores[1:]):
        if s > best_s:
            best_i, best_s = i, s
    return best_i, best_s


def sum_basic_select(
    document: SentenceSeq,
    rounds: int = 1,
    discount: Callable[[float], float] = square_discount,
) -> tuple[ExtractionResult, ...]:
    """Frequency-based selection, one ExtractionResult per round.

    Each round scores the remaining sentences by mean unigram probability
    under the current distribution, takes the argmax, then discounts every
    distinct token of the winner (once per round, regardless of how often
    it repeats inside the sentence).
    """
    if len(document) == 0:
        raise ValueError("sum_basic_select requires a non-empty document")
    if not 1 <= rounds <= len(document):
        raise ValueError(f"rounds must be in [1, {len(document)}], got {rounds}")

    dist = unigram_distribution(document)
    pool = list(range(len(document)))
    picks: list[ExtractionResult] = []
    for _ in range(rounds):
        scores = [_mean_prob(document.sentences[i], dist) for i in pool]
        chosen, score = _argmax(pool, scores)
        picks.append(ExtractionResult(chosen, score, "SB"))
        pool.remove(chosen)
        dist = dist.discounted(document.sentences[chosen], discount)
    return tuple(picks)


def _cisb_distribution(
    document: SentenceSeq,
    context: SentenceSeq,
    discount: Callable[[float], float],
) -> UnigramDistribution:
    """Pooled document+context unigram table, discounted once per context
    sentence for every token that sentence contains."""
    dist = UnigramDistribution.from_token_seqs(
        list(document.sentences) + list(context.sentences)
    )
    for sent in context.sentences:
        dist = dist.discounted(sent, discount)
    return dist


def cisb_select(
    document: SentenceSeq,
    context: SentenceSeq,
    discount: Callable[[float], float] = square_discount,
) -> ExtractionResult:
    """Context-informed Sum-Basic: pool counts over document and context,
    pre-discount everything the context already says, then pick the
    document sentence with the highest mean discounted probability.

    With an empty context this reduces to one round of sum_basic_select.
    """
    if len(document) == 0:
        raise ValueError("cisb_select requires a non-empty document")
    dist = _cisb_distribution(document, context, discount)
    scores = [_mean_prob(s, dist) for s in document.sentences]
    chosen, score = _argmax(range(len(document)), scores)
    return ExtractionResult(chosen, score, "CISB")


def cisb_top_indices(
    document: SentenceSeq,
    context: SentenceSeq,
    k: int = 5,
    discount: Callable[[float], float] = square_discount,
) -> tuple[int, ...]:
    """Indices of the k best sentences under the CISB score, returned in
    original document order. Feeds the hybrid systems' prefilter."""
    if len(document) == 0:
        raise ValueError("cisb_top_indices requires a non-empty document")
    dist = _cisb_distribution(document, context, discount)
    scores = [_mean_prob(s, dist) for s in document.sentences]
    ranked = sorted(range(len(document)), key=lambda i: (-scores[i], i))
    return tuple(sorted(ranked[: max(k, 0)]))


def oracle_select(document: SentenceSeq, reference: TokenSeq) -> ExtractionResult:
    """Upper bound: the document sentence with maximal ROUGE-L F1 against
    the reference update."""
    if len(document) == 0:
        raise ValueError("oracle_select requires a non-empty document")
    if not reference:
        raise ValueError("oracle_select requires a non-empty reference")
    scores = [rouge_l_f1(s, reference) for s in document.sentences]
    chosen, score = _argmax(range(len(document)), scores)
    return ExtractionResult(chosen, score, "ORACLE")


def likelihood_rank(
    model: "Seq2SeqModel",
    document: SentenceSeq,
    context: SentenceSeq,
) -> ExtractionResult:
    """Rank document sentences by the model's mean per-token log-probability
    of the sentence as target, conditioned per the model's own variant.

    Sentences longer than the model's decode budget are skipped; if every
    sentence is skipped there is nothing to rank and we raise.
    """
    if len(document) == 0:
        raise ValueError("likelihood_rank requires a non-empty document")
    doc_tokens: TokenSeq = tuple(t for s in document.sentences for t in s)
    ctx_tokens: TokenSeq = tuple(t for s in context.sentences for t in s)

    indices: list[int] = []
    scores: list[float] = []
    for i, sent in enumerate(document.sentences):
        if not sent or not model.target_fits(sent):
            continue
        indices.append(i)
        scores.append(
            model.mean_target_logprob(sent, document=doc_tokens, context=ctx_tokens)
        )
    if not indices:
        raise ValueError("every document sentence exceeds the model's decode budget")
    chosen, score = _argmax(indices, scores)
    return ExtractionResult(chosen, score, "EXTRACTIVE_MODEL")
