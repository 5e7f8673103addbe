"""Reference-based generation metrics and bootstrap reporting.

All metrics are pure functions over token sequences and return scores in
[0, 1]. Corpus-level aggregation lives in MetricReport, which carries the
per-instance rows, the corpus means, and seeded percentile-bootstrap
confidence intervals for each metric.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .textops import TokenSeq

METRIC_NAMES = ("rouge_l_f1", "rouge_1_recall", "bleu", "meteor_lite")


def lcs_length(a: TokenSeq, b: TokenSeq) -> int:
    """Length of the longest common subsequence of `a` and `b`.

    Two-row dynamic program, O(|a|·|b|) time, O(min) extra space.
    """
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return 0
    prev = [0] * (len(b) + 1)
    cur = [0] * (len(b) + 1)
    for x in a:
        for j, y in enumerate(b, start=1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = cur[j - 1] if cur[j - 1] >= prev[j] else prev[j]
        prev, cur = cur, prev
    return prev[len(b)]


def rouge_l_f1(candidate: TokenSeq, reference: TokenSeq) -> float:
    """Balanced LCS F-measure: R = LCS/|ref|, P = LCS/|cand|, F1 = 2PR/(P+R)."""
    if not reference:
        raise ValueError("rouge_l_f1 requires a non-empty reference")
    if not candidate:
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    r = lcs / len(reference)
    p = lcs / len(candidate)
    return 2 * p * r / (p + r)


def rouge_1_recall(candidate: TokenSeq, reference: TokenSeq) -> float:
    """Clipped unigram matches over reference length."""
    if not reference:
        raise ValueError("rouge_1_recall requires a non-empty reference")
    cand_counts = Counter(candidate)
    ref_counts = Counter(reference)
    matched = sum(min(c, cand_counts[tok]) for tok, c in ref_counts.items())
    return matched / len(reference)


def _ngram_counts(tokens: TokenSeq, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: TokenSeq, reference: TokenSeq, max_n: int = 4) -> float:
    """Sentence BLEU: geometric mean of modified n-gram precisions for
    n = 1..max_n, times a brevity penalty for short candidates.

    Zero match counts for n >= 2 get add-one smoothing (numerator and
    denominator); unigram precision is never smoothed, and the final score
    is capped at unigram precision so smoothing cannot lift a candidate
    above its own word-match rate. Empty candidate scores 0.0.
    """
    if not reference:
        raise ValueError("bleu requires a non-empty reference")
    if not candidate:
        return 0.0

    log_sum = 0.0
    p1 = 0.0
    for n in range(1, max_n + 1):
        cand_ngrams = _ngram_counts(candidate, n)
        ref_ngrams = _ngram_counts(reference, n)
        total = sum(cand_ngrams.values())
        matched = sum(min(c, ref_ngrams[g]) for g, c in cand_ngrams.items())
        if n == 1:
            p1 = matched / total
            if p1 == 0.0:
                return 0.0
            p = p1
        elif matched == 0:
            p = (matched + 1) / (total + 1)
        else:
            p = matched / total
        log_sum += math.log(p)

    geo_mean = math.exp(log_sum / max_n)
    bp = 1.0 if len(candidate) >= len(reference) else math.exp(1.0 - len(reference) / len(candidate))
    return bp * min(geo_mean, p1)


def _align_exact(candidate: TokenSeq, reference: TokenSeq) -> list[int | None]:
    """One-to-one exact-match alignment, candidate position -> reference
    position (or None).

    Greedy left-to-right: prefer the reference position that continues the
    previous match (keeps chunks long), otherwise take the leftmost free one.
    """
    free: dict[str, list[int]] = defaultdict(list)
    for j, tok in enumerate(reference):
        free[tok].append(j)
    assignment: list[int | None] = [None] * len(candidate)
    prev: int | None = None
    for i, tok in enumerate(candidate):
        slots = free.get(tok)
        if not slots:
            prev = None
            continue
        if prev is not None and prev + 1 in slots:
            j = prev + 1
            slots.remove(j)
        else:
            j = slots.pop(0)
        assignment[i] = j
        prev = j
    return assignment


def meteor_lite(candidate: TokenSeq, reference: TokenSeq) -> float:
    """Exact-match-only METEOR: harmonic mean weighted toward recall,
    discounted by a fragmentation penalty.

    Fmean = 10PR / (R + 9P); penalty = 0.5 * (chunks / matches)^3;
    score = Fmean * (1 - penalty). No stemming or synonym stages.
    """
    if not reference:
        raise ValueError("meteor_lite requires a non-empty reference")
    if not candidate:
        return 0.0

    assignment = _align_exact(candidate, reference)
    matches = sum(1 for j in assignment if j is not None)
    if matches == 0:
        return 0.0

    chunks = 0
    prev: int | None = None
    for j in assignment:
        if j is not None:
            if prev is None or j != prev + 1:
                chunks += 1
        prev = j
    p = matches / len(candidate)
    r = matches / len(reference)
    fmean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (chunks / matches) ** 3
    return fmean * (1.0 - penalty)


def bootstrap_ci(
    scores: Sequence[float],
    level: float = 0.95,
    resamples: int = 1000,
    *,
    seed: int,
) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of `scores`.

    Draws `resamples` with-replacement resamples from a generator seeded
    with `seed`, so the interval is reproducible bit-for-bit.
    """
    data = np.asarray(scores, dtype=np.float64)
    if data.size == 0:
        raise ValueError("bootstrap_ci requires at least one score")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, data.size, size=(resamples, data.size))
    means = data[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(means, [alpha, 1.0 - alpha])
    return float(low), float(high)


@dataclass(frozen=True)
class MetricReport:
    """Per-instance metric rows plus corpus means and 95% bootstrap CIs.

    `per_instance` rows are (instance_id, rouge_l_f1, rouge_1_recall, bleu,
    meteor_lite) in instance-id order. CIs are widened to include the
    corpus mean, which raw percentile intervals do not guarantee.
    """

    per_instance: tuple[tuple[str, float, float, float, float], ...]
    corpus_means: Mapping[str, float]
    ci_95: Mapping[str, tuple[float, float]]

    @classmethod
    def from_pairs(
        cls,
        pairs: Iterable[tuple[str, TokenSeq, TokenSeq]],
        *,
        seed: int = 0,
        resamples: int = 1000,
    ) -> "MetricReport":
        """Score (instance_id, candidate, reference) triples.

        Rows are sorted by instance id so parallel scoring upstream cannot
        change the report.
        """
        rows = []
        for iid, cand, ref in pairs:
            rows.append(
                (
                    iid,
                    rouge_l_f1(cand, ref),
                    rouge_1_recall(cand, ref),
                    bleu(cand, ref),
                    meteor_lite(cand, ref),
                )
            )
        rows.sort(key=lambda row: row[0])
        if not rows:
            raise ValueError("cannot build a MetricReport from zero instances")
        means = {}
        cis = {}
        for k, name in enumerate(METRIC_NAMES, start=1):
            col = [row[k] for row in rows]
            mean = sum(col) / len(col)
            low, high = bootstrap_ci(col, seed=seed, resamples=resamples)
            means[name] = mean
            cis[name] = (min(low, mean), max(high, mean))
        return cls(tuple(rows), means, cis)


def report_table(reports: Mapping[str, MetricReport]) -> str:
    """Render reports as a tab-separated table, one row per system.

    Scores are percentages; the CI columns bracket ROUGE-L F1.
    """
    lines = ["system\trouge_l_f1\tci_low\tci_high\tbleu\tmeteor_lite"]
    for system in sorted(reports):
        rep = reports[system]
        low, high = rep.ci_95["rouge_l_f1"]
        lines.append(
            "%s\t%.2f\t%.2f\t%.2f\t%.2f\t%.2f"
            % (
                system,
                100 * rep.corpus_means["rouge_l_f1"],
                100 * low,
                100 * high,
                100 * rep.corpus_means["bleu"],
                100 * rep.corpus_means["meteor_lite"],
            )
        )
    return "\n".join(lines) + "\n"
