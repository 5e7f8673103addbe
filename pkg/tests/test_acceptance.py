"""Acceptance gate: one test per release criterion.

Each test carries @pytest.mark.criterion(n, label); the conftest summary
prints a PASS/FAIL line per criterion after the run. Frozen values are
hand-derived (or produced by the brute-force oracles defined here) and
asserted at tight tolerances; runtime budgets are asserted inside each
test so a slow regression fails loudly instead of silently.
"""

import itertools
import json
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from updategen import dataset as ds
from updategen.bpe import train_bpe
from updategen.extractive import cisb_select, oracle_select, sum_basic_select
from updategen.harness import ExperimentConfig, cmd_build_dataset, cmd_evaluate
from updategen.metrics import (
    bleu,
    bootstrap_ci,
    lcs_length,
    meteor_lite,
    rouge_1_recall,
    rouge_l_f1,
)
from updategen.seq2seq import (
    VARIANTS,
    Seq2SeqConfig,
    Seq2SeqModel,
    TrainOptions,
    gradient_check,
)
from updategen.textops import (
    SentenceSeq,
    UnigramDistribution,
    repetition_ratio,
    split_sentences,
    square_discount,
    tokenize,
)

FIXTURES = Path(__file__).parent / "fixtures"


@contextmanager
def budget(seconds):
    start = time.monotonic()
    yield
    elapsed = time.monotonic() - start
    assert elapsed < seconds, f"runtime {elapsed:.1f}s exceeds the {seconds}s budget"


def lcs_brute(a, b):
    """Exponential oracle: try every subsequence of `a`, longest first."""
    for r in range(len(a), 0, -1):
        for combo in itertools.combinations(range(len(a)), r):
            it = iter(b)
            if all(a[i] in it for i in combo):
                return r
    return 0


@pytest.mark.criterion(1, "metric correctness")
def test_metric_values_and_lcs_oracle():
    with budget(5):
        cases = [
            # (metric, candidate, reference, exact expected value)
            (rouge_l_f1, ("the", "cat"), ("the", "cat", "sat"), 0.8),
            (rouge_l_f1, ("b", "a", "d", "c"), ("a", "b", "c", "d"), 0.5),
            (rouge_l_f1, ("x", "a", "y", "b", "z"), ("a", "b"), 4 / 7),
            (rouge_1_recall, ("the", "cat"), ("the", "cat", "sat"), 2 / 3),
            (rouge_1_recall, ("a", "a", "a"), ("a", "a", "b"), 2 / 3),
            (bleu, ("a", "x", "c", "d"), ("a", "b", "c", "d"), (1 / 24) ** 0.25),
            (bleu, ("a", "b"), ("a", "b", "c", "d"), math.exp(-1)),
            (bleu, ("a", "b", "c"), ("a", "b"), (1 / 6) ** 0.25),
            (meteor_lite, ("a", "b", "c"), ("a", "b", "c"), 53 / 54),
            (meteor_lite, ("a", "b", "c"), ("a", "x", "b", "c"), 230 / 351),
        ]
        for metric, cand, ref, expected in cases:
            got = metric(cand, ref)
            assert got == pytest.approx(expected, abs=1e-9), (metric.__name__, cand)

        rng = np.random.default_rng(1)
        alphabet = "abcd"
        for _ in range(1000):
            a = tuple(alphabet[i] for i in rng.integers(0, 4, rng.integers(0, 9)))
            b = tuple(alphabet[i] for i in rng.integers(0, 4, rng.integers(0, 9)))
            assert lcs_length(a, b) == lcs_brute(a, b)


def _random_selection_corpus(rng, n_instances):
    words = "abcdefgh"
    corpus = []
    for _ in range(n_instances):
        n_sent = int(rng.integers(2, 7))
        texts = [
            " ".join(words[i] for i in rng.integers(0, 8, rng.integers(3, 8)))
            for _ in range(n_sent)
        ]
        document = SentenceSeq.from_texts(texts)
        context = SentenceSeq.from_texts(
            [
                " ".join(words[i] for i in rng.integers(0, 8, rng.integers(3, 6)))
                for _ in range(int(rng.integers(0, 3)))
            ]
        )
        reference = tuple(words[i] for i in rng.integers(0, 8, rng.integers(3, 7)))
        corpus.append((document, context, reference))
    return corpus


@pytest.mark.criterion(2, "extractive selection")
def test_frequency_selection_traces_and_oracle_dominance():
    with budget(10):
        # Round 1: p(a)=3/4, p(b)=1/4; sentence means 3/4 vs 1/2.
        (pick,) = sum_basic_select(SentenceSeq.from_texts(["a a", "a b"]))
        assert (pick.chosen, pick.score) == (0, 0.75)

        # Discounting flips the round-2 ranking: counts a:4 c:1 b:2 give
        # round-1 means s0=4/7, s1=3/7, s2=2/7, so s0 wins and s1 is the
        # runner-up. After a -> (4/7)^2 = 16/49, s1 drops to 13/49, below
        # s2's untouched 14/49, so round 2 picks s2 instead.
        picks = sum_basic_select(
            SentenceSeq.from_texts(["a a", "a a c", "b b"]), rounds=2
        )
        assert [p.chosen for p in picks] == [0, 2]
        assert picks[0].score == pytest.approx(4 / 7, abs=1e-12)
        assert picks[1].score == pytest.approx(2 / 7, abs=1e-12)

        # Context suppression: pooled p(a)=2/3 discounted once per
        # containing context sentence -> ((2/3)^2)^2 = 16/81 < 1/3.
        pick = cisb_select(
            SentenceSeq.from_texts(["a a", "b b"]),
            SentenceSeq.from_texts(["a", "a"]),
        )
        assert (pick.chosen, pick.score) == (1, pytest.approx(1 / 3))

        # Discount monotonicity: squaring never increases a probability,
        # on the scalar map and through UnigramDistribution.discounted.
        rng = np.random.default_rng(2)
        for p in rng.random(200):
            assert square_discount(float(p)) <= p
        for _ in range(50):
            counts = {w: int(c) for w, c in zip("abcde", rng.integers(1, 9, 5))}
            dist = UnigramDistribution.from_counts(counts)
            hit = [w for w in counts if rng.random() < 0.5]
            once = dist.discounted(hit)
            twice = once.discounted(hit)
            for w in counts:
                assert once.prob(w) <= dist.prob(w)
                assert twice.prob(w) <= once.prob(w)

        # Oracle dominance: on every random corpus the oracle's mean
        # ROUGE-L is at least each frequency selector's mean.
        for corpus_seed in range(20):
            corpus = _random_selection_corpus(np.random.default_rng(corpus_seed), 8)
            means = {"oracle": 0.0, "sb": 0.0, "cisb": 0.0}
            for document, context, reference in corpus:
                choices = {
                    "oracle": oracle_select(document, reference).chosen,
                    "sb": sum_basic_select(document)[0].chosen,
                    "cisb": cisb_select(document, context).chosen,
                }
                for name, idx in choices.items():
                    means[name] += rouge_l_f1(document.sentences[idx], reference)
            assert means["oracle"] >= means["sb"] - 1e-12
            assert means["oracle"] >= means["cisb"] - 1e-12


@pytest.mark.criterion(3, "gradient fidelity")
def test_gradient_fidelity_all_variants():
    with budget(60):
        words = [tuple("abcdef"), ("fed", "cab"), ("ace", "bdf")] * 4
        bpe = train_bpe(words, vocab_size=20)
        triple = (("fed", "cab"), ("ace",), ("abcdef",))
        for variant in VARIANTS:
            cfg = Seq2SeqConfig(
                variant=variant, vocab_size=len(bpe), emb_dim=6, hidden_dim=5,
                max_src_len=30, max_tgt_len=10, init_scale=0.8, seed=11,
            )
            model = Seq2SeqModel(cfg, bpe)
            n_params = sum(v.size for v in model.params.values())
            assert n_params >= 200
            result = gradient_check(model, triple, samples=200, seed=5)
            assert result.max_rel_error < 1e-4, (variant, result)


_TOY_TRIPLES = [
    (("storm", "hits", "coast", "early"), ("the", "town", "history"),
     ("the", "storm", "reached", "land")),
    (("mayor", "opens", "new", "bridge"), ("city", "infrastructure", "notes"),
     ("the", "bridge", "opened", "today")),
    (("team", "wins", "final", "match"), ("club", "season", "record"),
     ("the", "team", "took", "the", "cup")),
    (("virus", "cases", "drop", "fast"), ("health", "agency", "report"),
     ("cases", "fell", "sharply")),
    (("rocket", "lands", "on", "pad"), ("launch", "program", "log"),
     ("the", "rocket", "landed", "safely")),
]


@pytest.mark.criterion(4, "memorization")
def test_variants_memorize_toy_corpus():
    with budget(300):
        fields = [part for triple in _TOY_TRIPLES for part in triple]
        bpe = train_bpe(fields, vocab_size=120)
        for variant in VARIANTS:
            cfg = Seq2SeqConfig(
                variant=variant, vocab_size=len(bpe), emb_dim=24, hidden_dim=24,
                max_src_len=60, max_tgt_len=30, init_scale=0.3, seed=7,
            )
            opts = TrainOptions(
                lr=0.25, clip=5.0, max_epochs=250, patience=25,
                lr_decay=0.9, batch_size=1, seed=13,
            )
            model, _ = Seq2SeqModel(cfg, bpe).fit(_TOY_TRIPLES, _TOY_TRIPLES, opts)
            ppl = model.perplexity(_TOY_TRIPLES)
            assert ppl < 1.1, (variant, ppl)
            for document, context, target in _TOY_TRIPLES:
                out = model.generate(document=document, context=context)
                assert out == target, (variant, target, out)


_VALUES = ("alpha", "bravo", "coral", "delta", "ember",
           "flint", "grove", "haven", "ivory", "jasper")
_ORDINALS = ("first", "second", "third")


def _marker_corpus(n, seed):
    """Lookup task solvable only jointly: the document lists three
    labelled values, the context names the label to report."""
    rng = np.random.default_rng(seed)
    corpus = []
    for _ in range(n):
        vals = tuple(
            _VALUES[i] for i in rng.choice(len(_VALUES), size=3, replace=False)
        )
        pos = int(rng.integers(0, 3))
        document = (
            _ORDINALS[0], vals[0], _ORDINALS[1], vals[1], _ORDINALS[2], vals[2]
        )
        corpus.append((document, (_ORDINALS[pos],), (vals[pos],)))
    return corpus


@pytest.mark.criterion(5, "context sensitivity")
def test_context_conditioning_beats_single_source_variants():
    with budget(1200):
        corpus = _marker_corpus(500, seed=42)
        train, val, test = corpus[:400], corpus[400:450], corpus[450:]
        bpe = train_bpe([d + c + t for d, c, t in corpus], vocab_size=100)

        accuracy = {}
        for variant in VARIANTS:
            cfg = Seq2SeqConfig(
                variant=variant, vocab_size=len(bpe), emb_dim=20, hidden_dim=32,
                max_src_len=30, max_tgt_len=6, init_scale=0.3, seed=5,
            )
            opts = TrainOptions(
                lr=0.25, clip=5.0, max_epochs=30, patience=10,
                lr_decay=0.9, batch_size=1, seed=17,
            )
            model, _ = Seq2SeqModel(cfg, bpe).fit(train, val, opts)
            hits = sum(
                model.generate(document=d, context=c) == t for d, c, t in test
            )
            accuracy[variant] = hits / len(test)

        # Either input alone underdetermines the answer; both joint
        # variants must clear the document-only model by 20 points and
        # beat the context-only model outright.
        assert accuracy["cig"] - accuracy["cag"] >= 0.20, accuracy
        assert accuracy["crg"] - accuracy["cag"] >= 0.20, accuracy
        assert accuracy["cig"] > accuracy["cog"], accuracy
        assert accuracy["crg"] > accuracy["cog"], accuracy


@pytest.mark.criterion(6, "pipeline fidelity")
def test_pipeline_reproduces_frozen_corpus(tmp_path):
    with budget(10):
        runs = []
        for name in ("one", "two"):
            out = cmd_build_dataset(
                FIXTURES / "articles",
                FIXTURES / "manifest.tsv",
                FIXTURES / "whitelist.txt",
                tmp_path / name,
                seed=0,
            )
            runs.append(out.read_bytes())
        frozen = (FIXTURES / "expected_corpus.jsonl").read_bytes()
        assert runs[0] == runs[1]
        assert runs[0] == frozen
        assert max(frozen) < 128  # pure ASCII, so bytes match cross-platform

        instances = ds.read_corpus(FIXTURES / "expected_corpus.jsonl")
        by_url = {i.citation_url.rsplit("/", 1)[1]: i for i in instances}
        assert sorted(by_url) == [
            "b2000", "b50", "flood-crest", "levee-breach", "recount-ruling"
        ]
        assert all("unlisted" not in i.citation_url for i in instances)

        # update = the sentence immediately before each citation
        assert by_url["flood-crest"].update == (
            "The crest reached six meters at the old stone bridge on the fourth day."
        )
        assert by_url["b50"].update == (
            "The second berth closed for crane rail alignment in April."
        )

        # k = 3 context window, clipped only at the article start
        for key in ("flood-crest", "b50", "b2000", "recount-ruling"):
            assert len(split_sentences(by_url[key].context)) == 3
            assert by_url[key].update not in by_url[key].context

        # inclusive document-length bounds at 50 and 2000 word tokens
        assert len(tokenize(by_url["b50"].document)) == 50
        assert len(tokenize(by_url["b2000"].document)) == 2000

        # splits are a function of the article, never of the instance
        for inst in instances:
            assert inst.split == ds.split_for_article(
                inst.article_id, (0.8, 0.1, 0.1), seed=0
            )


@pytest.mark.criterion(7, "repetition analysis")
def test_repetition_stats_match_independent_recount(tmp_path):
    # Frozen ratio vectors: distinct tokens / total tokens.
    assert repetition_ratio(("a", "a", "a", "a")) == 0.25
    assert repetition_ratio(("a", "b", "c")) == 1.0
    assert repetition_ratio(("a", "b", "a", "b")) == 0.5
    assert repetition_ratio(("a",)) == 1.0

    updates = [
        "The plant reopened in May.",
        "Crews restored power overnight.",
        "The vote was postponed again.",
        "Rainfall broke the June record.",
        "The bridge deck was replaced.",
        "Exports rose for a third month.",
    ]
    instances = [
        ds.Instance(f"art{i}", "the day's report", "earlier notes", upd,
                    "http://example.com", "TEST")
        for i, upd in enumerate(updates)
    ]
    corpus_path = tmp_path / "corpus.jsonl"
    ds.write_corpus(instances, corpus_path)

    lines = [
        "a a a a",                          # 0.25, below
        "the committee approved the plan",  # 0.8
        "go go go go go go",                # 1/6, below
        "x x y y",                          # exactly 0.5, not below
        "",                                 # empty, excluded from ratios
        "alpha beta gamma",                 # 1.0
    ]
    out_dir = tmp_path / "run"
    config = ExperimentConfig(
        corpus=corpus_path, output_dir=out_dir, systems=("SB",), resamples=100
    )
    config.outputs_dir.mkdir(parents=True)
    (config.outputs_dir / "SB.txt").write_text("\n".join(lines) + "\n", "utf-8")
    cmd_evaluate(config)

    analysis = json.loads((out_dir / "analysis.json").read_text("utf-8"))["SB"]
    # Independent recount straight off the outputs file.
    raw = (config.outputs_dir / "SB.txt").read_text("utf-8").splitlines()
    ratios = [
        len(set(tokenize(line))) / len(tokenize(line)) for line in raw if tokenize(line)
    ]
    recount_below = sum(1 for r in ratios if r < 0.5) / len(ratios)
    assert analysis["below_half"] == pytest.approx(recount_below)
    assert analysis["below_half"] == pytest.approx(2 / 5)
    assert analysis["n"] == len(ratios) == 5
    assert analysis["empty"] == 1
    assert analysis["mean_r"] == pytest.approx(sum(ratios) / len(ratios))


@pytest.mark.criterion(8, "subword round-trip")
def test_bpe_round_trip_and_deterministic_retraining():
    with budget(5):
        corpus = [("abc", "def", "fed"), ("cafe", "bead"), ("fade", "deaf")] * 3
        model = train_bpe(corpus, vocab_size=40)
        retrained = train_bpe(corpus, vocab_size=40)
        assert model == retrained
        assert model.to_text() == retrained.to_text()

        rng = np.random.default_rng(8)
        alphabet = "abcdef"
        for _ in range(1000):
            word = "".join(
                alphabet[i] for i in rng.integers(0, 6, rng.integers(1, 13))
            )
            assert model.decode(model.encode((word,))) == (word,)


@pytest.mark.criterion(9, "bootstrap confidence intervals")
def test_bootstrap_interval_properties():
    low, high = bootstrap_ci([0.7] * 5, seed=3)
    assert low == high == 0.7

    scores = [0.0, 0.25, 0.5, 0.75, 1.0]
    first = bootstrap_ci(scores, seed=21, resamples=500)
    second = bootstrap_ci(scores, seed=21, resamples=500)
    assert first == second
    rng = np.random.default_rng(21)
    idx = rng.integers(0, 5, size=(500, 5))
    means = np.asarray(scores)[idx].mean(axis=1)
    alpha = (1.0 - 0.95) / 2.0  # same float arithmetic as the default level
    assert first == (float(np.quantile(means, alpha)),
                     float(np.quantile(means, 1.0 - alpha)))

    rng = np.random.default_rng(9)
    for _ in range(50):
        sample = rng.random(int(rng.integers(1, 30))).tolist()
        low, high = bootstrap_ci(sample, seed=int(rng.integers(0, 10**6)))
        assert low <= high
