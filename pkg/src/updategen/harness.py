"""Experiment orchestration: configs, system runners, and report writing.

The CLI in `cli` is a thin argparse front end over the functions here.
Every stochastic component receives its own seed derived from the root
seed and a stable component name, so adding a system never shifts another
system's randomness.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import dataset as ds
from . import extractive, metrics, seq2seq
from .bpe import BpeModel, train_bpe
from .textops import SentenceSeq, TokenSeq, repetition_ratio, split_sentences, tokenize

NEURAL_SYSTEMS = ("CAG", "COG", "CIG", "CRG")
EXTRACTIVE_MODEL_SYSTEMS = ("EXTRACTIVE_CAG", "EXTRACTIVE_CIG", "EXTRACTIVE_CRG")
HYBRID_SYSTEMS = ("HYBRID_CAG", "HYBRID_CIG", "HYBRID_CRG")
SYSTEMS = ("SB", "CISB", "ORACLE") + NEURAL_SYSTEMS + EXTRACTIVE_MODEL_SYSTEMS + HYBRID_SYSTEMS


class ConfigError(ValueError):
    """Invalid experiment configuration; commands exit 1 on this."""


def component_seed(root: int, name: str) -> int:
    """Stable per-component seed split off the root seed."""
    digest = hashlib.sha256(f"{root}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: Path
    output_dir: Path
    seed: int = 0
    systems: tuple[str, ...] = ("SB", "CISB", "ORACLE")
    vocab_size: int = 200
    emb_dim: int = 32
    hidden_dim: int = 32
    enc_layers: int = 2
    dec_layers: int = 2
    max_src_len: int = 400
    max_tgt_len: int = 100
    lr: float = 0.2
    clip: float = 5.0
    max_epochs: int = 50
    patience: int = 5
    lr_decay: float = 0.9
    batch_size: int = 1
    resamples: int = 1000
    beam_width: int = 1
    limit: int | None = None

    @classmethod
    def from_file(
        cls, path: str | Path, overrides: Mapping[str, object] | None = None
    ) -> "ExperimentConfig":
        """Load a JSON config; `overrides` (from CLI flags) win over file
        values. Unknown keys are an error, not a warning."""
        try:
            data = json.loads(Path(path).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        data.update(overrides or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        if "corpus" not in data or "output_dir" not in data:
            raise ConfigError(f"{path}: config requires 'corpus' and 'output_dir'")
        data["corpus"] = Path(data["corpus"])
        data["output_dir"] = Path(data["output_dir"])
        if "systems" in data:
            data["systems"] = tuple(data["systems"])
        return cls(**data)

    def validate(self, *, need_corpus: bool = True) -> None:
        for name in self.systems:
            if name not in SYSTEMS:
                raise ConfigError(
                    f"unknown system {name!r}; choose from {', '.join(SYSTEMS)}"
                )
        if need_corpus and not self.corpus.is_file():
            raise ConfigError(f"corpus file does not exist: {self.corpus}")
        if self.vocab_size <= 5:
            raise ConfigError("vocab_size must exceed the 5 special tokens")
        if self.limit is not None and self.limit < 1:
            raise ConfigError("limit must be a positive instance count")
        if self.beam_width < 1:
            raise ConfigError("beam_width must be at least 1")

    # conventional artifact locations inside output_dir
    @property
    def bpe_path(self) -> Path:
        return self.output_dir / "bpe.txt"

    def model_path(self, variant: str) -> Path:
        return self.output_dir / f"model_{variant}.npz"

    def history_path(self, variant: str) -> Path:
        return self.output_dir / f"history_{variant}.jsonl"

    @property
    def outputs_dir(self) -> Path:
        return self.output_dir / "outputs"

    def model_config(self, variant: str) -> seq2seq.Seq2SeqConfig:
        return seq2seq.Seq2SeqConfig(
            variant=variant,  # type: ignore[arg-type]
            vocab_size=self.vocab_size,
            emb_dim=self.emb_dim,
            hidden_dim=self.hidden_dim,
            enc_layers=self.enc_layers,
            dec_layers=self.dec_layers,
            max_src_len=self.max_src_len,
            max_tgt_len=self.max_tgt_len,
            seed=component_seed(self.seed, f"init:{variant}"),
        )

    def train_options(self, variant: str) -> seq2seq.TrainOptions:
        return seq2seq.TrainOptions(
            lr=self.lr,
            clip=self.clip,
            max_epochs=self.max_epochs,
            patience=self.patience,
            lr_decay=self.lr_decay,
            batch_size=self.batch_size,
            seed=component_seed(self.seed, f"shuffle:{variant}"),
        )


# ---- corpus views ------------------------------------------------------------


def split_instances(
    corpus: Sequence[ds.Instance], split: str, limit: int | None = None
) -> tuple[ds.Instance, ...]:
    out = tuple(i for i in corpus if i.split == split)
    return out[:limit] if limit is not None else out


def training_triples(instances: Iterable[ds.Instance]) -> list[seq2seq.TrainingTriple]:
    return [
        (tokenize(i.document), tokenize(i.context), tokenize(i.update))
        for i in instances
    ]


def bpe_training_fields(instances: Iterable[ds.Instance]) -> list[TokenSeq]:
    """One shared subword model covers documents, contexts, and updates."""
    seqs: list[TokenSeq] = []
    for i in instances:
        seqs.append(tokenize(i.document))
        seqs.append(tokenize(i.context))
        seqs.append(tokenize(i.update))
    return seqs


# ---- running systems ----------------------------------------------------------


def variant_for(system: str) -> str | None:
    """Lowercase neural variant behind a system name, if any."""
    for prefix in ("EXTRACTIVE_", "HYBRID_"):
        if system.startswith(prefix):
            return system[len(prefix) :].lower()
    return system.lower() if system in NEURAL_SYSTEMS else None


def run_system(
    system: str,
    instances: Sequence[ds.Instance],
    models: Mapping[str, seq2seq.Seq2SeqModel],
    *,
    beam_width: int = 1,
) -> list[str]:
    """One output line per instance, in corpus order."""
    if system not in SYSTEMS:
        raise ConfigError(f"unknown system {system!r}")
    lines: list[str] = []
    for inst in instances:
        doc = split_sentences(inst.document)
        ctx = split_sentences(inst.context)
        doc_tokens = tokenize(inst.document)
        ctx_tokens = tokenize(inst.context)
        if system == "SB":
            pick = extractive.sum_basic_select(doc)[0]
            lines.append(doc.texts()[pick.chosen])
        elif system == "CISB":
            pick = extractive.cisb_select(doc, ctx)
            lines.append(doc.texts()[pick.chosen])
        elif system == "ORACLE":
            pick = extractive.oracle_select(doc, tokenize(inst.update))
            lines.append(doc.texts()[pick.chosen])
        elif system in NEURAL_SYSTEMS:
            tokens = models[variant_for(system)].generate(
                document=doc_tokens, context=ctx_tokens, beam_width=beam_width
            )
            lines.append(" ".join(tokens))
        elif system in EXTRACTIVE_MODEL_SYSTEMS:
            pick = extractive.likelihood_rank(models[variant_for(system)], doc, ctx)
            lines.append(doc.texts()[pick.chosen])
        else:  # hybrid
            tokens = seq2seq.hybrid_generate(
                models[variant_for(system)], doc, ctx, beam_width=beam_width
            )
            lines.append(" ".join(tokens))
    return lines


def load_models(
    config: ExperimentConfig, systems: Iterable[str]
) -> dict[str, seq2seq.Seq2SeqModel]:
    models: dict[str, seq2seq.Seq2SeqModel] = {}
    for system in systems:
        variant = variant_for(system)
        if variant is None or variant in models:
            continue
        path = config.model_path(variant)
        if not path.is_file():
            raise ConfigError(
                f"system {system} needs a trained model at {path}; "
                f"run `updategen train --variant {variant}` first"
            )
        models[variant] = seq2seq.Seq2SeqModel.load(path)
    return models


# ---- evaluation ---------------------------------------------------------------


def instance_ids(instances: Sequence[ds.Instance]) -> list[str]:
    """Stable per-run ids whose lexicographic order is corpus order."""
    return [f"{i:06d}:{inst.article_id}" for i, inst in enumerate(instances)]


def build_report(
    outputs: Sequence[str],
    instances: Sequence[ds.Instance],
    *,
    seed: int,
    resamples: int = 1000,
) -> metrics.MetricReport:
    if len(outputs) != len(instances):
        raise ConfigError(
            f"{len(outputs)} output lines for {len(instances)} test instances"
        )
    ids = instance_ids(instances)
    pairs = [
        (iid, tokenize(line), tokenize(inst.update))
        for iid, line, inst in zip(ids, outputs, instances)
    ]
    return metrics.MetricReport.from_pairs(pairs, seed=seed, resamples=resamples)


def repetition_analysis(outputs: Sequence[str]) -> dict[str, float]:
    """Share of outputs whose unique/total token ratio falls below 0.5.

    Empty outputs carry no ratio and are excluded from both numerator and
    denominator; their count is reported separately.
    """
    ratios = []
    empty = 0
    for line in outputs:
        toks = tokenize(line)
        if not toks:
            empty += 1
            continue
        ratios.append(repetition_ratio(toks))
    if not ratios:
        return {"n": 0, "empty": empty, "mean_r": 0.0, "below_half": 0.0}
    below = sum(1 for r in ratios if r < 0.5)
    return {
        "n": len(ratios),
        "empty": empty,
        "mean_r": sum(ratios) / len(ratios),
        "below_half": below / len(ratios),
    }


def aligned_table(reports: Mapping[str, metrics.MetricReport]) -> str:
    """Human-readable fixed-width variant of metrics.report_table."""
    header = ("system", "ROUGE-L", "CI-low", "CI-high", "BLEU", "METEOR-lite")
    rows = [header]
    for system in sorted(reports):
        rep = reports[system]
        low, high = rep.ci_95["rouge_l_f1"]
        rows.append(
            (
                system,
                f"{100 * rep.corpus_means['rouge_l_f1']:.2f}",
                f"{100 * low:.2f}",
                f"{100 * high:.2f}",
                f"{100 * rep.corpus_means['bleu']:.2f}",
                f"{100 * rep.corpus_means['meteor_lite']:.2f}",
            )
        )
    widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
    out = []
    for r in rows:
        out.append(
            r[0].ljust(widths[0])
            + "".join("  " + r[c].rjust(widths[c]) for c in range(1, len(header)))
        )
    return "\n".join(out) + "\n"


# ---- commands (CLI bodies) ---------------------------------------------------


def cmd_build_dataset(
    wikitext_dir: Path,
    manifest: Path,
    whitelist_path: Path,
    out_dir: Path,
    *,
    seed: int = 0,
    k: int = 3,
    length_filter: ds.LengthFilter = ds.LengthFilter(),
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> Path:
    for p, what in ((wikitext_dir, "wikitext directory"), (manifest, "manifest"),
                    (whitelist_path, "whitelist")):
        if not p.exists():
            raise ConfigError(f"{what} does not exist: {p}")
    whitelist = ds.DomainWhitelist.from_file(whitelist_path)
    corpus = ds.build_corpus(
        wikitext_dir, manifest, whitelist,
        k=k, length_filter=length_filter, ratios=ratios, seed=seed,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus_path = out_dir / "corpus.jsonl"
    ds.write_corpus(corpus, corpus_path)
    stats_path = out_dir / "stats.json"
    if corpus:
        stats = ds.corpus_stats(corpus).to_dict()
    else:
        stats = {"counts": {s: 0 for s in ds.SPLITS}}
    stats_path.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", "utf-8")
    return corpus_path


def cmd_train_bpe(config: ExperimentConfig) -> Path:
    config.validate()
    corpus = ds.read_corpus(config.corpus)
    train = split_instances(corpus, "TRAIN")
    if not train:
        raise ConfigError(f"corpus {config.corpus} has no TRAIN instances")
    model = train_bpe(bpe_training_fields(train), config.vocab_size)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    model.save(config.bpe_path)
    return config.bpe_path


def cmd_train(config: ExperimentConfig, variant: str) -> Path:
    config.validate()
    if variant not in seq2seq.VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    if not config.bpe_path.is_file():
        raise ConfigError(
            f"no subword model at {config.bpe_path}; run `updategen train-bpe` first"
        )
    corpus = ds.read_corpus(config.corpus)
    train = split_instances(corpus, "TRAIN")
    valid = split_instances(corpus, "VALID") or train
    if not train:
        raise ConfigError(f"corpus {config.corpus} has no TRAIN instances")
    bpe = BpeModel.load(config.bpe_path)
    model = seq2seq.Seq2SeqModel(
        replace(config.model_config(variant), vocab_size=len(bpe)), bpe
    )
    model, history = model.fit(
        training_triples(train), training_triples(valid), config.train_options(variant)
    )
    config.output_dir.mkdir(parents=True, exist_ok=True)
    path = config.model_path(variant)
    model.save(path)
    with open(config.history_path(variant), "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(
                json.dumps(
                    {
                        "epoch": rec.epoch,
                        "train_nll": rec.train_nll,
                        "val_perplexity": rec.val_perplexity,
                        "lr": rec.lr,
                    }
                )
                + "\n"
            )
    return path


def cmd_run_systems(config: ExperimentConfig) -> dict[str, Path]:
    config.validate()
    corpus = ds.read_corpus(config.corpus)
    test = split_instances(corpus, "TEST", config.limit)
    if not test:
        raise ConfigError(f"corpus {config.corpus} has no TEST instances")
    models = load_models(config, config.systems)
    config.outputs_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    for system in config.systems:
        lines = run_system(system, test, models, beam_width=config.beam_width)
        path = config.outputs_dir / f"{system}.txt"
        path.write_text("\n".join(lines) + "\n", "utf-8")
        written[system] = path
    return written


def cmd_evaluate(
    config: ExperimentConfig,
    *,
    outputs_dir: Path | None = None,
    out: Path | None = None,
) -> Path:
    config.validate()
    outputs_dir = outputs_dir or config.outputs_dir
    report_path = out or (config.output_dir / "report.txt")
    corpus = ds.read_corpus(config.corpus)
    test = split_instances(corpus, "TEST", config.limit)
    if not test:
        raise ConfigError(f"corpus {config.corpus} has no TEST instances")
    reports: dict[str, metrics.MetricReport] = {}
    analysis: dict[str, dict[str, float]] = {}
    boot_seed = component_seed(config.seed, "bootstrap")
    for system in config.systems:
        path = outputs_dir / f"{system}.txt"
        if not path.is_file():
            raise ConfigError(
                f"no outputs for {system} at {path}; run `updategen run-systems` first"
            )
        lines = path.read_text("utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        reports[system] = build_report(
            lines, test, seed=boot_seed, resamples=config.resamples
        )
        analysis[system] = repetition_analysis(lines)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(aligned_table(reports), "utf-8")
    (report_path.parent / "report.tsv").write_text(
        metrics.report_table(reports), "utf-8"
    )
    (report_path.parent / "analysis.json").write_text(
        json.dumps(analysis, indent=2, sort_keys=True) + "\n", "utf-8"
    )
    return report_path


def cmd_stats(corpus_path: Path) -> ds.CorpusStats:
    if not corpus_path.is_file():
        raise ConfigError(f"corpus file does not exist: {corpus_path}")
    corpus = ds.read_corpus(corpus_path)
    if not corpus:
        raise ConfigError(f"corpus {corpus_path} is empty")
    return ds.corpus_stats(corpus)
