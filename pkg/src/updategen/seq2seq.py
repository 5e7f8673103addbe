"""Miniature attentional GRU encoder-decoder with four conditioning variants.

The variants differ only in how sources feed the network:

- cag: encode the document; attend over it.
- cog: encode the curated context; attend over it.
- cig: encode document + SEP + context as one joint sequence.
- crg: two encoders; attention covers document states only, and the context
  encoder's summary vector is concatenated to the decoder input every step.

Gradients come from the tape in `autodiff`; training is plain SGD with
global gradient-norm clipping, step lr decay on validation plateau, and
patience-based early stopping on validation perplexity.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from .autodiff import Node, Tape
from .bpe import BOS_ID, EOS_ID, PAD_ID, SEP_ID, BpeModel
from .extractive import cisb_top_indices
from .textops import SentenceSeq, TokenSeq

Variant = Literal["cag", "cog", "cig", "crg"]
VARIANTS: tuple[Variant, ...] = ("cag", "cog", "cig", "crg")

# (document tokens, context tokens, target tokens)
TrainingTriple = tuple[TokenSeq, TokenSeq, TokenSeq]

_STRUCTURAL_IDS = (PAD_ID, BOS_ID, SEP_ID)


@dataclass(frozen=True)
class Seq2SeqConfig:
    variant: Variant
    vocab_size: int
    emb_dim: int = 32
    hidden_dim: int = 32
    enc_layers: int = 2
    dec_layers: int = 2
    max_src_len: int = 400
    max_tgt_len: int = 100
    init_scale: float = 0.08
    seed: int = 0

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not 0 < self.init_scale <= 1:
            raise ValueError("init_scale must lie in (0, 1]")
        for name in ("vocab_size", "emb_dim", "hidden_dim", "enc_layers",
                     "dec_layers", "max_src_len", "max_tgt_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.vocab_size <= 5:
            raise ValueError("vocab_size must exceed the 5 special ids")


@dataclass(frozen=True)
class EncodedSource:
    """Per-step encoder states (steps x hidden) plus the final-state summary."""

    z: np.ndarray
    z_summary: np.ndarray
    which: Literal["Z_D", "Z_S", "Z_JOINT"]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_nll: float
    val_perplexity: float
    lr: float


@dataclass(frozen=True)
class TrainOptions:
    lr: float = 0.2
    clip: float = 5.0
    max_epochs: int = 100
    patience: int = 5
    lr_decay: float = 0.9
    batch_size: int = 1
    seed: int = 0


@dataclass(frozen=True)
class GradientCheckResult:
    max_rel_error: float
    worst_param: str


def _gru_shapes(prefix: str, in_dim: int, hidden: int) -> dict[str, tuple[int, ...]]:
    return {
        f"{prefix}.Wru": (2 * hidden, in_dim),
        f"{prefix}.Uru": (2 * hidden, hidden),
        f"{prefix}.bru": (2 * hidden,),
        f"{prefix}.Wc": (hidden, in_dim),
        f"{prefix}.Uc": (hidden, hidden),
        f"{prefix}.bc": (hidden,),
    }


def param_shapes(config: Seq2SeqConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every tensor the config implies; the checkpoint
    loader and the constructor both validate against this."""
    v, e, h = config.vocab_size, config.emb_dim, config.hidden_dim
    shapes: dict[str, tuple[int, ...]] = {"emb": (v, e)}
    encoders = ("enc_doc", "enc_ctx") if config.variant == "crg" else ("enc",)
    for enc in encoders:
        for layer in range(config.enc_layers):
            in_dim = e if layer == 0 else h
            for d in ("f", "b"):
                shapes.update(_gru_shapes(f"{enc}.l{layer}.{d}", in_dim, h))
            shapes[f"{enc}.l{layer}.proj.W"] = (h, 2 * h)
            shapes[f"{enc}.l{layer}.proj.b"] = (h,)
    for layer in range(config.dec_layers):
        in_dim = (e + h if config.variant == "crg" else e) if layer == 0 else h
        shapes.update(_gru_shapes(f"dec.l{layer}", in_dim, h))
    shapes["attn.A"] = (h, h)
    shapes["out.Wc"] = (h, 2 * h)
    shapes["out.bc"] = (h,)
    shapes["out.W"] = (v, h)
    shapes["out.b"] = (v,)
    return shapes


def _init_params(config: Seq2SeqConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 1:  # all 1-d tensors are biases
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.uniform(-config.init_scale, config.init_scale, size=shape)
    return params


@dataclass(frozen=True)
class DecoderState:
    """Inference-time decoding state; produced by start_state, advanced by
    decode_step. Immutable so beam hypotheses can share prefixes."""

    tape: Tape
    leafs: dict[str, Node]
    z_list: tuple[Node, ...]
    cond: Node | None
    layers: tuple[Node, ...]


class Seq2SeqModel:
    """Named-parameter store plus the forward/backward graph builders."""

    def __init__(
        self,
        config: Seq2SeqConfig,
        bpe: BpeModel,
        params: dict[str, np.ndarray] | None = None,
    ):
        if len(bpe) != config.vocab_size:
            raise ValueError(
                f"config says vocab {config.vocab_size}, codec has {len(bpe)}"
            )
        self.config = config
        self.bpe = bpe
        self.params = params if params is not None else _init_params(config)
        expected = param_shapes(config)
        if set(self.params) != set(expected):
            raise ValueError("parameter names do not match the config")
        for name, arr in self.params.items():
            if arr.shape != expected[name]:
                raise ValueError(
                    f"{name}: shape {arr.shape}, config implies {expected[name]}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")

    # ---- source construction --------------------------------------------

    def _clip_src(self, ids: Sequence[int]) -> list[int]:
        return list(ids[: self.config.max_src_len - 1])

    def _source_ids(
        self, document: TokenSeq, context: TokenSeq
    ) -> tuple[list[int], list[int] | None]:
        """Primary source id sequence (EOS-terminated) per variant, plus the
        separate context sequence for crg. Truncation favors the context:
        the document head is dropped last, the context never unless it alone
        exceeds the budget."""
        doc_ids = list(self.bpe.encode(document))
        ctx_ids = list(self.bpe.encode(context))
        v = self.config.variant
        if v == "cag":
            return self._clip_src(doc_ids) + [EOS_ID], None
        if v == "cog":
            return self._clip_src(ctx_ids) + [EOS_ID], None
        if v == "crg":
            return self._clip_src(doc_ids) + [EOS_ID], self._clip_src(ctx_ids) + [EOS_ID]
        budget = self.config.max_src_len - 2  # SEP + EOS
        ctx_part = ctx_ids[-budget:] if len(ctx_ids) > budget else ctx_ids
        doc_part = doc_ids[: budget - len(ctx_part)]
        return doc_part + [SEP_ID] + ctx_part + [EOS_ID], None

    # ---- graph builders ----------------------------------------------------

    def _gru(self, tape: Tape, leafs: dict[str, Node], prefix: str,
             x: Node, h: Node) -> Node:
        hid = self.config.hidden_dim
        ru = tape.sigmoid(
            tape.add(
                tape.add(tape.matvec(leafs[f"{prefix}.Wru"], x),
                         tape.matvec(leafs[f"{prefix}.Uru"], h)),
                leafs[f"{prefix}.bru"],
            )
        )
        r = tape.slice1d(ru, 0, hid)
        u = tape.slice1d(ru, hid, 2 * hid)
        cand = tape.tanh(
            tape.add(
                tape.add(tape.matvec(leafs[f"{prefix}.Wc"], x),
                         tape.matvec(leafs[f"{prefix}.Uc"], tape.mul(r, h))),
                leafs[f"{prefix}.bc"],
            )
        )
        return tape.add(tape.mul(tape.one_minus(u), h), tape.mul(u, cand))

    def _encode_nodes(
        self, tape: Tape, leafs: dict[str, Node], enc: str, ids: Sequence[int]
    ) -> tuple[list[Node], Node]:
        n = len(ids)
        if n == 0:
            raise ValueError("cannot encode an empty source")
        if n > self.config.max_src_len:
            raise ValueError(
                f"source length {n} exceeds max_src_len {self.config.max_src_len}"
            )
        hid = self.config.hidden_dim
        layer_in: list[Node] = [tape.row(leafs["emb"], i) for i in ids]
        for layer in range(self.config.enc_layers):
            fwd: list[Node] = []
            h = tape.leaf(np.zeros(hid))
            for x in layer_in:
                h = self._gru(tape, leafs, f"{enc}.l{layer}.f", x, h)
                fwd.append(h)
            bwd_rev: list[Node] = []
            h = tape.leaf(np.zeros(hid))
            for x in reversed(layer_in):
                h = self._gru(tape, leafs, f"{enc}.l{layer}.b", x, h)
                bwd_rev.append(h)
            bwd = list(reversed(bwd_rev))
            w, b = leafs[f"{enc}.l{layer}.proj.W"], leafs[f"{enc}.l{layer}.proj.b"]
            layer_in = [
                tape.tanh(tape.add(tape.matvec(w, tape.concat(f, bk)), b))
                for f, bk in zip(fwd, bwd)
            ]
        return layer_in, layer_in[-1]

    def _step(
        self,
        tape: Tape,
        leafs: dict[str, Node],
        z_list: Sequence[Node],
        cond: Node | None,
        states: Sequence[Node],
        prev_id: int,
    ) -> tuple[Node, tuple[Node, ...]]:
        """One decoder step: returns (vocab logits, new layer states)."""
        if not 0 <= prev_id < self.config.vocab_size:
            raise ValueError(f"token id {prev_id} outside the vocabulary")
        x = tape.row(leafs["emb"], prev_id)
        if cond is not None:
            x = tape.concat(x, cond)
        new_states: list[Node] = []
        inp = x
        for layer, h in enumerate(states):
            h = self._gru(tape, leafs, f"dec.l{layer}", inp, h)
            new_states.append(h)
            inp = h
        top = new_states[-1]
        query = tape.matvec(leafs["attn.A"], top)
        scores = tape.stack_scalars([tape.dot(z, query) for z in z_list])
        attn = tape.softmax(scores)
        ctx_vec = tape.weighted_sum(z_list, attn)
        fused = tape.tanh(
            tape.add(tape.matvec(leafs["out.Wc"], tape.concat(ctx_vec, top)),
                     leafs["out.bc"])
        )
        logits = tape.add(tape.matvec(leafs["out.W"], fused), leafs["out.b"])
        return logits, tuple(new_states)

    def _build_sources(
        self, tape: Tape, leafs: dict[str, Node],
        document: TokenSeq, context: TokenSeq,
    ) -> tuple[list[Node], Node, Node | None]:
        src, crg_ctx = self._source_ids(document, context)
        enc = "enc_doc" if self.config.variant == "crg" else "enc"
        z_list, summary = self._encode_nodes(tape, leafs, enc, src)
        cond = None
        if crg_ctx is not None:
            _, cond = self._encode_nodes(tape, leafs, "enc_ctx", crg_ctx)
        return z_list, summary, cond

    def _leafs(self, tape: Tape) -> dict[str, Node]:
        return {name: tape.leaf(arr) for name, arr in self.params.items()}

    def _loss_graph(
        self, tape: Tape, leafs: dict[str, Node],
        document: TokenSeq, context: TokenSeq, target: TokenSeq,
    ) -> tuple[Node, int]:
        tgt_ids = list(self.bpe.encode(target))
        if len(tgt_ids) > self.config.max_tgt_len:
            raise ValueError(
                f"target length {len(tgt_ids)} exceeds max_tgt_len "
                f"{self.config.max_tgt_len}"
            )
        z_list, summary, cond = self._build_sources(tape, leafs, document, context)
        states: tuple[Node, ...] = tuple(summary for _ in range(self.config.dec_layers))
        loss: Node | None = None
        for prev, gold in zip([BOS_ID] + tgt_ids, tgt_ids + [EOS_ID]):
            logits, states = self._step(tape, leafs, z_list, cond, states, prev)
            ce = tape.cross_entropy(logits, gold)
            loss = ce if loss is None else tape.add(loss, ce)
        assert loss is not None
        return loss, len(tgt_ids) + 1

    # ---- public inference ----------------------------------------------

    def encode(self, source_ids: Sequence[int]) -> EncodedSource:
        """Run the (document-side) encoder over raw subword ids."""
        tape = Tape()
        leafs = self._leafs(tape)
        enc = "enc_doc" if self.config.variant == "crg" else "enc"
        z_list, summary = self._encode_nodes(tape, leafs, enc, source_ids)
        which = {"cag": "Z_D", "cog": "Z_S", "cig": "Z_JOINT", "crg": "Z_D"}[
            self.config.variant
        ]
        return EncodedSource(
            np.stack([z.value for z in z_list]), summary.value.copy(), which
        )

    def encode_context(self, source_ids: Sequence[int]) -> EncodedSource:
        """crg only: the second encoder, whose summary conditions each step."""
        if self.config.variant != "crg":
            raise ValueError("encode_context is only defined for the crg variant")
        tape = Tape()
        leafs = self._leafs(tape)
        z_list, summary = self._encode_nodes(tape, leafs, "enc_ctx", source_ids)
        return EncodedSource(
            np.stack([z.value for z in z_list]), summary.value.copy(), "Z_S"
        )

    def start_state(self, document: TokenSeq = (), context: TokenSeq = ()) -> DecoderState:
        tape = Tape()
        leafs = self._leafs(tape)
        z_list, summary, cond = self._build_sources(tape, leafs, document, context)
        layers = tuple(summary for _ in range(self.config.dec_layers))
        return DecoderState(tape, leafs, tuple(z_list), cond, layers)

    def decode_step(
        self, prev_id: int, state: DecoderState
    ) -> tuple[np.ndarray, DecoderState]:
        """Distribution over the vocabulary after consuming prev_id."""
        logits, layers = self._step(
            state.tape, state.leafs, state.z_list, state.cond, state.layers, prev_id
        )
        shifted = logits.value - logits.value.max()
        e = np.exp(shifted)
        probs = e / e.sum()
        return probs, DecoderState(
            state.tape, state.leafs, state.z_list, state.cond, layers
        )

    def sequence_nll(
        self, target: TokenSeq, *, document: TokenSeq = (), context: TokenSeq = ()
    ) -> float:
        """Teacher-forced total negative log-likelihood of `target`
        (BOS prepended, EOS appended)."""
        tape = Tape()
        loss, _ = self._loss_graph(tape, self._leafs(tape), document, context, target)
        return float(loss.value)

    def mean_target_logprob(
        self, target: TokenSeq, *, document: TokenSeq = (), context: TokenSeq = ()
    ) -> float:
        """Length-normalized log-likelihood; the extractive ranker's score."""
        tape = Tape()
        loss, steps = self._loss_graph(
            tape, self._leafs(tape), document, context, target
        )
        return -float(loss.value) / steps

    def target_fits(self, target: TokenSeq) -> bool:
        return len(self.bpe.encode(target)) <= self.config.max_tgt_len

    def perplexity(self, corpus: Iterable[TrainingTriple]) -> float:
        total, tokens = 0.0, 0
        for document, context, target in corpus:
            tape = Tape()
            loss, steps = self._loss_graph(
                tape, self._leafs(tape), document, context, target
            )
            total += float(loss.value)
            tokens += steps
        if tokens == 0:
            raise ValueError("perplexity over an empty corpus is undefined")
        return float(np.exp(total / tokens))

    def _masked_logprobs(self, logits: np.ndarray) -> np.ndarray:
        out = logits - (logits.max() + np.log(np.exp(logits - logits.max()).sum()))
        out[list(_STRUCTURAL_IDS)] = -np.inf
        return out

    def generate(
        self,
        *,
        document: TokenSeq = (),
        context: TokenSeq = (),
        beam_width: int = 1,
        max_len: int | None = None,
    ) -> TokenSeq:
        """Decode an update sentence. beam_width 1 is greedy argmax; wider
        beams rank hypotheses by mean per-token log-probability with ties
        broken by token ids."""
        if beam_width < 1:
            raise ValueError("beam_width must be at least 1")
        limit = self.config.max_tgt_len if max_len is None else max_len
        state = self.start_state(document, context)
        ids = self._beam_ids(state, beam_width, limit)
        return self.bpe.decode(ids)

    def _step_logprobs(self, state: DecoderState, prev_id: int):
        logits, layers = self._step(
            state.tape, state.leafs, state.z_list, state.cond, state.layers, prev_id
        )
        new_state = DecoderState(
            state.tape, state.leafs, state.z_list, state.cond, layers
        )
        return self._masked_logprobs(logits.value.copy()), new_state

    def _beam_ids(self, state: DecoderState, width: int, limit: int) -> tuple[int, ...]:
        # (ids, total logprob, steps taken, state, finished)
        beams: list[tuple[tuple[int, ...], float, int, DecoderState, bool]] = [
            ((), 0.0, 0, state, False)
        ]
        for _ in range(limit):
            if all(b[4] for b in beams):
                break
            candidates = []
            for ids, logp, steps, st, done in beams:
                if done:
                    candidates.append((ids, logp, steps, st, True))
                    continue
                prev = ids[-1] if ids else BOS_ID
                lp, new_st = self._step_logprobs(st, prev)
                order = np.argsort(-lp, kind="stable")[:width]
                for tok in order:
                    tok = int(tok)
                    if not np.isfinite(lp[tok]):
                        continue
                    if tok == EOS_ID:
                        candidates.append((ids, logp + lp[tok], steps + 1, new_st, True))
                    else:
                        candidates.append(
                            (ids + (tok,), logp + lp[tok], steps + 1, new_st, False)
                        )
            if not candidates:
                break
            candidates.sort(key=lambda c: (-(c[1] / c[2]), c[0]))
            beams = candidates[:width]
        best = min(beams, key=lambda c: (-(c[1] / c[2]) if c[2] else 0.0, c[0]))
        return best[0]

    # ---- training ----------------------------------------------------------

    def fit(
        self,
        train_corpus: Sequence[TrainingTriple],
        val_corpus: Sequence[TrainingTriple],
        options: TrainOptions = TrainOptions(),
    ) -> tuple["Seq2SeqModel", tuple[EpochRecord, ...]]:
        """Minibatch SGD to best validation perplexity. Mutates this model's
        parameters in place and returns (self, per-epoch history)."""
        if not train_corpus or not val_corpus:
            raise ValueError("training and validation corpora must be non-empty")
        rng = np.random.default_rng(options.seed)
        lr = options.lr
        best_ppl = float("inf")
        best_params = {k: v.copy() for k, v in self.params.items()}
        bad_epochs = 0
        history: list[EpochRecord] = []

        for epoch in range(options.max_epochs):
            order = rng.permutation(len(train_corpus))
            total_nll = 0.0
            for lo in range(0, len(order), options.batch_size):
                batch = order[lo : lo + options.batch_size]
                grads: dict[str, np.ndarray] = {}
                for i in batch:
                    document, context, target = train_corpus[int(i)]
                    tape = Tape()
                    leafs = self._leafs(tape)
                    loss, _ = self._loss_graph(tape, leafs, document, context, target)
                    if not np.isfinite(loss.value):
                        raise RuntimeError(
                            f"training diverged: non-finite loss at epoch {epoch}"
                        )
                    total_nll += float(loss.value)
                    tape.backward(loss)
                    for name, leaf in leafs.items():
                        if leaf.grad is None:
                            continue
                        if name in grads:
                            grads[name] += leaf.grad
                        else:
                            grads[name] = leaf.grad
                scale = 1.0 / len(batch)
                norm_sq = 0.0
                for g in grads.values():
                    g *= scale
                    norm_sq += float((g * g).sum())
                norm = norm_sq ** 0.5
                if norm > options.clip:
                    factor = options.clip / norm
                    for g in grads.values():
                        g *= factor
                for name, g in grads.items():
                    self.params[name] -= lr * g

            val_ppl = self.perplexity(val_corpus)
            history.append(EpochRecord(epoch, total_nll, val_ppl, lr))
            if val_ppl < best_ppl:
                best_ppl = val_ppl
                best_params = {k: v.copy() for k, v in self.params.items()}
                bad_epochs = 0
            else:
                bad_epochs += 1
                lr *= options.lr_decay
                if bad_epochs > options.patience:
                    break

        self.params = best_params
        return self, tuple(history)

    # ---- persistence -----------------------------------------------------

    def save(self, path: str | Path) -> None:
        meta = {
            "format": "updategen-seq2seq-v1",
            "config": asdict(self.config),
            "bpe": self.bpe.to_text(),
        }
        np.savez_compressed(
            path, __meta__=np.array(json.dumps(meta)), **self.params
        )

    @classmethod
    def load(
        cls, path: str | Path, expected_config: Seq2SeqConfig | None = None
    ) -> "Seq2SeqModel":
        data = np.load(path, allow_pickle=False)
        if "__meta__" not in data:
            raise ValueError(f"{path}: not a seq2seq checkpoint")
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format") != "updategen-seq2seq-v1":
            raise ValueError(f"{path}: unsupported checkpoint format")
        config = Seq2SeqConfig(**meta["config"])
        if expected_config is not None and config != expected_config:
            raise ValueError("checkpoint config does not match the expected config")
        bpe = BpeModel.from_text(meta["bpe"])
        params = {
            k: np.asarray(data[k], dtype=np.float64)
            for k in data.files
            if k != "__meta__"
        }
        return cls(config, bpe, params)


def gradient_check(
    model: Seq2SeqModel,
    triple: TrainingTriple,
    *,
    samples: int = 200,
    eps: float = 1e-4,
    seed: int = 0,
) -> GradientCheckResult:
    """Central finite differences on `samples` random parameter coordinates
    against the tape gradients of sequence_nll."""
    document, context, target = triple
    tape = Tape()
    leafs = model._leafs(tape)
    loss, _ = model._loss_graph(tape, leafs, document, context, target)
    tape.backward(loss)
    analytic = {
        name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
        for name, leaf in leafs.items()
    }

    names = sorted(model.params)
    sizes = np.array([model.params[n].size for n in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    coords = rng.choice(int(offsets[-1]), size=min(samples, int(offsets[-1])),
                        replace=False)

    def nll() -> float:
        return model.sequence_nll(target, document=document, context=context)

    worst = 0.0
    worst_name = names[0]
    for flat in coords:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[k]
        arr = model.params[name]
        idx = np.unravel_index(int(flat - offsets[k]), arr.shape)
        keep = arr[idx]
        arr[idx] = keep + eps
        up = nll()
        arr[idx] = keep - eps
        down = nll()
        arr[idx] = keep
        numeric = (up - down) / (2 * eps)
        ga = float(analytic[name][idx])
        rel = abs(ga - numeric) / max(abs(ga) + abs(numeric), 1e-8)
        if rel > worst:
            worst = rel
            worst_name = f"{name}{list(idx)}"
    return GradientCheckResult(worst, worst_name)


def hybrid_generate(
    model: Seq2SeqModel,
    document: SentenceSeq,
    context: SentenceSeq,
    *,
    beam_width: int = 1,
) -> TokenSeq:
    """Prefilter the document to its five best CISB sentences (original
    order), then generate with the model's own conditioning."""
    keep = cisb_top_indices(document, context, k=5)
    doc_tokens: TokenSeq = tuple(
        t for i in keep for t in document.sentences[i]
    )
    ctx_tokens: TokenSeq = tuple(t for s in context.sentences for t in s)
    return model.generate(
        document=doc_tokens, context=ctx_tokens, beam_width=beam_width
    )
