"""Desk-scale training and evaluation loop tying templating, the encoder,
and the contrastive losses together.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import encoder as enc
from .contrast import (
    build_mask_finetune,
    build_mask_pretrain,
    multiturn_infonce,
)
from .core import (
    EmbeddingMatrix,
    LossConfig,
    MultiTurnSample,
    Role,
    RowLabel,
    TurnPair,
    ValidationError,
    Variant,
    validate_batch,
)
from .costmodel import CostConfig, iteration_cost
from .datagen import record_from_json
from .template import (
    AttentionMode,
    ByteTokenizer,
    ChatMarkup,
    PromptConfig,
    TemplateVariant,
    build_adapted_pair,
    pack_adapted,
    pack_multiturn,
    shuffle_turns,
)


class EmptyEvalSet(ValidationError):
    pass


class LossVariant(str, Enum):
    MULTI_TURN = "multi_turn"
    NAIVE = "naive"
    SINGLE_TURN = "single_turn"
    FINETUNE_ADAPTED = "finetune_adapted"


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


# Published learning-rate schedule for batch-scaling reproductions; the toy
# default stays at 1e-3 because the published rates target a 2B-parameter
# LoRA setup.
def published_learning_rate(batch_images: int) -> float:
    if batch_images >= 7168:
        return 2e-4
    if batch_images >= 4096:
        return 1e-4
    return 5e-5


@dataclass(frozen=True)
class TrainConfig:
    batch_images: int = 8
    turns_per_image: int = 7
    steps: int = 100
    learning_rate: float = 1e-3
    optimizer: OptimizerKind = OptimizerKind.ADAM
    seed: int = 0
    attention_mode: AttentionMode = AttentionMode.CAUSAL
    loss_variant: LossVariant = LossVariant.MULTI_TURN
    temperature: float = 0.02
    mask_same_image: bool = True
    mask_counterpart: bool = True
    lr_preset: str = "toy"  # "published" restores the published schedule
    dim: int = 32
    heads: int = 4
    layers: int = 2
    max_seq: int = 256
    mask_ratio: float = 0.5
    template_variant: TemplateVariant = TemplateVariant.RECONSTRUCTION

    def __post_init__(self):
        if self.steps < 1:
            raise ValidationError("steps must be >= 1")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be > 0")
        if self.batch_images < 1 or self.turns_per_image < 1:
            raise ValidationError("batch_images and turns_per_image must be >= 1")

    @property
    def effective_learning_rate(self) -> float:
        if self.lr_preset == "published":
            return published_learning_rate(self.batch_images)
        return self.learning_rate

    def loss_config(self) -> LossConfig:
        return LossConfig(
            temperature=self.temperature,
            mask_same_image=self.mask_same_image,
            mask_counterpart=self.mask_counterpart,
        )


@dataclass(frozen=True)
class EvalReport:
    precision_at_1: float
    recall_at_k: dict[int, float]
    candidates: int
    queries: int


class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        return params - self.lr * grads


class _Adam:
    def __init__(self, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1 - self.beta2) * grads**2
        mh = self.m / (1 - self.beta1**self.t)
        vh = self.v / (1 - self.beta2**self.t)
        return params - self.lr * mh / (np.sqrt(vh) + self.eps)


def _make_optimizer(cfg: TrainConfig):
    lr = cfg.effective_learning_rate
    return _Adam(lr) if cfg.optimizer is OptimizerKind.ADAM else _Sgd(lr)


def _relabel_adapted(matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    """Adapted sequences use turn 1 for the augmented form; relabel rows so
    both forms sit at turn 0 with distinct variants, matching the
    fine-tuning mask builder."""
    rows = tuple(
        RowLabel(
            r.image_index,
            0,
            r.role,
            Variant.ORIGINAL if r.turn_index == 0 else Variant.AUGMENTED,
        )
        for r in matrix.rows
    )
    return EmbeddingMatrix(rows=rows, values=matrix.values)


@dataclass
class _BatchForward:
    query_matrix: EmbeddingMatrix
    target_matrix: EmbeddingMatrix
    per_sample: list[dict]  # packed/cache/hidden handles plus row slices


def _forward_batch(
    state: enc.EncoderState,
    batch: list[MultiTurnSample],
    cfg: TrainConfig,
    markup: ChatMarkup,
    tokenizer: ByteTokenizer,
    adapt_seeds: list[int] | None,
) -> _BatchForward:
    q_rows: list[RowLabel] = []
    t_rows: list[RowLabel] = []
    q_values = []
    t_values = []
    per_sample = []
    adapted_variants = {0: Variant.ORIGINAL, 1: Variant.AUGMENTED}
    prompt_cfg = PromptConfig(
        mask_ratio=cfg.mask_ratio, template_variant=cfg.template_variant
    )
    for i, sample in enumerate(batch):
        if cfg.loss_variant is LossVariant.FINETUNE_ADAPTED:
            pair = sample.pairs[0]
            adapted = build_adapted_pair(
                pair.query_text, pair.target_text, prompt_cfg, markup, adapt_seeds[i]
            )
            packed_q = pack_adapted(
                adapted.query_initial,
                adapted.query_subsequent,
                markup,
                tokenizer,
                cfg.attention_mode,
                image_id=sample.image_id,
                image_tokens=sample.image_tokens,
            )
            packed_t = pack_adapted(
                adapted.target_initial,
                adapted.target_subsequent,
                markup,
                tokenizer,
                cfg.attention_mode,
            )
            variants = adapted_variants
        else:
            packed_q, packed_t = pack_multiturn(
                sample, markup, tokenizer, cfg.attention_mode
            )
            variants = None
        hidden_q, cache_q = enc.forward(state, packed_q)
        hidden_t, cache_t = enc.forward(state, packed_t)
        emb_q = enc.extract_embeddings(hidden_q, packed_q, i, Role.QUERY, variants)
        emb_t = enc.extract_embeddings(hidden_t, packed_t, i, Role.TARGET, variants)
        if variants is not None:
            emb_q = _relabel_adapted(emb_q)
            emb_t = _relabel_adapted(emb_t)
        start_q, start_t = len(q_rows), len(t_rows)
        q_rows.extend(emb_q.rows)
        t_rows.extend(emb_t.rows)
        q_values.append(emb_q.values)
        t_values.append(emb_t.values)
        per_sample.append(
            {
                "packed_q": packed_q,
                "packed_t": packed_t,
                "cache_q": cache_q,
                "cache_t": cache_t,
                "hidden_q": hidden_q,
                "hidden_t": hidden_t,
                "slice_q": slice(start_q, len(q_rows)),
                "slice_t": slice(start_t, len(t_rows)),
            }
        )
    return _BatchForward(
        query_matrix=EmbeddingMatrix(tuple(q_rows), np.vstack(q_values)),
        target_matrix=EmbeddingMatrix(tuple(t_rows), np.vstack(t_values)),
        per_sample=per_sample,
    )


def _build_spec(cfg: TrainConfig, fwd: _BatchForward, batch_size: int):
    if cfg.loss_variant is LossVariant.FINETUNE_ADAPTED:
        return build_mask_finetune(
            list(range(batch_size)), mask_counterpart=cfg.mask_counterpart
        )
    mask_same = cfg.mask_same_image and cfg.loss_variant is not LossVariant.NAIVE
    return build_mask_pretrain(
        list(fwd.query_matrix.rows), list(fwd.target_matrix.rows), mask_same
    )


def batch_loss(
    state: enc.EncoderState,
    batch: list[MultiTurnSample],
    cfg: TrainConfig,
    markup: ChatMarkup,
    tokenizer: ByteTokenizer,
    adapt_seeds: list[int] | None = None,
):
    """Forward + loss + full parameter gradient for one validated batch.

    Gradients are accumulated over sequences in sample order (query side
    then target side) so results are bit-reproducible.
    """
    if adapt_seeds is None:
        adapt_seeds = [0] * len(batch)
    fwd = _forward_batch(state, batch, cfg, markup, tokenizer, adapt_seeds)
    spec = _build_spec(cfg, fwd, len(batch))
    report, grad_q, grad_t = multiturn_infonce(
        fwd.query_matrix, fwd.target_matrix, spec, cfg.loss_config()
    )
    param_grads = state.zeros_like_params()
    for handles in fwd.per_sample:
        d_hidden_q = enc.extract_backward(
            handles["hidden_q"], handles["packed_q"], grad_q[handles["slice_q"]]
        )
        g, _ = enc.backward(state, handles["cache_q"], d_hidden_q)
        param_grads += g
        d_hidden_t = enc.extract_backward(
            handles["hidden_t"], handles["packed_t"], grad_t[handles["slice_t"]]
        )
        g, _ = enc.backward(state, handles["cache_t"], d_hidden_t)
        param_grads += g
    return report, param_grads


def train(
    corpus: list[MultiTurnSample],
    cfg: TrainConfig,
    markup: ChatMarkup | None = None,
    tokenizer: ByteTokenizer | None = None,
    state: enc.EncoderState | None = None,
):
    """Train the toy encoder on a validated corpus.

    Per step: sample a batch of images, shuffle each sample's turns, pack
    both sides, run the encoder, build the mask for the configured loss
    variant, and apply one optimizer update.  Deterministic for a fixed
    seed.  Returns (trained state, per-step losses).
    """
    corpus = list(validate_batch(corpus))
    markup = markup or ChatMarkup()
    tokenizer = tokenizer or ByteTokenizer(markup)
    if state is None:
        state = enc.init(
            enc.EncoderConfig(
                vocab_size=tokenizer.vocab_size,
                dim=cfg.dim,
                heads=cfg.heads,
                layers=cfg.layers,
                max_seq=cfg.max_seq,
                seed=cfg.seed,
            )
        )
    optimizer = _make_optimizer(cfg)
    rng = np.random.default_rng(cfg.seed)
    losses: list[float] = []
    for _ in range(cfg.steps):
        replace_draw = len(corpus) < cfg.batch_images
        indices = rng.choice(len(corpus), size=cfg.batch_images, replace=replace_draw)
        shuffle_seeds = rng.integers(0, 2**31 - 1, size=cfg.batch_images)
        batch = []
        for idx, sseed in zip(indices, shuffle_seeds):
            shuffled = shuffle_turns(corpus[idx], int(sseed))
            k = min(cfg.turns_per_image, shuffled.num_turns)
            batch.append(
                MultiTurnSample(
                    image_id=shuffled.image_id,
                    image_tokens=shuffled.image_tokens,
                    pairs=shuffled.pairs[:k],
                )
            )
        report, grads = batch_loss(
            state, batch, cfg, markup, tokenizer, adapt_seeds=list(shuffle_seeds)
        )
        new_params = optimizer.step(state.params, grads)
        state = enc.EncoderState(
            config=state.config, params=new_params, offsets=state.offsets
        )
        losses.append(report.total)
    return state, losses


def encode_single(
    state: enc.EncoderState,
    sample: MultiTurnSample,
    markup: ChatMarkup,
    tokenizer: ByteTokenizer,
    mode: AttentionMode = AttentionMode.CAUSAL,
):
    """Initial-turn query and target embeddings for a one-pair sample."""
    one_turn = MultiTurnSample(sample.image_id, sample.image_tokens, sample.pairs[:1])
    packed_q, packed_t = pack_multiturn(one_turn, markup, tokenizer, mode)
    hidden_q, _ = enc.forward(state, packed_q)
    hidden_t, _ = enc.forward(state, packed_t)
    emb_q = enc.extract_embeddings(hidden_q, packed_q, 0, Role.QUERY)
    emb_t = enc.extract_embeddings(hidden_t, packed_t, 0, Role.TARGET)
    return emb_q.values[0], emb_t.values[0]


def evaluate(
    state: enc.EncoderState,
    eval_set: list[MultiTurnSample],
    markup: ChatMarkup | None = None,
    tokenizer: ByteTokenizer | None = None,
    ks: tuple[int, ...] = (1, 5, 10),
) -> EvalReport:
    """Rank every target for every query by cosine similarity of the
    initial-turn embeddings.  Query i's relevant target is target i; ties
    break toward the lower target index."""
    if not eval_set:
        raise EmptyEvalSet("evaluation set is empty")
    markup = markup or ChatMarkup()
    tokenizer = tokenizer or ByteTokenizer(markup)
    queries = []
    targets = []
    for sample in eval_set:
        q, t = encode_single(state, sample, markup, tokenizer)
        queries.append(q)
        targets.append(t)
    q_mat = np.vstack(queries)
    t_mat = np.vstack(targets)
    sims = q_mat @ t_mat.T
    order = np.argsort(-sims, axis=1, kind="stable")
    n = len(eval_set)
    ranks = np.empty(n, dtype=np.int64)
    for i in range(n):
        ranks[i] = int(np.flatnonzero(order[i] == i)[0])
    recall = {k: float(np.mean(ranks < k)) for k in sorted(set(ks) | {1, n})}
    return EvalReport(
        precision_at_1=recall[1],
        recall_at_k=recall,
        candidates=n,
        queries=n,
    )


def make_separable_corpus(
    n_images: int = 64,
    pairs_per_image: int = 7,
    seed: int = 0,
    image_tokens: int = 4,
):
    """Synthetic corpus where distinct images have disjoint byte support.

    Each image owns one private character (never used by other images);
    its queries and targets repeat words built from that character, mixed
    with shared lowercase function words.  Returns (train samples,
    held-out eval samples with one fresh pair per image).
    """
    # lowercase letters are reserved for the shared function words below;
    # every other printable char may serve as an image's private token
    pool = list(
        string.ascii_uppercase
        + "bcdgjklmpqsuvxyz"
        + string.digits
        + "!#$%&()*+-/:;<=>?@[]^_{}~"
    )
    if n_images > len(pool):
        raise ValidationError(f"at most {len(pool)} separable images supported")
    rng = np.random.default_rng(seed)
    chars = [pool[i] for i in rng.permutation(len(pool))[:n_images]]
    function_words = ("the", "of", "with", "near")
    train_samples = []
    eval_samples = []
    for i, c in enumerate(chars):
        pairs = []
        for j in range(pairs_per_image):
            fw = function_words[j % len(function_words)]
            fw2 = function_words[(j + 1) % len(function_words)]
            query = f"{fw} {c * (2 + j % 4)} {c * (2 + (j + 1) % 4)}"
            target = f"{c * (2 + (j + 2) % 4)} {fw2}"
            pairs.append(TurnPair(query_text=query, target_text=target))
        image_id = f"img{i:03d}"
        train_samples.append(
            MultiTurnSample(image_id, image_tokens, tuple(pairs))
        )
        eval_samples.append(
            MultiTurnSample(
                image_id,
                image_tokens,
                (TurnPair(query_text=f"{function_words[0]} {c * 6}",
                          target_text=f"{c * 7} {function_words[1]}"),),
            )
        )
    return train_samples, eval_samples


def compare_scaling(
    corpus: list[MultiTurnSample],
    eval_set: list[MultiTurnSample],
    base_cfg: TrainConfig,
    cost_cfg: CostConfig | None = None,
) -> dict:
    """Train once multi-turn and once single-turn at the same image batch
    and step count; report precision and modeled FLOPs for each, plus the
    cost of matching the multi-turn effective batch by batch scaling."""
    if base_cfg.turns_per_image < 2:
        raise ValidationError("compare_scaling needs turns_per_image >= 2")
    cost_cfg = cost_cfg or CostConfig()
    rows = []
    for turns in (1, base_cfg.turns_per_image):
        cfg = replace(
            base_cfg,
            turns_per_image=turns,
            loss_variant=LossVariant.MULTI_TURN,
        )
        state, losses = train(corpus, cfg)
        report = evaluate(state, eval_set)
        rows.append(
            {
                "turns": turns,
                "batch_images": cfg.batch_images,
                "effective_batch": cfg.batch_images * turns,
                "precision_at_1": report.precision_at_1,
                "flops": iteration_cost(cost_cfg, cfg.batch_images, turns),
                "final_loss": losses[-1],
            }
        )
    scaled_batch = base_cfg.batch_images * base_cfg.turns_per_image
    rows.append(
        {
            "turns": 1,
            "batch_images": scaled_batch,
            "effective_batch": scaled_batch,
            "precision_at_1": None,  # cost-only row: batch-scaled baseline
            "flops": iteration_cost(cost_cfg, scaled_batch, 1),
            "final_loss": None,
        }
    )
    return {"rows": rows}


def load_corpus_jsonl(path: str, image_tokens: int = 4) -> list[MultiTurnSample]:
    """Load synthesized records (datagen output format) as training samples."""
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            record = record_from_json(line, lineno)
            samples.append(
                MultiTurnSample(
                    image_id=record.image_id,
                    image_tokens=image_tokens,
                    pairs=record.pairs,
                )
            )
    return samples


def load_eval_pairs_jsonl(path: str, image_tokens: int = 4) -> list[MultiTurnSample]:
    """Load single-turn eval pairs: {"image_id", "query", "target"} lines."""
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            samples.append(
                MultiTurnSample(
                    image_id=str(obj["image_id"]),
                    image_tokens=int(obj.get("image_tokens", image_tokens)),
                    pairs=(TurnPair(obj["query"], obj["target"]),),
                )
            )
    return samples
