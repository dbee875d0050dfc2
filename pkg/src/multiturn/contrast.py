"""Masked logit matrices and the contrastive loss family.

Losses operate on unit-norm embedding matrices: cosine similarities divided
by a temperature, with excluded pairs forced to -inf before the softmax so
they drop out of the denominator.  Analytic gradients with respect to both
embedding matrices are returned alongside every loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import (
    EmbeddingMatrix,
    LossConfig,
    Role,
    RowLabel,
    ValidationError,
    Variant,
)


class PairKind(int, Enum):
    NEGATIVE = 0
    POSITIVE = 1
    MASKED = 2


class MissingAlignedPositive(ValidationError):
    pass


class UnpairedAugmentation(ValidationError):
    pass


class LabelMismatch(ValidationError):
    pass


@dataclass(frozen=True)
class MaskedLogitSpec:
    """Per-(query, target) pair classification: positive, negative, or masked.

    queries lists one row per loss term; the same query label may appear in
    several terms (the fine-tuning construction pairs each query form with
    both target forms).  kind is a dense (terms x targets) int matrix of
    PairKind values with exactly one positive per row.
    """

    queries: tuple[RowLabel, ...]
    targets: tuple[RowLabel, ...]
    kind: np.ndarray

    def __post_init__(self):
        kind = np.asarray(self.kind, dtype=np.int8)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "queries", tuple(self.queries))
        object.__setattr__(self, "targets", tuple(self.targets))
        if kind.shape != (len(self.queries), len(self.targets)):
            raise ValidationError("kind matrix shape does not match label counts")
        pos_per_row = (kind == PairKind.POSITIVE.value).sum(axis=1)
        if kind.shape[0] and not np.all(pos_per_row == 1):
            bad = int(np.flatnonzero(pos_per_row != 1)[0])
            raise ValidationError(f"query row {bad} has {pos_per_row[bad]} positives")

    @property
    def positive_cols(self) -> np.ndarray:
        return np.argmax(self.kind == PairKind.POSITIVE.value, axis=1)

    def negatives_per_row(self) -> np.ndarray:
        return (self.kind == PairKind.NEGATIVE.value).sum(axis=1)


@dataclass(frozen=True)
class LossReport:
    total: float
    per_term: tuple[tuple[RowLabel, float], ...]
    effective_negatives_per_query: int
    logits: np.ndarray  # raw similarities / temperature, no masking applied


def build_mask_pretrain(
    queries: list[RowLabel],
    targets: list[RowLabel],
    mask_same_image: bool = True,
) -> MaskedLogitSpec:
    """Multi-turn pretraining rule: the aligned same-(image, turn) target is
    the positive, other targets of the same image are masked out, and all
    targets of other images are negatives.
    """
    target_lookup = {(t.image_index, t.turn_index): j for j, t in enumerate(targets)}
    kind = np.full((len(queries), len(targets)), PairKind.NEGATIVE.value, np.int8)
    for i, q in enumerate(queries):
        j = target_lookup.get((q.image_index, q.turn_index))
        if j is None:
            raise MissingAlignedPositive(
                f"no target aligned with query ({q.image_index}, {q.turn_index})"
            )
        for col, t in enumerate(targets):
            if t.image_index == q.image_index and col != j and mask_same_image:
                kind[i, col] = PairKind.MASKED.value
        kind[i, j] = PairKind.POSITIVE.value
    return MaskedLogitSpec(tuple(queries), tuple(targets), kind)


def build_mask_finetune(
    sample_indices: list[int],
    mask_counterpart: bool = True,
) -> MaskedLogitSpec:
    """Single-turn adaptation rule over original/augmented forms.

    Each sample contributes query rows {q, q'} and target columns {p, p'};
    the augmented batch pairs every query form with every target form, giving
    four terms per sample.  Within a term, the opposite form of the term's
    positive is masked (it is near-duplicate content, not a real negative);
    targets of other samples, both forms, are negatives.
    """
    queries: list[RowLabel] = []
    targets: list[RowLabel] = []
    for i in sample_indices:
        for variant in (Variant.ORIGINAL, Variant.AUGMENTED):
            targets.append(RowLabel(i, 0, Role.TARGET, variant))
    target_col = {(t.image_index, t.variant): j for j, t in enumerate(targets)}
    if len(target_col) != len(targets):
        raise UnpairedAugmentation("duplicate sample index in fine-tuning batch")

    rows: list[np.ndarray] = []
    for i in sample_indices:
        for q_variant in (Variant.ORIGINAL, Variant.AUGMENTED):
            for p_variant in (Variant.ORIGINAL, Variant.AUGMENTED):
                queries.append(RowLabel(i, 0, Role.QUERY, q_variant))
                row = np.full(len(targets), PairKind.NEGATIVE.value, np.int8)
                pos = target_col[(i, p_variant)]
                other = target_col[(i, _opposite(p_variant))]
                row[pos] = PairKind.POSITIVE.value
                row[other] = (
                    PairKind.MASKED.value if mask_counterpart else PairKind.NEGATIVE.value
                )
                rows.append(row)
    kind = np.stack(rows) if rows else np.zeros((0, len(targets)), np.int8)
    return MaskedLogitSpec(tuple(queries), tuple(targets), kind)


def _opposite(variant: Variant) -> Variant:
    return Variant.AUGMENTED if variant is Variant.ORIGINAL else Variant.ORIGINAL


def build_mask_from_labels(
    queries: list[RowLabel],
    targets: list[RowLabel],
    cfg: LossConfig,
) -> MaskedLogitSpec:
    """Label-driven rule shared with the language bindings.

    The positive for query (i, j, v) is target (i, j, v); with same-image
    masking on, other-turn targets of image i are masked; with counterpart
    masking on, the opposite form of the aligned target is masked.
    """
    col = {(t.image_index, t.turn_index, t.variant): j for j, t in enumerate(targets)}
    if len(col) != len(targets):
        raise LabelMismatch("duplicate target labels")
    kind = np.full((len(queries), len(targets)), PairKind.NEGATIVE.value, np.int8)
    for i, q in enumerate(queries):
        pos = col.get((q.image_index, q.turn_index, q.variant))
        if pos is None:
            raise MissingAlignedPositive(f"no target aligned with {q}")
        for j, t in enumerate(targets):
            if t.image_index != q.image_index or j == pos:
                continue
            same_turn_other_form = (
                t.turn_index == q.turn_index and t.variant != q.variant
            )
            if same_turn_other_form:
                if cfg.mask_counterpart:
                    kind[i, j] = PairKind.MASKED.value
            elif cfg.mask_same_image:
                kind[i, j] = PairKind.MASKED.value
        kind[i, pos] = PairKind.POSITIVE.value
    return MaskedLogitSpec(tuple(queries), tuple(targets), kind)


def _resolve_rows(
    embeddings: EmbeddingMatrix, labels: tuple[RowLabel, ...]
) -> np.ndarray:
    index = embeddings.row_index()
    try:
        return np.array([index[label] for label in labels], dtype=np.int64)
    except KeyError as exc:
        raise LabelMismatch(f"embedding matrix has no row {exc.args[0]}") from exc


def _loss_from_values(
    q_values: np.ndarray,
    t_values: np.ndarray,
    q_idx: np.ndarray,
    spec: MaskedLogitSpec,
    temperature: float,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Core loss on raw arrays.  Returns (total, per_term, raw_logits,
    grad_q, grad_t); grad_q is with respect to the distinct query rows.
    """
    n_terms = len(spec.queries)
    q_terms = q_values[q_idx]
    logits = (q_terms @ t_values.T) / temperature
    masked = spec.kind == PairKind.MASKED.value
    pos_cols = spec.positive_cols

    work = np.where(masked, -np.inf, logits)
    row_max = np.max(work, axis=1, keepdims=True)
    expw = np.exp(work - row_max)
    denom = expw.sum(axis=1)
    lse = row_max[:, 0] + np.log(denom)
    pos_logit = logits[np.arange(n_terms), pos_cols]
    per_term = lse - pos_logit
    total = float(per_term.mean()) if n_terms else 0.0

    # d total / d logits = (softmax - onehot(pos)) / n_terms on allowed entries
    probs = expw / denom[:, None]
    grad_logits = probs / n_terms
    grad_logits[np.arange(n_terms), pos_cols] -= 1.0 / n_terms
    grad_logits[masked] = 0.0

    grad_q_terms = (grad_logits @ t_values) / temperature
    grad_t = (grad_logits.T @ q_terms) / temperature
    grad_q = np.zeros_like(q_values)
    np.add.at(grad_q, q_idx, grad_q_terms)
    return total, per_term, logits, grad_q, grad_t


def _unique_negative_count(spec: MaskedLogitSpec) -> int:
    counts = spec.negatives_per_row()
    if counts.size == 0:
        return 0
    return int(counts[0]) if np.all(counts == counts[0]) else int(counts.max())


def multiturn_infonce(
    query_embeddings: EmbeddingMatrix,
    target_embeddings: EmbeddingMatrix,
    spec: MaskedLogitSpec,
    cfg: LossConfig,
) -> tuple[LossReport, np.ndarray, np.ndarray]:
    """Multi-turn masked InfoNCE: mean over terms of
    -log( exp(s_pos / tau) / sum_{positive + negatives} exp(s / tau) ).

    Masked entries are excluded from the denominator entirely.  Returns the
    report plus gradients with respect to both embedding matrices.
    """
    if len(spec.targets) != len(target_embeddings.rows):
        raise LabelMismatch("target label count differs from embedding rows")
    q_idx = _resolve_rows(query_embeddings, spec.queries)
    t_idx = _resolve_rows(target_embeddings, spec.targets)
    if np.unique(t_idx).size != t_idx.size:
        raise LabelMismatch("spec target labels must be distinct")
    t_values = target_embeddings.values[t_idx]

    total, per_term, logits, grad_q, grad_t_perm = _loss_from_values(
        query_embeddings.values, t_values, q_idx, spec, cfg.temperature
    )
    grad_t = np.zeros_like(target_embeddings.values)
    grad_t[t_idx] = grad_t_perm
    report = LossReport(
        total=total,
        per_term=tuple(zip(spec.queries, per_term.tolist())),
        effective_negatives_per_query=_unique_negative_count(spec),
        logits=logits,
    )
    return report, grad_q, grad_t


def naive_multipair_loss(
    query_embeddings: EmbeddingMatrix,
    target_embeddings: EmbeddingMatrix,
    cfg: LossConfig,
) -> tuple[LossReport, np.ndarray, np.ndarray]:
    """Multi-pair InfoNCE without same-image masking: every non-positive
    target is a negative, so same-image targets act as false negatives.
    """
    spec = build_mask_pretrain(
        list(query_embeddings.rows), list(target_embeddings.rows), mask_same_image=False
    )
    return multiturn_infonce(query_embeddings, target_embeddings, spec, cfg)


def single_turn_infonce(
    query_embeddings: EmbeddingMatrix,
    target_embeddings: EmbeddingMatrix,
    cfg: LossConfig,
) -> tuple[LossReport, np.ndarray, np.ndarray]:
    """Standard InfoNCE over one query/target pair per sample."""
    for label in query_embeddings.rows:
        if label.turn_index != 0:
            raise LabelMismatch("single-turn loss expects turn_index 0 everywhere")
    spec = build_mask_pretrain(
        list(query_embeddings.rows), list(target_embeddings.rows)
    )
    return multiturn_infonce(query_embeddings, target_embeddings, spec, cfg)


def effective_negatives(batch_images: int, turns: int) -> int:
    """Negatives available to each query: all other images' targets."""
    if batch_images < 1 or turns < 1:
        raise ValidationError("batch_images and turns must be >= 1")
    return batch_images * turns - turns


def scalar_loss(
    q_values: np.ndarray,
    t_values: np.ndarray,
    spec: MaskedLogitSpec,
    temperature: float,
) -> float:
    """Loss total on raw (not necessarily unit-norm) arrays; the query rows
    must already be laid out one per spec term.  Used for finite-difference
    probing, where perturbed rows leave the unit sphere."""
    q_idx = np.arange(len(spec.queries))
    total, *_ = _loss_from_values(q_values, t_values, q_idx, spec, temperature)
    return total


def gradcheck_embeddings(
    dim: int = 8,
    images: int = 3,
    turns: int = 2,
    seed: int = 0,
    tol: float = 1e-6,
    temperature: float = 0.02,
    step: float = 1e-6,
) -> dict:
    """Central finite differences on both embedding matrices vs the analytic
    gradients of the masked multi-turn loss.  Returns max relative errors
    (2-norm over the whole gradient) and a pass flag."""
    rng = np.random.default_rng(seed)

    def unit_rows(n):
        values = rng.standard_normal((n, dim))
        return values / np.linalg.norm(values, axis=1, keepdims=True)

    labels = [
        RowLabel(i, j, role)
        for role in (Role.QUERY, Role.TARGET)
        for i in range(images)
        for j in range(turns)
    ]
    q_labels = tuple(l for l in labels if l.role is Role.QUERY)
    t_labels = tuple(l for l in labels if l.role is Role.TARGET)
    q_values = unit_rows(len(q_labels))
    t_values = unit_rows(len(t_labels))
    spec = build_mask_pretrain(list(q_labels), list(t_labels))
    cfg = LossConfig(temperature=temperature)
    _, grad_q, grad_t = multiturn_infonce(
        EmbeddingMatrix(q_labels, q_values),
        EmbeddingMatrix(t_labels, t_values),
        spec,
        cfg,
    )

    def fd(values, other, is_query):
        grad = np.zeros_like(values)
        for r in range(values.shape[0]):
            for c in range(values.shape[1]):
                for sign in (+1, -1):
                    bumped = values.copy()
                    bumped[r, c] += sign * step
                    args = (bumped, other) if is_query else (other, bumped)
                    grad[r, c] += sign * scalar_loss(*args, spec, temperature)
        return grad / (2 * step)

    fd_q = fd(q_values, t_values, True)
    fd_t = fd(t_values, q_values, False)

    def rel(analytic, numeric):
        denom = max(float(np.linalg.norm(numeric)), 1e-12)
        return float(np.linalg.norm(analytic - numeric)) / denom

    err_q = rel(grad_q, fd_q)
    err_t = rel(grad_t, fd_t)
    return {
        "dim": dim,
        "images": images,
        "turns": turns,
        "seed": seed,
        "step": step,
        "tol": tol,
        "max_rel_error_q": err_q,
        "max_rel_error_t": err_t,
        "passed": bool(err_q < tol and err_t < tol),
    }
