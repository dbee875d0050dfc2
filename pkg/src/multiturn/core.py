"""Shared domain types: samples, row labels, embedding matrices, loss config."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

UNIT_NORM_TOL = 1e-9


class TaskTag(str, Enum):
    CLS = "cls"
    RET = "ret"
    GLOBAL_VQA = "global_vqa"
    LOCAL_VQA = "local_vqa"
    CREATIVE_VQA = "creative_vqa"
    GENERIC = "generic"


class Role(str, Enum):
    QUERY = "query"
    TARGET = "target"


class Variant(str, Enum):
    ORIGINAL = "original"
    AUGMENTED = "augmented"


class ValidationError(ValueError):
    """Base class for batch/type validation failures."""


class EmptyText(ValidationError):
    pass


class EmptyPairs(ValidationError):
    pass


class DuplicateImageId(ValidationError):
    pass


class NonUnitEmbedding(ValidationError):
    pass


@dataclass(frozen=True)
class TurnPair:
    """One query/positive-target text pair tied to a shared image context."""

    query_text: str
    target_text: str
    task_tag: TaskTag = TaskTag.GENERIC

    def __post_init__(self):
        if not self.query_text.strip():
            raise EmptyText("query_text is empty after trimming")
        if not self.target_text.strip():
            raise EmptyText("target_text is empty after trimming")


@dataclass(frozen=True)
class MultiTurnSample:
    """An image context (as a pseudo-token count) with ordered turn pairs."""

    image_id: str
    image_tokens: int
    pairs: tuple[TurnPair, ...]

    def __post_init__(self):
        if self.image_tokens < 0:
            raise ValidationError("image_tokens must be >= 0")
        if len(self.pairs) == 0:
            raise EmptyPairs(f"sample {self.image_id!r} has no pairs")
        object.__setattr__(self, "pairs", tuple(self.pairs))

    @property
    def num_turns(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True, order=True)
class RowLabel:
    """Identity of one embedding row: which image, turn, side, and form."""

    image_index: int
    turn_index: int
    role: Role
    variant: Variant = Variant.ORIGINAL

    def __post_init__(self):
        if self.image_index < 0 or self.turn_index < 0:
            raise ValidationError("indices must be >= 0")


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Row-major matrix of unit-norm embeddings with one label per row."""

    rows: tuple[RowLabel, ...]
    values: np.ndarray  # (len(rows), dim) float64

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError("values must be a 2-D array")
        if values.shape[0] != len(self.rows):
            raise ValidationError(
                f"{len(self.rows)} labels but {values.shape[0]} value rows"
            )
        if values.shape[1] < 1:
            raise ValidationError("dim must be >= 1")
        norms = np.linalg.norm(values, axis=1)
        if norms.size and np.max(np.abs(norms - 1.0)) > UNIT_NORM_TOL:
            worst = int(np.argmax(np.abs(norms - 1.0)))
            raise NonUnitEmbedding(
                f"row {worst} has norm {norms[worst]!r}, expected 1 +/- {UNIT_NORM_TOL}"
            )
        object.__setattr__(self, "rows", tuple(self.rows))
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    def row_index(self) -> dict[RowLabel, int]:
        index: dict[RowLabel, int] = {}
        for i, label in enumerate(self.rows):
            if label in index:
                raise ValidationError(f"duplicate row label {label}")
            index[label] = i
        return index


@dataclass(frozen=True)
class LossConfig:
    """Temperature and the two logit-masking toggles."""

    temperature: float = 0.02
    mask_same_image: bool = True
    mask_counterpart: bool = True

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValidationError("temperature must be > 0")


def validate_batch(samples: Sequence[MultiTurnSample]) -> tuple[MultiTurnSample, ...]:
    """Check batch-level invariants and return the batch unchanged.

    Image ids must be pairwise distinct within the batch; per-sample
    invariants (non-empty pairs, non-empty texts) are enforced by the
    type constructors, so a tuple of MultiTurnSample is already sound
    at the sample level.
    """
    seen: set[str] = set()
    for sample in samples:
        if sample.image_id in seen:
            raise DuplicateImageId(f"image_id {sample.image_id!r} repeats in batch")
        seen.add(sample.image_id)
    return tuple(samples)
