"""Training-cost accounting: an affine FLOPs model over image and text
tokens, calibrated so one average 294-token image costs 2.24 TFLOPs and an
average 25-token text costs 0.12 TFLOPs to encode.

The marginal dialogue turn adds only text tokens, so multi-turn batches
amplify the effective batch at a few percent of the cost of scaling the
image batch itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ValidationError

TFLOP = 1e12
PFLOP = 1e15

# Point calibrations for a ~2B multimodal backbone.
IMAGE_TOKENS_DEFAULT = 294
TEXT_TOKENS_DEFAULT = 25
FLOPS_PER_IMAGE_TOKEN = 2.24 * TFLOP / IMAGE_TOKENS_DEFAULT
FLOPS_PER_TEXT_TOKEN = 0.12 * TFLOP / TEXT_TOKENS_DEFAULT

# Defaults produced by fit_scaling on REFERENCE_SCALING_ROWS (tested to
# match a fresh fit); the multiplier folds backward and optimizer cost.
BACKWARD_MULTIPLIER_FITTED = 6.907408778450762
EXTRA_PAIR_TOKENS_FITTED = 2


class DegenerateFit(ValidationError):
    pass


@dataclass(frozen=True)
class CostConfig:
    flops_per_image_token: float = FLOPS_PER_IMAGE_TOKEN
    flops_per_text_token: float = FLOPS_PER_TEXT_TOKEN
    backward_multiplier: float = BACKWARD_MULTIPLIER_FITTED
    image_tokens: int = IMAGE_TOKENS_DEFAULT
    query_text_tokens: int = TEXT_TOKENS_DEFAULT
    target_text_tokens: int = TEXT_TOKENS_DEFAULT
    per_extra_pair_tokens: int = EXTRA_PAIR_TOKENS_FITTED

    def __post_init__(self):
        for name in (
            "flops_per_image_token",
            "flops_per_text_token",
            "backward_multiplier",
        ):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")
        for name in ("image_tokens", "query_text_tokens", "target_text_tokens"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")

    @property
    def base_forward_flops(self) -> float:
        """Forward FLOPs for one sample's image plus first-pair text."""
        return (
            self.image_tokens * self.flops_per_image_token
            + (self.query_text_tokens + self.target_text_tokens)
            * self.flops_per_text_token
        )

    @property
    def extra_pair_forward_flops(self) -> float:
        return self.per_extra_pair_tokens * self.flops_per_text_token


@dataclass(frozen=True)
class ScalingRow:
    turns: int
    batch: int
    pflops: float

    @property
    def effective_batch(self) -> int:
        return self.turns * self.batch


# Published per-iteration PFLOPs for a 2B backbone at the stated
# (turns, batch) settings; used to calibrate the fitted config.
REFERENCE_SCALING_ROWS: tuple[ScalingRow, ...] = (
    ScalingRow(1, 1024, 17.5),
    ScalingRow(1, 2048, 35.1),
    ScalingRow(1, 4096, 70.2),
    ScalingRow(1, 7168, 122.7),
    ScalingRow(1, 8192, 140.4),
    ScalingRow(2, 1024, 17.6),
    ScalingRow(4, 1024, 17.7),
    ScalingRow(7, 1024, 18.0),
)


def iteration_cost(cfg: CostConfig, batch: int, turns: int) -> float:
    """Total FLOPs for one training iteration.

    batch x multiplier x [image tokens + first-pair text + (turns - 1) extra
    pairs of text]; exactly linear in batch, affine in turns.
    """
    if batch < 1 or turns < 1:
        raise ValidationError("batch and turns must be >= 1")
    per_sample = cfg.base_forward_flops + (turns - 1) * cfg.extra_pair_forward_flops
    return batch * cfg.backward_multiplier * per_sample


def efficiency_ratio(cfg: CostConfig, batch: int, turns: int) -> float:
    """Cost of the multi-turn iteration relative to its single-turn batch."""
    return iteration_cost(cfg, batch, turns) / iteration_cost(cfg, batch, 1)


@dataclass(frozen=True)
class FitResult:
    config: CostConfig
    per_sample_base_flops: float
    per_extra_pair_flops: float
    residuals: tuple[float, ...]  # relative, per input row

    @property
    def max_relative_residual(self) -> float:
        return max(abs(r) for r in self.residuals)


def fit_scaling(
    rows: list[ScalingRow] | tuple[ScalingRow, ...] = REFERENCE_SCALING_ROWS,
    base: CostConfig | None = None,
) -> FitResult:
    """Least-squares fit of (per-sample base cost, per-extra-pair cost) to
    measured per-iteration PFLOPs.

    cost(batch, turns) = batch * (alpha + (turns - 1) * beta); needs rows
    that vary batch at turns=1 and vary turns at a fixed batch, otherwise
    the two coefficients are not identifiable.  The fitted coefficients are
    folded back into a CostConfig: alpha fixes the backward multiplier on
    top of the point-calibrated token rates, beta fixes the marginal-pair
    token count.
    """
    rows = tuple(rows)
    if sum(1 for r in rows if r.turns == 1) < 2:
        raise DegenerateFit("need >= 2 rows with turns=1 to fix the base cost")
    if sum(1 for r in rows if r.turns > 1) < 1:
        raise DegenerateFit("need >= 1 multi-turn row to fix the per-pair cost")

    design = np.array([[r.batch, r.batch * (r.turns - 1)] for r in rows], float)
    observed = np.array([r.pflops * PFLOP for r in rows])
    (alpha, beta), *_ = np.linalg.lstsq(design, observed, rcond=None)

    base = base or CostConfig()
    multiplier = alpha / base.base_forward_flops
    extra_tokens = max(
        1, round(beta / (multiplier * base.flops_per_text_token))
    )
    fitted = CostConfig(
        flops_per_image_token=base.flops_per_image_token,
        flops_per_text_token=base.flops_per_text_token,
        backward_multiplier=float(multiplier),
        image_tokens=base.image_tokens,
        query_text_tokens=base.query_text_tokens,
        target_text_tokens=base.target_text_tokens,
        per_extra_pair_tokens=int(extra_tokens),
    )
    residuals = tuple(
        (iteration_cost(fitted, r.batch, r.turns) - r.pflops * PFLOP)
        / (r.pflops * PFLOP)
        for r in rows
    )
    return FitResult(
        config=fitted,
        per_sample_base_flops=float(alpha),
        per_extra_pair_flops=float(beta),
        residuals=residuals,
    )
