// Mirrors of the native cost model; formulas and operation order must match
// so values agree to the last unit in the last place.

export const TFLOP = 1e12;
export const PFLOP = 1e15;
export const IMAGE_TOKENS_DEFAULT = 294;
export const TEXT_TOKENS_DEFAULT = 25;
export const FLOPS_PER_IMAGE_TOKEN = (2.24 * TFLOP) / IMAGE_TOKENS_DEFAULT;
export const FLOPS_PER_TEXT_TOKEN = (0.12 * TFLOP) / TEXT_TOKENS_DEFAULT;
export const BACKWARD_MULTIPLIER_FITTED = 6.907408778450762;
export const EXTRA_PAIR_TOKENS_FITTED = 2;

export interface CostConfig {
  flopsPerImageToken: number;
  flopsPerTextToken: number;
  backwardMultiplier: number;
  imageTokens: number;
  queryTextTokens: number;
  targetTextTokens: number;
  perExtraPairTokens: number;
}

export const DEFAULT_COST_CONFIG: CostConfig = {
  flopsPerImageToken: FLOPS_PER_IMAGE_TOKEN,
  flopsPerTextToken: FLOPS_PER_TEXT_TOKEN,
  backwardMultiplier: BACKWARD_MULTIPLIER_FITTED,
  imageTokens: IMAGE_TOKENS_DEFAULT,
  queryTextTokens: TEXT_TOKENS_DEFAULT,
  targetTextTokens: TEXT_TOKENS_DEFAULT,
  perExtraPairTokens: EXTRA_PAIR_TOKENS_FITTED,
};

export function baseForwardFlops(cfg: CostConfig): number {
  return (
    cfg.imageTokens * cfg.flopsPerImageToken +
    (cfg.queryTextTokens + cfg.targetTextTokens) * cfg.flopsPerTextToken
  );
}

export function extraPairForwardFlops(cfg: CostConfig): number {
  return cfg.perExtraPairTokens * cfg.flopsPerTextToken;
}

/** Total FLOPs of one training iteration; exactly linear in batch. */
export function iterationCost(
  cfg: CostConfig,
  batch: number,
  turns: number,
): number {
  if (batch < 1 || turns < 1) {
    throw new RangeError("batch and turns must be >= 1");
  }
  const perSample = baseForwardFlops(cfg) + (turns - 1) * extraPairForwardFlops(cfg);
  return batch * cfg.backwardMultiplier * perSample;
}

export function efficiencyRatio(
  cfg: CostConfig,
  batch: number,
  turns: number,
): number {
  return iterationCost(cfg, batch, turns) / iterationCost(cfg, batch, 1);
}
