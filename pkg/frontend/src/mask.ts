import { LabelMismatch, RowLabel, labelKey } from "./labels.js";

export const NEGATIVE = 0;
export const POSITIVE = 1;
export const MASKED = 2;

export interface LossConfig {
  temperature: number;
  maskSameImage: boolean;
  maskCounterpart: boolean;
}

export const DEFAULT_LOSS_CONFIG: LossConfig = {
  temperature: 0.02,
  maskSameImage: true,
  maskCounterpart: true,
};

/**
 * Label-driven pair classification, mirroring the native rule: the positive
 * for query (i, j, v) is target (i, j, v); other-turn targets of the same
 * image are masked when maskSameImage is on; the opposite form of the
 * aligned target is masked when maskCounterpart is on; cross-image targets
 * are negatives.
 */
export function buildMaskFromLabels(
  queries: RowLabel[],
  targets: RowLabel[],
  cfg: LossConfig,
): Int8Array[] {
  const col = new Map<string, number>();
  targets.forEach((t, j) => {
    const key = labelKey(t);
    if (col.has(key)) {
      throw new LabelMismatch(`duplicate target label ${key}`);
    }
    col.set(key, j);
  });
  return queries.map((q) => {
    const row = new Int8Array(targets.length).fill(NEGATIVE);
    const pos = col.get(labelKey(q));
    if (pos === undefined) {
      throw new LabelMismatch(
        `no target aligned with query ${labelKey(q)}`,
      );
    }
    targets.forEach((t, j) => {
      if (t.imageIndex !== q.imageIndex || j === pos) {
        return;
      }
      const sameTurnOtherForm =
        t.turnIndex === q.turnIndex && t.variant !== q.variant;
      if (sameTurnOtherForm) {
        if (cfg.maskCounterpart) {
          row[j] = MASKED;
        }
      } else if (cfg.maskSameImage) {
        row[j] = MASKED;
      }
    });
    row[pos] = POSITIVE;
    return row;
  });
}
