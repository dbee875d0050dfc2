import { readFileSync } from "node:fs";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import {
  CostConfig,
  DEFAULT_COST_CONFIG,
  efficiencyRatio,
  iterationCost,
} from "../src/cost.js";

interface CostCase {
  configName: string;
  batch: number;
  turns: number;
  expectedFlops: number;
  expectedRatio: number;
}

const payload = JSON.parse(
  readFileSync(join(__dirname, "..", "fixtures", "cost_cases.json"), "utf-8"),
) as { configs: Record<string, CostConfig>; cases: CostCase[] };

describe("cost parity", () => {
  it("matches native iteration costs to 1e-12 relative", () => {
    for (const c of payload.cases) {
      const cfg = payload.configs[c.configName];
      const flops = iterationCost(cfg, c.batch, c.turns);
      expect(Math.abs(flops - c.expectedFlops) / c.expectedFlops).toBeLessThan(
        1e-12,
      );
      const ratio = efficiencyRatio(cfg, c.batch, c.turns);
      expect(Math.abs(ratio - c.expectedRatio)).toBeLessThan(1e-12);
    }
  });

  it("shares the native default calibration", () => {
    const fitted = payload.configs["fitted"];
    expect(DEFAULT_COST_CONFIG.backwardMultiplier).toBe(
      fitted.backwardMultiplier,
    );
    expect(DEFAULT_COST_CONFIG.perExtraPairTokens).toBe(
      fitted.perExtraPairTokens,
    );
    expect(DEFAULT_COST_CONFIG.flopsPerImageToken).toBe(
      fitted.flopsPerImageToken,
    );
  });

  it("keeps the multi-turn economics", () => {
    expect(efficiencyRatio(DEFAULT_COST_CONFIG, 1024, 7)).toBeLessThanOrEqual(
      1.05,
    );
    const scaled =
      iterationCost(DEFAULT_COST_CONFIG, 7168, 1) /
      iterationCost(DEFAULT_COST_CONFIG, 1024, 1);
    expect(scaled).toBeCloseTo(7.0, 9);
  });

  it("rejects invalid arguments", () => {
    expect(() => iterationCost(DEFAULT_COST_CONFIG, 0, 1)).toThrow(RangeError);
  });
});
