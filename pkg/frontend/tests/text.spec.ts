import { readFileSync } from "node:fs";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import {
  DEFAULT_PROMPT_CONFIG,
  TemplateVariant,
  buildAdaptedPair,
} from "../src/adapted.js";
import { maskWords } from "../src/maskWords.js";

interface MaskCase {
  text: string;
  ratio: number;
  seed: number;
  maskToken: string;
  expected: string;
}

interface AdaptedCase {
  query: string;
  target: string;
  maskRatio: number;
  seed: number;
  variant: TemplateVariant;
  expected: {
    queryInitial: string;
    querySubsequent: string;
    targetInitial: string;
    targetSubsequent: string;
  };
}

const payload = JSON.parse(
  readFileSync(join(__dirname, "..", "fixtures", "text_cases.json"), "utf-8"),
) as { maskWords: MaskCase[]; adaptedPairs: AdaptedCase[] };

describe("maskWords parity", () => {
  it("has 100 fixture cases", () => {
    expect(payload.maskWords.length).toBe(100);
  });

  it("is byte-identical to native output on every case", () => {
    for (const c of payload.maskWords) {
      expect(maskWords(c.text, c.ratio, c.seed, c.maskToken)).toBe(c.expected);
    }
  });

  it("leaves empty text unchanged", () => {
    expect(maskWords("", 1.0, 0, "#")).toBe("");
  });

  it("masks floor(ratio x words) exactly", () => {
    const out = maskWords("a b c d e f", 0.5, 9, "#");
    expect(out.split(" ").filter((w) => w === "#").length).toBe(3);
  });
});

describe("adapted-pair parity", () => {
  it("is byte-identical to native output on every case", () => {
    for (const c of payload.adaptedPairs) {
      const pair = buildAdaptedPair(
        c.query,
        c.target,
        {
          ...DEFAULT_PROMPT_CONFIG,
          maskRatio: c.maskRatio,
          templateVariant: c.variant,
        },
        c.seed,
      );
      expect(pair.queryInitial).toBe(c.expected.queryInitial);
      expect(pair.querySubsequent).toBe(c.expected.querySubsequent);
      expect(pair.targetInitial).toBe(c.expected.targetInitial);
      expect(pair.targetSubsequent).toBe(c.expected.targetSubsequent);
    }
  });

  it("covers every template variant", () => {
    const variants = new Set(payload.adaptedPairs.map((c) => c.variant));
    expect(variants).toEqual(
      new Set([
        "reconstruction",
        "rephrasing",
        "self_reconstruction",
        "no_guidance",
      ]),
    );
  });
});
