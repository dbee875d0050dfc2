import { createHash } from "node:crypto";

/**
 * Seeded uniform without-replacement word masking, byte-identical to the
 * native implementation: words (split on single spaces) are ranked by the
 * first 8 bytes of sha256("{seed}:{index}") and the floor(ratio * count)
 * smallest keys are replaced by the mask token.
 */
export function maskWords(
  text: string,
  ratio: number,
  seed: number,
  maskToken: string,
): string {
  if (!(ratio >= 0 && ratio <= 1)) {
    throw new RangeError("ratio must be in [0, 1]");
  }
  if (text === "") {
    return text;
  }
  const words = text.split(" ");
  const count = Math.floor(ratio * words.length);
  const keys: Array<[bigint, number]> = [];
  for (let i = 0; i < words.length; i++) {
    const digest = createHash("sha256").update(`${seed}:${i}`).digest();
    keys.push([digest.readBigUInt64BE(0), i]);
  }
  keys.sort((a, b) => (a[0] < b[0] ? -1 : a[0] > b[0] ? 1 : a[1] - b[1]));
  const masked = new Set(keys.slice(0, count).map(([, i]) => i));
  return words.map((w, i) => (masked.has(i) ? maskToken : w)).join(" ");
}
