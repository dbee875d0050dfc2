import { BufferView } from "./buffer.js";
import { LabelMismatch, ShapeMismatch } from "./labels.js";
import {
  DEFAULT_LOSS_CONFIG,
  LossConfig,
  MASKED,
  NEGATIVE,
  POSITIVE,
  buildMaskFromLabels,
} from "./mask.js";

export interface LossResult {
  loss: number;
  perTerm: number[];
  gradQ: Float64Array;
  gradT: Float64Array;
  effectiveNegativesPerQuery: number;
}

function row(view: BufferView, r: number): Float64Array {
  return view.data.subarray(r * view.dim, (r + 1) * view.dim);
}

function dot(a: Float64Array, b: Float64Array): number {
  let s = 0;
  for (let i = 0; i < a.length; i++) {
    s += a[i] * b[i];
  }
  return s;
}

/**
 * Multi-turn masked InfoNCE over unit-norm embedding buffers: mean over
 * query terms of -log(exp(s_pos / tau) / sum over allowed exp(s / tau)),
 * with masked pairs excluded from the denominator.  Returns analytic
 * gradients with respect to both buffers (caller-owned arrays).
 */
export function multiturnInfonce(
  queries: BufferView,
  targets: BufferView,
  cfg: LossConfig = DEFAULT_LOSS_CONFIG,
): LossResult {
  if (queries.rows < 1 || targets.rows < 1) {
    throw new ShapeMismatch("buffers must be non-empty");
  }
  if (queries.dim !== targets.dim) {
    throw new ShapeMismatch(
      `query dim ${queries.dim} != target dim ${targets.dim}`,
    );
  }
  const kind = buildMaskFromLabels(queries.labels, targets.labels, cfg);
  const n = queries.rows;
  const m = targets.rows;
  const tau = cfg.temperature;

  const logits: Float64Array[] = [];
  for (let i = 0; i < n; i++) {
    const qi = row(queries, i);
    const li = new Float64Array(m);
    for (let j = 0; j < m; j++) {
      li[j] = dot(qi, row(targets, j)) / tau;
    }
    logits.push(li);
  }

  const perTerm: number[] = [];
  const gradQ = new Float64Array(queries.data.length);
  const gradT = new Float64Array(targets.data.length);
  const probs: Float64Array[] = [];
  let negatives = 0;

  for (let i = 0; i < n; i++) {
    let posCol = -1;
    let rowMax = -Infinity;
    for (let j = 0; j < m; j++) {
      if (kind[i][j] === POSITIVE) {
        posCol = j;
      }
      if (kind[i][j] !== MASKED && logits[i][j] > rowMax) {
        rowMax = logits[i][j];
      }
      if (i === 0 && kind[i][j] === NEGATIVE) {
        negatives += 1;
      }
    }
    if (posCol < 0) {
      throw new LabelMismatch(`term ${i} has no positive column`);
    }
    let denom = 0;
    const p = new Float64Array(m);
    for (let j = 0; j < m; j++) {
      if (kind[i][j] !== MASKED) {
        p[j] = Math.exp(logits[i][j] - rowMax);
        denom += p[j];
      }
    }
    const lse = rowMax + Math.log(denom);
    perTerm.push(lse - logits[i][posCol]);
    for (let j = 0; j < m; j++) {
      p[j] = kind[i][j] === MASKED ? 0 : p[j] / denom;
    }
    probs.push(p);
  }

  let total = 0;
  for (const v of perTerm) {
    total += v;
  }
  total /= n;

  for (let i = 0; i < n; i++) {
    const qi = row(queries, i);
    let posCol = 0;
    for (let j = 0; j < m; j++) {
      if (kind[i][j] === POSITIVE) {
        posCol = j;
      }
    }
    for (let j = 0; j < m; j++) {
      let g = probs[i][j] / n;
      if (j === posCol) {
        g -= 1 / n;
      }
      if (g === 0) {
        continue;
      }
      const tj = row(targets, j);
      const scale = g / tau;
      for (let d = 0; d < queries.dim; d++) {
        gradQ[i * queries.dim + d] += scale * tj[d];
        gradT[j * targets.dim + d] += scale * qi[d];
      }
    }
  }

  return {
    loss: total,
    perTerm,
    gradQ,
    gradT,
    effectiveNegativesPerQuery: negatives,
  };
}

/** Standard InfoNCE: the multi-turn kernel restricted to one turn. */
export function singleTurnInfonce(
  queries: BufferView,
  targets: BufferView,
  cfg: LossConfig = DEFAULT_LOSS_CONFIG,
): LossResult {
  for (const label of queries.labels) {
    if (label.turnIndex !== 0) {
      throw new LabelMismatch("single-turn loss expects turnIndex 0");
    }
  }
  return multiturnInfonce(queries, targets, cfg);
}

export function effectiveNegatives(batchImages: number, turns: number): number {
  if (batchImages < 1 || turns < 1) {
    throw new RangeError("batchImages and turns must be >= 1");
  }
  return batchImages * turns - turns;
}
