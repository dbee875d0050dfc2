export { BufferView, RawBuffer, bufferView, makeBufferView, readBuffer } from "./buffer.js";
export { LabelMismatch, RowLabel, Role, ShapeMismatch, Variant, labelKey } from "./labels.js";
export {
  DEFAULT_LOSS_CONFIG,
  LossConfig,
  MASKED,
  NEGATIVE,
  POSITIVE,
  buildMaskFromLabels,
} from "./mask.js";
export {
  LossResult,
  effectiveNegatives,
  multiturnInfonce,
  singleTurnInfonce,
} from "./loss.js";
export { maskWords } from "./maskWords.js";
export {
  AdaptedPair,
  DEFAULT_PROMPT_CONFIG,
  PromptConfig,
  TemplateVariant,
  buildAdaptedPair,
} from "./adapted.js";
export {
  CostConfig,
  DEFAULT_COST_CONFIG,
  efficiencyRatio,
  iterationCost,
} from "./cost.js";
