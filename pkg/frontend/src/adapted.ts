import { maskWords } from "./maskWords.js";

export type TemplateVariant =
  | "reconstruction"
  | "rephrasing"
  | "self_reconstruction"
  | "no_guidance";

// Mirrors of the native prompt defaults; must stay byte-identical.
export const PI1_DEFAULT =
  "Please rewrite your last response in human-readable language";
export const PI2_DEFAULT =
  "Reconstruct the previous response, acknowledge my query, " +
  "and seamlessly integrate the answer";
export const REPHRASE_REQUEST =
  "Please rephrase your last response in embedding space";
export const PLAIN_EMBED_REQUEST = "Please respond to my query in embedding space";
export const MASK_TOKEN_DEFAULT = "<|mask|>";

export interface PromptConfig {
  pi1: string;
  pi2: string;
  maskRatio: number;
  templateVariant: TemplateVariant;
  plainRequest: string;
  maskToken: string;
}

export const DEFAULT_PROMPT_CONFIG: PromptConfig = {
  pi1: PI1_DEFAULT,
  pi2: PI2_DEFAULT,
  maskRatio: 0.5,
  templateVariant: "reconstruction",
  plainRequest: PLAIN_EMBED_REQUEST,
  maskToken: MASK_TOKEN_DEFAULT,
};

export interface AdaptedPair {
  queryInitial: string;
  querySubsequent: string;
  targetInitial: string;
  targetSubsequent: string;
}

/** Byte-identical mirror of the native adapted-pair construction. */
export function buildAdaptedPair(
  query: string,
  target: string,
  cfg: PromptConfig,
  seed: number,
): AdaptedPair {
  const subsequent = (own: string, counterpart: string): string => {
    if (cfg.templateVariant === "rephrasing") {
      return REPHRASE_REQUEST;
    }
    const source =
      cfg.templateVariant === "self_reconstruction" ? own : counterpart;
    const masked = maskWords(source, cfg.maskRatio, seed, cfg.maskToken);
    const closing =
      cfg.templateVariant === "no_guidance" ? cfg.plainRequest : cfg.pi2;
    return `${cfg.pi1}\n${masked}\n${closing}`;
  };
  return {
    queryInitial: query,
    querySubsequent: subsequent(query, target),
    targetInitial: target,
    targetSubsequent: subsequent(target, query),
  };
}
