export type Role = "query" | "target";
export type Variant = "original" | "augmented";

export interface RowLabel {
  imageIndex: number;
  turnIndex: number;
  role: Role;
  variant: Variant;
}

export function labelKey(label: RowLabel): string {
  return `${label.imageIndex}:${label.turnIndex}:${label.variant}`;
}

export class LabelMismatch extends Error {}
export class ShapeMismatch extends Error {}
