import { readFileSync } from "node:fs";

import { RowLabel, ShapeMismatch } from "./labels.js";

/** Contiguous row-major float64 matrix with one label per row. */
export interface BufferView {
  rows: number;
  dim: number;
  data: Float64Array;
  labels: RowLabel[];
}

export interface RawBuffer {
  values: Float64Array;
  segments: Array<[string, number]>;
  fields: Record<string, string>;
}

const NEWLINE = 0x0a;

/**
 * Read the shared flat-buffer format: one UTF-8 header line of
 * `key=value` fields, a ` | ` separator, `name:size` segments, then raw
 * little-endian float64 values.
 */
export function readBuffer(path: string): RawBuffer {
  const file = readFileSync(path);
  const split = file.indexOf(NEWLINE);
  if (split < 0) {
    throw new ShapeMismatch(`${path}: missing buffer header line`);
  }
  const header = file.subarray(0, split).toString("utf-8");
  const sep = header.indexOf(" | ");
  const fieldPart = sep >= 0 ? header.slice(0, sep) : "";
  const segPart = sep >= 0 ? header.slice(sep + 3) : header.replace(/^\|/, "");

  const fields: Record<string, string> = {};
  for (const item of fieldPart.split(/\s+/).filter(Boolean)) {
    const eq = item.indexOf("=");
    fields[item.slice(0, eq)] = item.slice(eq + 1);
  }
  const segments: Array<[string, number]> = [];
  for (const item of segPart.split(/\s+/).filter(Boolean)) {
    const colon = item.lastIndexOf(":");
    segments.push([item.slice(0, colon), Number(item.slice(colon + 1))]);
  }

  const payload = Uint8Array.prototype.slice.call(file, split + 1);
  if (payload.byteLength % 8 !== 0) {
    throw new ShapeMismatch(`${path}: payload is not a float64 array`);
  }
  const values = new Float64Array(payload.buffer);
  const expected = segments.reduce((acc, [, size]) => acc + size, 0);
  if (values.length !== expected) {
    throw new ShapeMismatch(`${path}: payload size does not match header`);
  }
  return { values, segments, fields };
}

export function bufferView(raw: RawBuffer, labels: RowLabel[]): BufferView {
  const rows = Number(raw.fields["rows"]);
  const dim = Number(raw.fields["dim"]);
  if (!Number.isInteger(rows) || !Number.isInteger(dim) || dim < 1) {
    throw new ShapeMismatch("buffer header must carry rows and dim");
  }
  return makeBufferView(rows, dim, raw.values, labels);
}

export function makeBufferView(
  rows: number,
  dim: number,
  data: Float64Array,
  labels: RowLabel[],
): BufferView {
  if (rows < 1) {
    throw new ShapeMismatch("buffer must have at least one row");
  }
  if (data.length !== rows * dim) {
    throw new ShapeMismatch(
      `data length ${data.length} != rows ${rows} x dim ${dim}`,
    );
  }
  if (labels.length !== rows) {
    throw new ShapeMismatch(`labels length ${labels.length} != rows ${rows}`);
  }
  return { rows, dim, data, labels };
}
