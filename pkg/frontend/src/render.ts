/** Pure pixel and chart geometry for the observation views.
 *
 * Everything here is plain array math so it can be unit-tested without a
 * DOM; `main.ts` owns the canvases and blits the results.
 */

import type { AttentionReport } from "./protocol.js";

/** Expand packed RGB bytes to RGBA (alpha 255). */
export function rgbToRgba(rgb: Uint8Array, width: number, height: number): Uint8ClampedArray {
  const out = new Uint8ClampedArray(width * height * 4);
  for (let i = 0, j = 0; i < width * height; i++, j += 3) {
    out[i * 4 + 0] = rgb[j + 0]!;
    out[i * 4 + 1] = rgb[j + 1]!;
    out[i * 4 + 2] = rgb[j + 2]!;
    out[i * 4 + 3] = 255;
  }
  return out;
}

/** Nearest-neighbor upscale of an RGBA buffer by an integer factor. */
export function upscaleNearest(
  rgba: Uint8ClampedArray,
  width: number,
  height: number,
  scale: number,
): Uint8ClampedArray {
  const ow = width * scale;
  const out = new Uint8ClampedArray(ow * height * scale * 4);
  for (let y = 0; y < height * scale; y++) {
    const sy = Math.floor(y / scale);
    for (let x = 0; x < ow; x++) {
      const sx = Math.floor(x / scale);
      const src = (sy * width + sx) * 4;
      const dst = (y * ow + x) * 4;
      out[dst + 0] = rgba[src + 0]!;
      out[dst + 1] = rgba[src + 1]!;
      out[dst + 2] = rgba[src + 2]!;
      out[dst + 3] = rgba[src + 3]!;
    }
  }
  return out;
}

/**
 * Blend a cell grid of attention weights over an RGBA image in place.
 *
 * The grid (e.g. 6x6 over an 84x84 view, one cell per vision token) is
 * normalized by its own maximum so the hottest cell gets the full overlay
 * strength; an all-zero grid leaves the image untouched. The overlay pushes
 * pixels toward red in proportion to cell weight.
 */
export function heatmapOverlay(
  rgba: Uint8ClampedArray,
  width: number,
  height: number,
  heat: number[][],
  alpha = 0.5,
): Uint8ClampedArray {
  const rows = heat.length;
  const cols = rows > 0 ? heat[0]!.length : 0;
  if (rows === 0 || cols === 0) return rgba;
  let peak = 0;
  for (const row of heat) for (const v of row) peak = Math.max(peak, v);
  if (peak <= 0) return rgba;
  const cellH = height / rows;
  const cellW = width / cols;
  for (let y = 0; y < height; y++) {
    const row = heat[Math.min(rows - 1, Math.floor(y / cellH))]!;
    for (let x = 0; x < width; x++) {
      const w = row[Math.min(cols - 1, Math.floor(x / cellW))]! / peak;
      if (w <= 0) continue;
      const k = alpha * w;
      const i = (y * width + x) * 4;
      rgba[i + 0] = rgba[i + 0]! * (1 - k) + 255 * k;
      rgba[i + 1] = rgba[i + 1]! * (1 - k);
      rgba[i + 2] = rgba[i + 2]! * (1 - k);
    }
  }
  return rgba;
}

export interface Point {
  x: number;
  y: number;
}

/**
 * Polylines for a strip chart of selected columns of a row-window.
 *
 * Rows are time (oldest first), columns are channels. All selected series
 * share one y-scale computed from their joint min/max so relative
 * magnitudes stay comparable; a flat window draws centered lines.
 */
export function seriesPolylines(
  rows: number[][],
  columns: number[],
  width: number,
  height: number,
  pad = 2,
): Point[][] {
  const n = rows.length;
  if (n === 0) return columns.map(() => []);
  let lo = Infinity;
  let hi = -Infinity;
  for (const row of rows) {
    for (const c of columns) {
      const v = row[c]!;
      lo = Math.min(lo, v);
      hi = Math.max(hi, v);
    }
  }
  const span = hi - lo;
  const innerH = height - 2 * pad;
  const xStep = n > 1 ? (width - 2 * pad) / (n - 1) : 0;
  return columns.map((c) =>
    rows.map((row, t) => {
      const frac = span > 0 ? (row[c]! - lo) / span : 0.5;
      return { x: pad + t * xStep, y: pad + (1 - frac) * innerH };
    }),
  );
}

/** Bar heights for the per-timestep tactile attention weights. */
export function tactileBarHeights(weights: number[], maxHeight: number): number[] {
  let peak = 0;
  for (const w of weights) peak = Math.max(peak, w);
  if (peak <= 0) return weights.map(() => 0);
  return weights.map((w) => (w / peak) * maxHeight);
}

export interface Segment {
  key: "vision_left" | "vision_right" | "tactile";
  /** Fraction of the bar, in [0, 1]. */
  fraction: number;
  /** Cumulative left edge, in [0, 1]. */
  start: number;
}

/**
 * Segments of a 100% stacked bar for the modality proportions.
 *
 * Fractions are renormalized by the (≈1) total so the bar always fills
 * exactly; an all-zero report (fully masked model) returns zero-width
 * segments.
 */
export function proportionSegments(p: AttentionReport["proportions"]): Segment[] {
  const entries: [Segment["key"], number][] = [
    ["vision_left", p.vision_left],
    ["vision_right", p.vision_right],
    ["tactile", p.tactile],
  ];
  const total = entries.reduce((s, [, v]) => s + v, 0);
  let start = 0;
  return entries.map(([key, v]) => {
    const fraction = total > 0 ? v / total : 0;
    const seg = { key, fraction, start };
    start += fraction;
    return seg;
  });
}

/** Fixed display colors per modality (stacked bar and legends). */
export const MODALITY_COLORS: Record<Segment["key"], string> = {
  vision_left: "#4c9be8",
  vision_right: "#7bc96f",
  tactile: "#e8a44c",
};
