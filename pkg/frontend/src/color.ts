/** Color assignment for method series and node-value maps. */

/** Categorical palette for method lines (colorblind-safe ordering). */
export const METHOD_PALETTE = [
  "#0072b2",
  "#d55e00",
  "#009e73",
  "#cc79a7",
  "#e69f00",
  "#56b4e9",
  "#f0e442",
  "#8c8c8c",
];

export function methodColor(index: number): string {
  return METHOD_PALETTE[index % METHOD_PALETTE.length];
}

// compact viridis control points; linear interpolation between them
const VIRIDIS: Array<[number, number, number]> = [
  [68, 1, 84],
  [71, 44, 122],
  [59, 81, 139],
  [44, 113, 142],
  [33, 144, 141],
  [39, 173, 129],
  [92, 200, 99],
  [170, 220, 50],
  [253, 231, 37],
];

function hex2(v: number): string {
  return Math.max(0, Math.min(255, Math.round(v))).toString(16).padStart(2, "0");
}

/** Map t in [0, 1] onto the viridis ramp. */
export function viridis(t: number): string {
  const clamped = Math.max(0, Math.min(1, t));
  const pos = clamped * (VIRIDIS.length - 1);
  const lo = Math.floor(pos);
  const hi = Math.min(lo + 1, VIRIDIS.length - 1);
  const frac = pos - lo;
  const rgb = VIRIDIS[lo].map((c, i) => c + frac * (VIRIDIS[hi][i] - c));
  return `#${hex2(rgb[0])}${hex2(rgb[1])}${hex2(rgb[2])}`;
}

/**
 * Colors for a list of node values: continuous viridis over the value
 * range, so a field with k well-separated levels gets k distinct colors
 * and a constant field collapses to one.
 */
export function valueColors(values: number[]): string[] {
  const finite = values.filter((v) => Number.isFinite(v));
  if (finite.length === 0) {
    throw new Error("no finite node values to color");
  }
  const min = Math.min(...finite);
  const max = Math.max(...finite);
  const span = max - min;
  return values.map((v) => viridis(span === 0 ? 0.5 : (v - min) / span));
}
