/**
 * Chart builders: sweep line plots with 95% CI ribbons, box plots of
 * per-trial errors, and node-colored graph maps.  Each builder turns
 * parsed artifact rows into a Scene; serialization lives elsewhere.
 */

import { AggregateRow, GraphSpec, NodeValue, ResultRow, SchemaError } from "./csv.js";
import { methodColor, valueColors } from "./color.js";
import { Primitive, Scene } from "./scene.js";

export interface SweepOptions {
  logX?: boolean;
  xLabel?: string;
  title?: string;
}

interface Scale {
  (v: number): number;
  ticks: number[];
  label: (v: number) => string;
}

function makeLinearScale(lo: number, hi: number, outLo: number, outHi: number): Scale {
  const span = hi - lo || 1;
  const f = ((v: number) => outLo + ((v - lo) / span) * (outHi - outLo)) as Scale;
  const step = niceStep(span / 4);
  const ticks: number[] = [];
  for (let t = Math.ceil(lo / step) * step; t <= hi + 1e-9 * span; t += step) {
    ticks.push(Number(t.toPrecision(12)));
  }
  f.ticks = ticks;
  f.label = (v) => compactNumber(v);
  return f;
}

function makeLogScale(lo: number, hi: number, outLo: number, outHi: number): Scale {
  const llo = Math.log10(lo);
  const lhi = Math.log10(hi);
  const span = lhi - llo || 1;
  const f = ((v: number) => outLo + ((Math.log10(v) - llo) / span) * (outHi - outLo)) as Scale;
  const ticks: number[] = [];
  for (let e = Math.ceil(llo - 1e-9); e <= Math.floor(lhi + 1e-9); e += 1) {
    ticks.push(10 ** e);
  }
  if (ticks.length < 2) {
    f.ticks = [lo, hi];
  } else {
    f.ticks = ticks;
  }
  f.label = (v) => compactNumber(v);
  return f;
}

function niceStep(raw: number): number {
  const mag = 10 ** Math.floor(Math.log10(raw));
  const norm = raw / mag;
  const nice = norm >= 5 ? 10 : norm >= 2 ? 5 : norm >= 1 ? 2 : 1;
  return nice * mag;
}

function compactNumber(v: number): string {
  if (v === 0) return "0";
  const abs = Math.abs(v);
  if (abs >= 1e4 || abs < 1e-3) return v.toExponential(0).replace("e+", "e");
  return Number(v.toPrecision(4)).toString();
}

interface Panel {
  x0: number;
  y0: number;
  w: number;
  h: number;
}

function axes(panel: Panel, xs: Scale, ys: Scale, xLabel: string, yLabel: string): Primitive[] {
  const prims: Primitive[] = [];
  const { x0, y0, w, h } = panel;
  prims.push({ kind: "rect", x: x0, y: y0, w, h, fill: "none", stroke: "#444" });
  for (const t of xs.ticks) {
    const px = xs(t);
    if (px < x0 - 0.5 || px > x0 + w + 0.5) continue;
    prims.push({ kind: "line", x1: px, y1: y0 + h, x2: px, y2: y0 + h + 4, stroke: "#444", width: 1 });
    prims.push({ kind: "text", x: px, y: y0 + h + 16, text: xs.label(t), size: 10, anchor: "middle" });
  }
  for (const t of ys.ticks) {
    const py = ys(t);
    if (py < y0 - 0.5 || py > y0 + h + 0.5) continue;
    prims.push({ kind: "line", x1: x0 - 4, y1: py, x2: x0, y2: py, stroke: "#444", width: 1 });
    prims.push({ kind: "line", x1: x0, y1: py, x2: x0 + w, y2: py, stroke: "#ddd", width: 0.5 });
    prims.push({ kind: "text", x: x0 - 6, y: py + 3, text: ys.label(t), size: 10, anchor: "end" });
  }
  prims.push({ kind: "text", x: x0 + w / 2, y: y0 + h + 32, text: xLabel, size: 11, anchor: "middle" });
  prims.push({ kind: "text", x: x0 + w / 2, y: y0 - 6, text: yLabel, size: 11, anchor: "middle" });
  return prims;
}

function sweepPanel(
  rows: AggregateRow[],
  methods: string[],
  panel: Panel,
  metric: "param" | "pred",
  opts: SweepOptions,
): Primitive[] {
  const mean = (r: AggregateRow) => (metric === "param" ? r.mean_param_mse : r.mean_pred_mse);
  const ci = (r: AggregateRow) => (metric === "param" ? r.ci95_param : r.ci95_pred);
  const values = [...new Set(rows.map((r) => r.sweep_value))].sort((a, b) => a - b);
  const yLo = Math.min(...rows.map((r) => mean(r) - ci(r)));
  const yHi = Math.max(...rows.map((r) => mean(r) + ci(r)));
  const logY = rows.every((r) => mean(r) > 0);
  const floor = logY ? Math.min(...rows.map((r) => mean(r))) / 10 : undefined;
  const xs = opts.logX
    ? makeLogScale(values[0], values[values.length - 1], panel.x0 + 8, panel.x0 + panel.w - 8)
    : makeLinearScale(values[0], values[values.length - 1], panel.x0 + 8, panel.x0 + panel.w - 8);
  const ys = logY
    ? makeLogScale(Math.max(yLo, floor as number), yHi, panel.y0 + panel.h - 6, panel.y0 + 6)
    : makeLinearScale(Math.min(yLo, 0), yHi, panel.y0 + panel.h - 6, panel.y0 + 6);
  const clampY = (v: number) => (logY ? Math.max(v, floor as number) : v);
  const prims = axes(
    panel,
    xs,
    ys,
    opts.xLabel ?? "sweep value",
    metric === "param" ? "parameter MSE" : "prediction MSE",
  );
  methods.forEach((method, mi) => {
    const series = rows.filter((r) => r.method === method).sort((a, b) => a.sweep_value - b.sweep_value);
    if (series.length === 0) return;
    const color = methodColor(mi);
    const upper = series.map((r) => [xs(r.sweep_value), ys(clampY(mean(r) + ci(r)))] as [number, number]);
    const lower = series.map((r) => [xs(r.sweep_value), ys(clampY(mean(r) - ci(r)))] as [number, number]);
    prims.push({ kind: "polygon", points: [...upper, ...lower.reverse()], fill: color, opacity: 0.18 });
    prims.push({ kind: "polyline", points: series.map((r) => [xs(r.sweep_value), ys(clampY(mean(r)))]), stroke: color, width: 1.6 });
    for (const r of series) {
      prims.push({ kind: "circle", cx: xs(r.sweep_value), cy: ys(clampY(mean(r))), r: 2.6, fill: color });
    }
  });
  return prims;
}

/** Sweep figure: parameter MSE and prediction MSE panels, one line and
 * 95% CI ribbon per method. */
export function renderSweepScene(rows: AggregateRow[], opts: SweepOptions = {}): Scene {
  const usable = rows.filter((r) => Number.isFinite(r.mean_param_mse) && Number.isFinite(r.mean_pred_mse));
  if (usable.length === 0) {
    throw new SchemaError("sweep figure: no usable rows (all aggregates are NaN)");
  }
  const methods = [...new Set(usable.map((r) => r.method))];
  const width = 780;
  const height = 330;
  const prims: Primitive[] = [{ kind: "rect", x: 0, y: 0, w: width, h: height, fill: "#ffffff" }];
  prims.push(...sweepPanel(usable, methods, { x0: 55, y0: 40, w: 300, h: 220 }, "param", opts));
  prims.push(...sweepPanel(usable, methods, { x0: 440, y0: 40, w: 300, h: 220 }, "pred", opts));
  methods.forEach((method, mi) => {
    const lx = 60 + mi * 130;
    prims.push({ kind: "line", x1: lx, y1: height - 14, x2: lx + 22, y2: height - 14, stroke: methodColor(mi), width: 2 });
    prims.push({ kind: "text", x: lx + 27, y: height - 10, text: method, size: 11, anchor: "start" });
  });
  if (opts.title) {
    prims.push({ kind: "text", x: width / 2, y: 18, text: opts.title, size: 13, anchor: "middle" });
  }
  return { width, height, primitives: prims };
}

export interface BoxOptions {
  metric?: "param" | "pred";
  sweepValue?: number;
  title?: string;
}

function quartiles(sorted: number[]): { q1: number; med: number; q3: number } {
  const at = (q: number) => {
    const pos = q * (sorted.length - 1);
    const lo = Math.floor(pos);
    const hi = Math.ceil(pos);
    return sorted[lo] + (pos - lo) * (sorted[hi] - sorted[lo]);
  };
  return { q1: at(0.25), med: at(0.5), q3: at(0.75) };
}

/** Box plot of a per-trial metric, one box per method. */
export function renderBoxesScene(rows: ResultRow[], opts: BoxOptions = {}): Scene {
  const metric = opts.metric ?? "pred";
  const pick = (r: ResultRow) => (metric === "param" ? r.param_mse : r.pred_mse);
  let usable = rows.filter((r) => Number.isFinite(pick(r)));
  if (opts.sweepValue !== undefined) {
    usable = usable.filter((r) => r.sweep_value === opts.sweepValue);
  }
  if (usable.length === 0) {
    throw new SchemaError("box figure: no usable rows");
  }
  const methods = [...new Set(usable.map((r) => r.method))];
  const width = Math.max(320, 120 + methods.length * 110);
  const height = 320;
  const panel: Panel = { x0: 60, y0: 30, w: width - 90, h: 230 };
  const all = usable.map(pick);
  const ys = makeLinearScale(Math.min(...all, 0), Math.max(...all), panel.y0 + panel.h - 6, panel.y0 + 6);
  const prims: Primitive[] = [{ kind: "rect", x: 0, y: 0, w: width, h: height, fill: "#ffffff" }];
  prims.push({ kind: "rect", x: panel.x0, y: panel.y0, w: panel.w, h: panel.h, fill: "none", stroke: "#444" });
  for (const t of ys.ticks) {
    const py = ys(t);
    if (py < panel.y0 || py > panel.y0 + panel.h) continue;
    prims.push({ kind: "line", x1: panel.x0 - 4, y1: py, x2: panel.x0, y2: py, stroke: "#444", width: 1 });
    prims.push({ kind: "text", x: panel.x0 - 6, y: py + 3, text: ys.label(t), size: 10, anchor: "end" });
  }
  const slot = panel.w / methods.length;
  methods.forEach((method, mi) => {
    const xs = usable.filter((r) => r.method === method).map(pick).sort((a, b) => a - b);
    const cx = panel.x0 + slot * (mi + 0.5);
    const color = methodColor(mi);
    const { q1, med, q3 } = quartiles(xs);
    const iqr = q3 - q1;
    const loFence = q1 - 1.5 * iqr;
    const hiFence = q3 + 1.5 * iqr;
    const inliers = xs.filter((v) => v >= loFence && v <= hiFence);
    const lo = inliers.length ? inliers[0] : q1;
    const hi = inliers.length ? inliers[inliers.length - 1] : q3;
    const half = Math.min(34, slot * 0.3);
    prims.push({ kind: "line", x1: cx, y1: ys(lo), x2: cx, y2: ys(q1), stroke: "#444", width: 1 });
    prims.push({ kind: "line", x1: cx, y1: ys(q3), x2: cx, y2: ys(hi), stroke: "#444", width: 1 });
    prims.push({ kind: "line", x1: cx - half / 2, y1: ys(lo), x2: cx + half / 2, y2: ys(lo), stroke: "#444", width: 1 });
    prims.push({ kind: "line", x1: cx - half / 2, y1: ys(hi), x2: cx + half / 2, y2: ys(hi), stroke: "#444", width: 1 });
    prims.push({ kind: "rect", x: cx - half, y: ys(q3), w: 2 * half, h: Math.max(ys(q1) - ys(q3), 0.5), fill: color, stroke: "#333" });
    prims.push({ kind: "line", x1: cx - half, y1: ys(med), x2: cx + half, y2: ys(med), stroke: "#111", width: 1.5 });
    for (const v of xs) {
      if (v < loFence || v > hiFence) {
        prims.push({ kind: "circle", cx, cy: ys(v), r: 2, fill: "none", stroke: "#555" });
      }
    }
    prims.push({ kind: "text", x: cx, y: panel.y0 + panel.h + 16, text: method, size: 11, anchor: "middle" });
  });
  prims.push({
    kind: "text",
    x: panel.x0 + panel.w / 2,
    y: panel.y0 - 8,
    text: opts.title ?? (metric === "param" ? "parameter MSE per trial" : "prediction MSE per trial"),
    size: 12,
    anchor: "middle",
  });
  return { width, height, primitives: prims };
}

export interface GraphMapOptions {
  title?: string;
  nx?: number;
}

function nodePositions(graph: GraphSpec, w: number, h: number, nx?: number): Array<[number, number]> {
  const m = graph.m;
  const pad = 40;
  const pos: Array<[number, number]> = [];
  if (graph.kind === "grid2d") {
    const cols = nx ?? Math.max(1, Math.round(Math.sqrt(m)));
    const rowsN = Math.ceil(m / cols);
    for (let i = 0; i < m; i += 1) {
      const cx = cols > 1 ? pad + ((i % cols) / (cols - 1)) * (w - 2 * pad) : w / 2;
      const cy = rowsN > 1 ? pad + (Math.floor(i / cols) / (rowsN - 1)) * (h - 2 * pad) : h / 2;
      pos.push([cx, cy]);
    }
  } else if (graph.kind === "path") {
    // snake layout keeps long chains readable
    const cols = Math.ceil(Math.sqrt(m * 2));
    const rowsN = Math.ceil(m / cols);
    for (let i = 0; i < m; i += 1) {
      const row = Math.floor(i / cols);
      const within = i % cols;
      const col = row % 2 === 0 ? within : cols - 1 - within;
      const cx = cols > 1 ? pad + (col / (cols - 1)) * (w - 2 * pad) : w / 2;
      const cy = rowsN > 1 ? pad + (row / (rowsN - 1)) * (h - 2 * pad) : h / 2;
      pos.push([cx, cy]);
    }
  } else if (graph.kind === "star") {
    pos.push([w / 2, h / 2]);
    for (let i = 1; i < m; i += 1) {
      const angle = (2 * Math.PI * (i - 1)) / Math.max(m - 1, 1);
      pos.push([w / 2 + 0.38 * (w - 2 * pad) * Math.cos(angle), h / 2 + 0.38 * (h - 2 * pad) * Math.sin(angle)]);
    }
  } else {
    for (let i = 0; i < m; i += 1) {
      const angle = (2 * Math.PI * i) / m - Math.PI / 2;
      pos.push([w / 2 + 0.4 * (w - 2 * pad) * Math.cos(angle), h / 2 + 0.4 * (h - 2 * pad) * Math.sin(angle)]);
    }
  }
  return pos;
}

/** Graph map: nodes colored by a scalar value, edges drawn underneath. */
export function renderGraphMapScene(graph: GraphSpec, values: NodeValue[], opts: GraphMapOptions = {}): Scene {
  const byNode = new Map(values.map((v) => [v.node, v.value]));
  const ordered: number[] = [];
  for (let node = 1; node <= graph.m; node += 1) {
    const v = byNode.get(node);
    if (v === undefined || !Number.isFinite(v)) {
      throw new SchemaError(`graph map: missing value for node ${node}`);
    }
    ordered.push(v);
  }
  const width = 520;
  const height = 460;
  const pos = nodePositions(graph, width, height - 40, opts.nx);
  const colors = valueColors(ordered);
  const prims: Primitive[] = [{ kind: "rect", x: 0, y: 0, w: width, h: height, fill: "#ffffff" }];
  for (const [u, v] of graph.edges) {
    const [x1, y1] = pos[u - 1];
    const [x2, y2] = pos[v - 1];
    prims.push({ kind: "line", x1, y1, x2, y2, stroke: "#b8b8b8", width: 1 });
  }
  const radius = Math.max(4, Math.min(11, 150 / Math.sqrt(graph.m)));
  for (let i = 0; i < graph.m; i += 1) {
    prims.push({ kind: "circle", cx: pos[i][0], cy: pos[i][1], r: radius, fill: colors[i], stroke: "#333" });
  }
  const distinct = [...new Set(ordered)].sort((a, b) => a - b);
  if (distinct.length <= 6) {
    const legendColors = valueColors(ordered);
    distinct.forEach((value, i) => {
      const idx = ordered.indexOf(value);
      const lx = 20 + i * 90;
      prims.push({ kind: "circle", cx: lx, cy: height - 18, r: 6, fill: legendColors[idx], stroke: "#333" });
      prims.push({ kind: "text", x: lx + 10, y: height - 14, text: compactNumber(value), size: 11, anchor: "start" });
    });
  }
  if (opts.title) {
    prims.push({ kind: "text", x: width / 2, y: 20, text: opts.title, size: 13, anchor: "middle" });
  }
  return { width, height, primitives: prims };
}

/** Distinct fill colors used by the node circles of a graph-map scene. */
export function nodeFillColors(scene: Scene): Set<string> {
  const fills = new Set<string>();
  for (const p of scene.primitives) {
    if (p.kind === "circle" && p.stroke === "#333") {
      fills.add(p.fill);
    }
  }
  return fills;
}
