/**
 * Strict parsers for the experiment artifacts this package consumes.
 *
 * The schemas mirror the producing side exactly; any header mismatch is
 * an error rather than a best-effort guess, so figures can never be
 * silently built from the wrong file.
 */

export interface AggregateRow {
  sweep_value: number;
  method: string;
  mean_param_mse: number;
  ci95_param: number;
  mean_pred_mse: number;
  ci95_pred: number;
  n_ok: number;
}

export interface ResultRow {
  sweep_axis: string;
  sweep_value: number;
  topology: string;
  field: string;
  method: string;
  seed: number;
  param_mse: number;
  pred_mse: number;
  selected_lambda: number;
  n_iter: number;
  wall_ms: number;
  flags: string;
}

export interface NodeValue {
  node: number;
  value: number;
}

export interface GraphSpec {
  m: number;
  kind: string;
  edges: Array<[number, number]>;
}

const AGGREGATE_HEADER = "sweep_value,method,mean_param_mse,ci95_param,mean_pred_mse,ci95_pred,n_ok";
const RESULTS_HEADER =
  "sweep_axis,sweep_value,topology,field,method,seed,param_mse,pred_mse,selected_lambda,n_iter,wall_ms,flags";
const NODE_VALUES_HEADER = "node,value";

export class SchemaError extends Error {}

function splitLines(text: string): string[] {
  return text.split(/\r?\n/).filter((line) => line.length > 0);
}

function checkHeader(lines: string[], expected: string, label: string): string[] {
  if (lines.length === 0) {
    throw new SchemaError(`${label}: file is empty`);
  }
  if (lines[0] !== expected) {
    throw new SchemaError(`${label}: header mismatch\n  expected: ${expected}\n  got:      ${lines[0]}`);
  }
  if (lines.length === 1) {
    throw new SchemaError(`${label}: no data rows`);
  }
  return lines.slice(1);
}

function num(raw: string, label: string, line: number): number {
  if (raw === "nan") return NaN;
  const value = Number(raw);
  if (raw === "" || Number.isNaN(value)) {
    throw new SchemaError(`${label}: malformed number ${JSON.stringify(raw)} on data line ${line}`);
  }
  return value;
}

export function parseAggregateCsv(text: string): AggregateRow[] {
  const rows = checkHeader(splitLines(text), AGGREGATE_HEADER, "aggregate csv");
  return rows.map((line, i) => {
    const parts = line.split(",");
    if (parts.length !== 7) {
      throw new SchemaError(`aggregate csv: expected 7 columns on data line ${i + 1}, got ${parts.length}`);
    }
    return {
      sweep_value: num(parts[0], "aggregate csv", i + 1),
      method: parts[1],
      mean_param_mse: num(parts[2], "aggregate csv", i + 1),
      ci95_param: num(parts[3], "aggregate csv", i + 1),
      mean_pred_mse: num(parts[4], "aggregate csv", i + 1),
      ci95_pred: num(parts[5], "aggregate csv", i + 1),
      n_ok: num(parts[6], "aggregate csv", i + 1),
    };
  });
}

export function parseResultsCsv(text: string): ResultRow[] {
  const rows = checkHeader(splitLines(text), RESULTS_HEADER, "results csv");
  return rows.map((line, i) => {
    const parts = line.split(",");
    if (parts.length !== 12) {
      throw new SchemaError(`results csv: expected 12 columns on data line ${i + 1}, got ${parts.length}`);
    }
    return {
      sweep_axis: parts[0],
      sweep_value: num(parts[1], "results csv", i + 1),
      topology: parts[2],
      field: parts[3],
      method: parts[4],
      seed: num(parts[5], "results csv", i + 1),
      param_mse: num(parts[6], "results csv", i + 1),
      pred_mse: num(parts[7], "results csv", i + 1),
      selected_lambda: num(parts[8], "results csv", i + 1),
      n_iter: num(parts[9], "results csv", i + 1),
      wall_ms: num(parts[10], "results csv", i + 1),
      flags: parts.slice(11).join(","),
    };
  });
}

export function parseNodeValuesCsv(text: string): NodeValue[] {
  const rows = checkHeader(splitLines(text), NODE_VALUES_HEADER, "node values csv");
  return rows.map((line, i) => {
    const parts = line.split(",");
    if (parts.length !== 2) {
      throw new SchemaError(`node values csv: expected 2 columns on data line ${i + 1}, got ${parts.length}`);
    }
    return { node: num(parts[0], "node values csv", i + 1), value: num(parts[1], "node values csv", i + 1) };
  });
}

export function parseGraphJson(text: string): GraphSpec {
  let payload: unknown;
  try {
    payload = JSON.parse(text);
  } catch (err) {
    throw new SchemaError(`graph json: ${(err as Error).message}`);
  }
  const obj = payload as Record<string, unknown>;
  if (typeof obj.m !== "number" || !Array.isArray(obj.edges)) {
    throw new SchemaError("graph json: need fields m (number) and edges (array)");
  }
  const edges = (obj.edges as unknown[]).map((e, i) => {
    if (!Array.isArray(e) || e.length !== 2) {
      throw new SchemaError(`graph json: edge ${i} is not a pair`);
    }
    return [Number(e[0]), Number(e[1])] as [number, number];
  });
  return { m: obj.m, kind: typeof obj.kind === "string" ? obj.kind : "custom", edges };
}
