#!/usr/bin/env node
/**
 * Figure CLI: `render <kind> --in <csv> --out <base>` where kind is
 * sweep_lines | boxes | graph_map.  Inputs are the experiment
 * artifacts written by the estimation package; outputs are
 * <base>.svg, <base>.png and <base>.manifest.json.
 */

import { promises as fs } from "node:fs";
import process from "node:process";

import { parseAggregateCsv, parseGraphJson, parseNodeValuesCsv, parseResultsCsv, SchemaError } from "./csv.js";
import { renderBoxesScene, renderGraphMapScene, renderSweepScene } from "./charts.js";
import { writeFigure } from "./render.js";

interface Args {
  kind: string;
  options: Map<string, string>;
  flags: Set<string>;
}

function parseArgs(argv: string[]): Args {
  if (argv.length === 0 || argv[0] !== "render") {
    throw new SchemaError("usage: graphlds-figures render <sweep_lines|boxes|graph_map> --in <file> --out <base> [...]");
  }
  const kind = argv[1];
  const options = new Map<string, string>();
  const flags = new Set<string>();
  for (let i = 2; i < argv.length; i += 1) {
    const arg = argv[i];
    if (!arg.startsWith("--")) {
      throw new SchemaError(`unexpected argument ${arg}`);
    }
    const name = arg.slice(2);
    if (i + 1 < argv.length && !argv[i + 1].startsWith("--")) {
      options.set(name, argv[i + 1]);
      i += 1;
    } else {
      flags.add(name);
    }
  }
  return { kind, options, flags };
}

function requireOption(args: Args, name: string): string {
  const value = args.options.get(name);
  if (!value) {
    throw new SchemaError(`missing required option --${name}`);
  }
  return value;
}

export async function main(argv: string[]): Promise<number> {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error(String((err as Error).message));
    return 1;
  }
  try {
    const outBase = requireOption(args, "out");
    if (args.kind === "sweep_lines") {
      const input = requireOption(args, "in");
      const rows = parseAggregateCsv(await fs.readFile(input, "utf8"));
      const scene = renderSweepScene(rows, {
        logX: args.flags.has("logx"),
        xLabel: args.options.get("xlabel") ?? "sweep value",
        title: args.options.get("title"),
      });
      await writeFigure(scene, outBase, [input]);
    } else if (args.kind === "boxes") {
      const input = requireOption(args, "in");
      const rows = parseResultsCsv(await fs.readFile(input, "utf8"));
      const metric = (args.options.get("metric") ?? "pred") as "param" | "pred";
      const sweepValue = args.options.has("value") ? Number(args.options.get("value")) : undefined;
      const scene = renderBoxesScene(rows, { metric, sweepValue, title: args.options.get("title") });
      await writeFigure(scene, outBase, [input]);
    } else if (args.kind === "graph_map") {
      const graphPath = requireOption(args, "graph");
      const valuesPath = requireOption(args, "values");
      const graph = parseGraphJson(await fs.readFile(graphPath, "utf8"));
      const values = parseNodeValuesCsv(await fs.readFile(valuesPath, "utf8"));
      const scene = renderGraphMapScene(graph, values, { title: args.options.get("title") });
      await writeFigure(scene, outBase, [graphPath, valuesPath]);
    } else {
      throw new SchemaError(`unknown figure kind ${JSON.stringify(args.kind)}`);
    }
    return 0;
  } catch (err) {
    if (err instanceof SchemaError) {
      console.error(`error: ${err.message}`);
      return 2;
    }
    console.error(`error: ${(err as Error).stack ?? err}`);
    return 2;
  }
}

const invokedDirectly = process.argv[1] && import.meta.url.endsWith(process.argv[1].split("/").pop() ?? "");
if (invokedDirectly) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
