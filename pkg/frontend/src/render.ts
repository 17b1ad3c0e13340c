/**
 * Scene serialization: SVG text plus a PNG rasterization of the same
 * markup, with a manifest sidecar recording the library versions so
 * byte-stability claims are auditable.
 */

import { createRequire } from "node:module";
import { promises as fs } from "node:fs";
import path from "node:path";

import { Scene, sceneToSvg } from "./scene.js";

const require = createRequire(import.meta.url);

export interface RenderedFiles {
  svgPath: string;
  pngPath: string;
  manifestPath: string;
}

export function renderPng(svg: string): Buffer {
  const { Resvg } = require("@resvg/resvg-js");
  const renderer = new Resvg(svg, { fitTo: { mode: "zoom", value: 2 }, background: "white" });
  return renderer.render().asPng();
}

function versions(): Record<string, string> {
  const pkg = require("../package.json");
  const resvg = require("@resvg/resvg-js/package.json");
  return {
    "graphlds-figures": pkg.version,
    "@resvg/resvg-js": resvg.version,
    node: process.version,
  };
}

/**
 * Write <out>.svg, <out>.png and <out>.manifest.json.  The inputs list
 * ends up in the manifest so a figure can always be traced back.
 */
export async function writeFigure(scene: Scene, outBase: string, inputs: string[]): Promise<RenderedFiles> {
  const svg = sceneToSvg(scene);
  const png = renderPng(svg);
  const dir = path.dirname(outBase);
  await fs.mkdir(dir, { recursive: true });
  const svgPath = `${outBase}.svg`;
  const pngPath = `${outBase}.png`;
  const manifestPath = `${outBase}.manifest.json`;
  await fs.writeFile(svgPath, svg, "utf8");
  await fs.writeFile(pngPath, png);
  await fs.writeFile(
    manifestPath,
    JSON.stringify({ inputs, versions: versions(), width: scene.width, height: scene.height }, null, 2) + "\n",
    "utf8",
  );
  return { svgPath, pngPath, manifestPath };
}
