/**
 * Minimal retained-mode scene: charts emit primitives, renderers emit
 * bytes.  Keeping the scene explicit makes SVG output a pure string
 * transform (byte-stable for fixed inputs) and PNG a rasterization of
 * exactly the same drawing.
 */

export type Primitive =
  | { kind: "rect"; x: number; y: number; w: number; h: number; fill: string; stroke?: string }
  | { kind: "line"; x1: number; y1: number; x2: number; y2: number; stroke: string; width: number; dash?: string }
  | { kind: "polyline"; points: Array<[number, number]>; stroke: string; width: number }
  | { kind: "polygon"; points: Array<[number, number]>; fill: string; opacity?: number }
  | { kind: "circle"; cx: number; cy: number; r: number; fill: string; stroke?: string }
  | { kind: "text"; x: number; y: number; text: string; size: number; anchor: "start" | "middle" | "end"; fill?: string };

export interface Scene {
  width: number;
  height: number;
  primitives: Primitive[];
}

/** Fixed-precision coordinate formatting keeps SVG output byte-stable. */
export function fmt(x: number): string {
  const rounded = Math.round(x * 100) / 100;
  return Object.is(rounded, -0) ? "0" : String(rounded);
}

function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export function sceneToSvg(scene: Scene): string {
  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${scene.width}" height="${scene.height}" ` +
      `viewBox="0 0 ${scene.width} ${scene.height}" font-family="Helvetica, Arial, sans-serif">`,
  );
  for (const p of scene.primitives) {
    switch (p.kind) {
      case "rect": {
        const stroke = p.stroke ? ` stroke="${p.stroke}"` : "";
        parts.push(`<rect x="${fmt(p.x)}" y="${fmt(p.y)}" width="${fmt(p.w)}" height="${fmt(p.h)}" fill="${p.fill}"${stroke}/>`);
        break;
      }
      case "line": {
        const dash = p.dash ? ` stroke-dasharray="${p.dash}"` : "";
        parts.push(
          `<line x1="${fmt(p.x1)}" y1="${fmt(p.y1)}" x2="${fmt(p.x2)}" y2="${fmt(p.y2)}" stroke="${p.stroke}" stroke-width="${fmt(p.width)}"${dash}/>`,
        );
        break;
      }
      case "polyline": {
        const pts = p.points.map(([x, y]) => `${fmt(x)},${fmt(y)}`).join(" ");
        parts.push(`<polyline points="${pts}" fill="none" stroke="${p.stroke}" stroke-width="${fmt(p.width)}"/>`);
        break;
      }
      case "polygon": {
        const pts = p.points.map(([x, y]) => `${fmt(x)},${fmt(y)}`).join(" ");
        const opacity = p.opacity !== undefined ? ` fill-opacity="${p.opacity}"` : "";
        parts.push(`<polygon points="${pts}" fill="${p.fill}"${opacity} stroke="none"/>`);
        break;
      }
      case "circle": {
        const stroke = p.stroke ? ` stroke="${p.stroke}"` : "";
        parts.push(`<circle cx="${fmt(p.cx)}" cy="${fmt(p.cy)}" r="${fmt(p.r)}" fill="${p.fill}"${stroke}/>`);
        break;
      }
      case "text": {
        parts.push(
          `<text x="${fmt(p.x)}" y="${fmt(p.y)}" font-size="${fmt(p.size)}" text-anchor="${p.anchor}" fill="${p.fill ?? "#222"}">${esc(p.text)}</text>`,
        );
        break;
      }
    }
  }
  parts.push("</svg>");
  return parts.join("\n") + "\n";
}
