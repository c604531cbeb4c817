/**
 * Minimal SVG assembly: everything is emitted as plain strings so output
 * is a pure function of the inputs (no timestamps, no randomness).
 */

export interface Box {
  x: number;
  width: number;
  median: number;
  q1: number;
  q3: number;
  wlo: number;
  whi: number;
  color: string;
  label: string;
}

const fmt = (v: number): string => {
  const s = v.toFixed(2);
  return s === "-0.00" ? "0.00" : s;
};

export function svgDocument(width: number, height: number, body: string[]): string {
  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}">`,
    `<rect width="${width}" height="${height}" fill="white"/>`,
    ...body,
    "</svg>",
    "",
  ].join("\n");
}

export function text(x: number, y: number, s: string, opts: { size?: number; anchor?: string; rotate?: number } = {}): string {
  const size = opts.size ?? 11;
  const anchor = opts.anchor ?? "middle";
  const rot = opts.rotate ? ` transform="rotate(${opts.rotate} ${fmt(x)} ${fmt(y)})"` : "";
  return `<text x="${fmt(x)}" y="${fmt(y)}" font-family="Helvetica,Arial,sans-serif" font-size="${size}" text-anchor="${anchor}"${rot}>${escapeXml(s)}</text>`;
}

export function line(x1: number, y1: number, x2: number, y2: number, color = "#333", width = 1): string {
  return `<line x1="${fmt(x1)}" y1="${fmt(y1)}" x2="${fmt(x2)}" y2="${fmt(y2)}" stroke="${color}" stroke-width="${width}"/>`;
}

export function polyline(points: Array<[number, number]>, color: string, cls: string): string {
  const pts = points.map(([x, y]) => `${fmt(x)},${fmt(y)}`).join(" ");
  return `<polyline class="${cls}" points="${pts}" fill="none" stroke="${color}" stroke-width="1.5"/>`;
}

/** One box-and-whisker glyph (box, median bar, whisker stems and caps). */
export function boxGlyph(b: Box): string {
  const x0 = b.x - b.width / 2;
  const cap = b.width * 0.6;
  const parts = [
    `<g class="box" data-label="${escapeXml(b.label)}">`,
    `<rect x="${fmt(x0)}" y="${fmt(Math.min(b.q1, b.q3))}" width="${fmt(b.width)}" height="${fmt(Math.abs(b.q1 - b.q3))}" fill="${b.color}" fill-opacity="0.45" stroke="${b.color}"/>`,
    line(x0, b.median, x0 + b.width, b.median, b.color, 2),
    line(b.x, b.q3, b.x, b.whi, b.color),
    line(b.x, b.q1, b.x, b.wlo, b.color),
    line(b.x - cap / 2, b.whi, b.x + cap / 2, b.whi, b.color),
    line(b.x - cap / 2, b.wlo, b.x + cap / 2, b.wlo, b.color),
    "</g>",
  ];
  return parts.join("\n");
}

export function escapeXml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}
