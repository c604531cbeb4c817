/**
 * The three figure kinds rendered from bench CSVs.
 *
 * radius_sweep / gamma_sweep: paired continuous/discrete box-and-whisker
 * groups per sweep value, one panel for dynamics losses and one for
 * covariance losses, log-scale y by default (losses span decades).
 * beta_densities: one symmetric-Beta density curve per distinct sweep
 * value found in a records file.
 */

import { LossRecord, SummaryRow } from "./csv.js";
import { linspace, symmetricBetaPdf } from "./stats.js";
import { Box, boxGlyph, line, polyline, svgDocument, text } from "./svg.js";

export interface RenderOptions {
  logScale?: boolean;
}

const COLORS = { discrete: "#d95f02", continuous: "#1f77b4" };

const PANEL = { width: 340, height: 260, top: 42, left: 58, bottom: 46, gap: 34 };

interface PanelSpec {
  title: string;
  metrics: { name: string; color: string; label: string }[];
}

function niceLabel(v: number): string {
  if (Number.isInteger(v)) return String(v);
  if (v === 0.5) return "1/2";
  return String(v);
}

function yTransform(values: number[], logScale: boolean): {
  toY: (v: number) => number;
  ticks: number[];
} {
  const finite = values.filter((v) => Number.isFinite(v));
  if (logScale) {
    const pos = finite.filter((v) => v > 0);
    const lo = Math.min(...pos);
    const hi = Math.max(...pos);
    const floor = lo / 2;
    const span = Math.log10(hi * 1.5) - Math.log10(floor);
    const toY = (v: number) =>
      PANEL.top +
      (PANEL.height - PANEL.top - PANEL.bottom) *
        (1 - (Math.log10(Math.max(v, floor)) - Math.log10(floor)) / span);
    const ticks: number[] = [];
    for (
      let e = Math.ceil(Math.log10(floor));
      e <= Math.floor(Math.log10(hi * 1.5));
      e++
    ) {
      ticks.push(10 ** e);
    }
    return { toY, ticks };
  }
  const lo = Math.min(0, ...finite);
  const hi = Math.max(...finite) * 1.1 || 1;
  const toY = (v: number) =>
    PANEL.top + (PANEL.height - PANEL.top - PANEL.bottom) * (1 - (v - lo) / (hi - lo));
  const ticks = linspace(lo, hi, 5);
  return { toY, ticks };
}

function renderPanel(
  rows: SummaryRow[],
  spec: PanelSpec,
  xLabel: string,
  offsetX: number,
  logScale: boolean,
): string[] {
  const sweeps = [...new Set(rows.map((r) => r.sweep))].sort((a, b) => a - b);
  const used = rows.filter((r) => spec.metrics.some((m) => m.name === r.metric));
  if (used.length === 0) throw new Error(`no rows for metrics of panel '${spec.title}'`);
  const values = used.flatMap((r) => [r.wlo, r.whi, r.q1, r.q3, r.median]);
  const { toY, ticks } = yTransform(values, logScale);

  const innerW = PANEL.width - PANEL.left - 12;
  const slot = innerW / sweeps.length;
  const boxW = Math.min(26, slot / 3);
  const body: string[] = [];
  body.push(text(offsetX + PANEL.left + innerW / 2, 20, spec.title, { size: 13 }));
  // axes
  const y0 = PANEL.height - PANEL.bottom;
  body.push(line(offsetX + PANEL.left, PANEL.top, offsetX + PANEL.left, y0));
  body.push(line(offsetX + PANEL.left, y0, offsetX + PANEL.left + innerW, y0));
  for (const tick of ticks) {
    const y = toY(tick);
    body.push(line(offsetX + PANEL.left - 4, y, offsetX + PANEL.left, y));
    const label = logScale ? `1e${Math.round(Math.log10(tick))}` : tick.toPrecision(2);
    body.push(text(offsetX + PANEL.left - 7, y + 3.5, label, { size: 9, anchor: "end" }));
  }
  for (let i = 0; i < sweeps.length; i++) {
    const cx = offsetX + PANEL.left + slot * (i + 0.5);
    body.push(text(cx, y0 + 16, niceLabel(sweeps[i]), { size: 10 }));
    spec.metrics.forEach((metric, j) => {
      const row = rows.find((r) => r.sweep === sweeps[i] && r.metric === metric.name);
      if (!row) return;
      const box: Box = {
        x: cx + (j - (spec.metrics.length - 1) / 2) * (boxW + 6),
        width: boxW,
        median: toY(row.median),
        q1: toY(row.q1),
        q3: toY(row.q3),
        wlo: toY(row.wlo),
        whi: toY(row.whi),
        color: metric.color,
        label: `${metric.label} @ ${row.sweep}`,
      };
      body.push(boxGlyph(box));
    });
  }
  body.push(text(offsetX + PANEL.left + innerW / 2, PANEL.height - 12, xLabel, { size: 11 }));
  return body;
}

function renderSweep(rows: SummaryRow[], xLabel: string, logScale: boolean): string {
  if (rows.length === 0) throw new Error("no data: summary csv has no rows");
  const panels: PanelSpec[] = [
    {
      title: "dynamics loss",
      metrics: [
        { name: "loss_dyn_d", color: COLORS.discrete, label: "discrete" },
        { name: "loss_dyn_c", color: COLORS.continuous, label: "continuous" },
      ],
    },
    {
      title: "covariance loss",
      metrics: [
        { name: "loss_cov_d", color: COLORS.discrete, label: "discrete" },
        { name: "loss_cov_c", color: COLORS.continuous, label: "continuous" },
      ],
    },
  ];
  const body: string[] = [];
  panels.forEach((p, i) => {
    body.push(...renderPanel(rows, p, xLabel, i * (PANEL.width + PANEL.gap), logScale));
  });
  const W = PANEL.width * 2 + PANEL.gap;
  // legend
  const lx = W / 2 - 90;
  body.push(`<rect x="${lx}" y="${PANEL.height + 4}" width="12" height="12" fill="${COLORS.discrete}" fill-opacity="0.45" stroke="${COLORS.discrete}"/>`);
  body.push(text(lx + 18, PANEL.height + 14, "discrete", { size: 10, anchor: "start" }));
  body.push(`<rect x="${lx + 90}" y="${PANEL.height + 4}" width="12" height="12" fill="${COLORS.continuous}" fill-opacity="0.45" stroke="${COLORS.continuous}"/>`);
  body.push(text(lx + 108, PANEL.height + 14, "continuous", { size: 10, anchor: "start" }));
  return svgDocument(W, PANEL.height + 26, body);
}

export function renderRadiusSweep(rows: SummaryRow[], opts: RenderOptions = {}): string {
  return renderSweep(rows, "dynamics scaling", opts.logScale ?? true);
}

export function renderGammaSweep(rows: SummaryRow[], opts: RenderOptions = {}): string {
  return renderSweep(rows, "step-variance parameter", opts.logScale ?? true);
}

export function renderBetaDensities(records: LossRecord[]): string {
  if (records.length === 0) throw new Error("no data: records csv has no rows");
  const gammas = [...new Set(records.map((r) => r.sweep))].sort((a, b) => a - b);
  const W = 520;
  const H = 320;
  const left = 54;
  const top = 30;
  const bottom = 44;
  const innerW = W - left - 20;
  const innerH = H - top - bottom;
  const yMax = 4.0; // taller spikes are clamped at the panel top
  const xs = linspace(0.002, 0.998, 400);
  const toX = (x: number) => left + innerW * x;
  const toY = (d: number) => top + innerH * (1 - Math.min(d, yMax) / yMax);
  const palette = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#666666"];
  const body: string[] = [];
  body.push(text(left + innerW / 2, 18, "gap distributions", { size: 13 }));
  body.push(line(left, top, left, top + innerH));
  body.push(line(left, top + innerH, left + innerW, top + innerH));
  for (const t of [0, 0.25, 0.5, 0.75, 1]) {
    body.push(line(toX(t), top + innerH, toX(t), top + innerH + 4));
    body.push(text(toX(t), top + innerH + 16, t.toString(), { size: 9 }));
  }
  for (const d of [0, 1, 2, 3, 4]) {
    body.push(line(left - 4, toY(d), left, toY(d)));
    body.push(text(left - 7, toY(d) + 3.5, d.toString(), { size: 9, anchor: "end" }));
  }
  gammas.forEach((g, i) => {
    const pts = xs.map((x): [number, number] => [toX(x), toY(symmetricBetaPdf(x, g))]);
    body.push(polyline(pts, palette[i % palette.length], "density"));
    body.push(
      text(left + innerW - 8, top + 14 + 14 * i, `gamma = ${niceLabel(g)}`, {
        size: 10,
        anchor: "end",
      }),
    );
  });
  body.push(text(left + innerW / 2, H - 10, "normalized gap", { size: 11 }));
  return svgDocument(W, H, body);
}
