#!/usr/bin/env node
/**
 * plots render --kind <radius_sweep|gamma_sweep|beta_densities>
 *              --in <csv> --out <svg> [--linear]
 *
 * Box figures consume summary.csv; the density figure consumes records.csv
 * (its distinct sweep values are the Beta shape parameters). Exits 0 on
 * success, 1 with a diagnostic on schema mismatch or missing data.
 */

import { readFileSync, writeFileSync } from "node:fs";

import { parseRecords, parseSummary } from "./csv.js";
import { renderBetaDensities, renderGammaSweep, renderRadiusSweep } from "./figures.js";

const KINDS = ["radius_sweep", "gamma_sweep", "beta_densities"];

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    const a = argv[i];
    if (a === "--linear") {
      out.set("linear", "1");
    } else if (a.startsWith("--")) {
      const value = argv[i + 1];
      if (value === undefined) throw new Error(`missing value for ${a}`);
      out.set(a.slice(2), value);
      i++;
    } else if (!out.has("command")) {
      out.set("command", a);
    } else {
      throw new Error(`unexpected argument '${a}'`);
    }
  }
  return out;
}

export function main(argv: string[]): number {
  let args: Map<string, string>;
  try {
    args = parseArgs(argv);
    if (args.get("command") !== "render") {
      throw new Error("usage: plots render --kind <kind> --in <csv> --out <svg>");
    }
    const kind = args.get("kind");
    const input = args.get("in");
    const output = args.get("out");
    if (!kind || !KINDS.includes(kind)) {
      throw new Error(`--kind must be one of ${KINDS.join(", ")}`);
    }
    if (!input || !output) throw new Error("--in and --out are required");
    if (!output.endsWith(".svg")) {
      throw new Error("only .svg output is supported");
    }
    const textContent = readFileSync(input, "utf-8");
    let svg: string;
    if (kind === "beta_densities") {
      svg = renderBetaDensities(parseRecords(textContent));
    } else {
      const rows = parseSummary(textContent);
      const opts = { logScale: !args.has("linear") };
      svg = kind === "radius_sweep" ? renderRadiusSweep(rows, opts) : renderGammaSweep(rows, opts);
    }
    writeFileSync(output, svg, "utf-8");
    return 0;
  } catch (err) {
    console.error(`plots: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("cli.js") || entry.endsWith("plots")) {
  process.exit(main(process.argv.slice(2)));
}
