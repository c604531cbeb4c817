/**
 * Readers for the two CSV schemas the bench emits.
 *
 * records.csv: sweep,replicate,loss_dyn_d,loss_dyn_c,loss_cov_d,loss_cov_c,failures
 * summary.csv: sweep,metric,median,q1,q3,wlo,whi
 *
 * Schema mismatches raise with a column diagnostic so the CLI can exit
 * non-zero with a usable message.
 */

export const RECORD_HEADER = [
  "sweep",
  "replicate",
  "loss_dyn_d",
  "loss_dyn_c",
  "loss_cov_d",
  "loss_cov_c",
  "failures",
];

export const SUMMARY_HEADER = ["sweep", "metric", "median", "q1", "q3", "wlo", "whi"];

export interface LossRecord {
  sweep: number;
  replicate: number;
  loss_dyn_d: number;
  loss_dyn_c: number;
  loss_cov_d: number;
  loss_cov_c: number;
  failures: number;
}

export interface SummaryRow {
  sweep: number;
  metric: string;
  median: number;
  q1: number;
  q3: number;
  wlo: number;
  whi: number;
}

function splitLines(text: string): string[] {
  return text.split(/\r?\n/).filter((line) => line.trim().length > 0);
}

function checkHeader(got: string[], want: string[], what: string): void {
  for (let i = 0; i < want.length; i++) {
    if (got[i] !== want[i]) {
      throw new Error(
        `${what}: expected column ${i + 1} to be '${want[i]}', got '${got[i] ?? "<missing>"}'`,
      );
    }
  }
  if (got.length !== want.length) {
    throw new Error(`${what}: expected ${want.length} columns, got ${got.length}`);
  }
}

export function parseRecords(text: string): LossRecord[] {
  const lines = splitLines(text);
  if (lines.length === 0) throw new Error("records csv: file is empty");
  checkHeader(lines[0].split(","), RECORD_HEADER, "records csv");
  const out: LossRecord[] = [];
  for (const line of lines.slice(1)) {
    const cells = line.split(",");
    out.push({
      sweep: Number(cells[0]),
      replicate: Number(cells[1]),
      loss_dyn_d: cells[2] === "" ? NaN : Number(cells[2]),
      loss_dyn_c: cells[3] === "" ? NaN : Number(cells[3]),
      loss_cov_d: cells[4] === "" ? NaN : Number(cells[4]),
      loss_cov_c: cells[5] === "" ? NaN : Number(cells[5]),
      failures: Number(cells[6]),
    });
  }
  return out;
}

export function parseSummary(text: string): SummaryRow[] {
  const lines = splitLines(text);
  if (lines.length === 0) throw new Error("summary csv: file is empty");
  checkHeader(lines[0].split(","), SUMMARY_HEADER, "summary csv");
  const out: SummaryRow[] = [];
  for (const line of lines.slice(1)) {
    const cells = line.split(",");
    const row: SummaryRow = {
      sweep: Number(cells[0]),
      metric: cells[1],
      median: Number(cells[2]),
      q1: Number(cells[3]),
      q3: Number(cells[4]),
      wlo: Number(cells[5]),
      whi: Number(cells[6]),
    };
    for (const key of ["sweep", "median", "q1", "q3", "wlo", "whi"] as const) {
      if (!Number.isFinite(row[key])) {
        throw new Error(`summary csv: non-numeric value in column '${key}': ${line}`);
      }
    }
    out.push(row);
  }
  return out;
}
