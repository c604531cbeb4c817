/**
 * Symmetric Beta density used for the step-distribution illustration.
 */

// Lanczos approximation (g = 7, n = 9), standard coefficients
const LANCZOS = [
  0.99999999999980993, 676.5203681218851, -1259.1392167224028, 771.32342877765313,
  -176.61502916214059, 12.507343278686905, -0.13857109526572012, 9.9843695780195716e-6,
  1.5056327351493116e-7,
];

export function logGamma(x: number): number {
  if (x < 0.5) {
    // reflection
    return Math.log(Math.PI / Math.sin(Math.PI * x)) - logGamma(1 - x);
  }
  x -= 1;
  let a = LANCZOS[0];
  const t = x + 7.5;
  for (let i = 1; i < 9; i++) a += LANCZOS[i] / (x + i);
  return 0.5 * Math.log(2 * Math.PI) + (x + 0.5) * Math.log(t) - t + Math.log(a);
}

/** Density of Beta(gamma, gamma) at x in (0, 1). */
export function symmetricBetaPdf(x: number, gamma: number): number {
  if (x <= 0 || x >= 1) return 0;
  const logNorm = logGamma(2 * gamma) - 2 * logGamma(gamma);
  return Math.exp(logNorm + (gamma - 1) * (Math.log(x) + Math.log(1 - x)));
}

export function linspace(a: number, b: number, count: number): number[] {
  const out: number[] = [];
  for (let i = 0; i < count; i++) out.push(a + ((b - a) * i) / (count - 1));
  return out;
}
