/**
 * Weighted log-log CCDF fit, mirroring the harness formula exactly:
 * weights are the exceedance counts, X = log m, Y = log(count/total),
 * slope = sum W (X - xbar)(Y - ybar) / sum W (X - xbar)^2.
 */

export interface TailFit {
  slope: number;
  intercept: number;
}

export function fitTailCounts(m: number[], count: number[], total: number): TailFit | null {
  const keep: number[] = [];
  for (let i = 0; i < m.length; i++) if (count[i] >= 10) keep.push(i);
  if (keep.length < 4) return null;
  const X = keep.map((i) => Math.log(m[i]));
  const Y = keep.map((i) => Math.log(count[i] / total));
  const w = keep.map((i) => count[i]);
  const wSum = w.reduce((a, b) => a + b, 0);
  const W = w.map((v) => v / wSum);
  let xbar = 0;
  let ybar = 0;
  for (let i = 0; i < W.length; i++) {
    xbar += W[i] * X[i];
    ybar += W[i] * Y[i];
  }
  let num = 0;
  let den = 0;
  for (let i = 0; i < W.length; i++) {
    num += W[i] * (X[i] - xbar) * (Y[i] - ybar);
    den += W[i] * (X[i] - xbar) * (X[i] - xbar);
  }
  const slope = num / den;
  return { slope, intercept: ybar - slope * xbar };
}

/** Log-spaced integer grid matching the harness tail grid. */
export function tailGrid(mLo = 100, mHi = 10_000, nPoints = 12): number[] {
  const out: number[] = [];
  const a = Math.log10(mLo);
  const b = Math.log10(mHi);
  for (let i = 0; i < nPoints; i++) {
    const v = Math.round(Math.pow(10, a + ((b - a) * i) / (nPoints - 1)));
    if (out.length === 0 || v !== out[out.length - 1]) out.push(v);
  }
  return out;
}

/** Exceedance counts of offspring sizes on a grid (ks need not be sorted). */
export function exceedanceCounts(ks: number[], grid: number[]): number[] {
  const sorted = [...ks].sort((a, b) => a - b);
  return grid.map((m) => {
    // count of k > m via binary search for the first index with k > m
    let lo = 0;
    let hi = sorted.length;
    while (lo < hi) {
      const mid = (lo + hi) >> 1;
      if (sorted[mid] <= m) lo = mid + 1;
      else hi = mid;
    }
    return sorted.length - lo;
  });
}
