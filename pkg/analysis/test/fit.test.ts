import { describe, it, expect } from "vitest";
import { readFileSync } from "fs";
import { join, dirname } from "path";
import { fileURLToPath } from "url";
import { fitTailCounts, tailGrid, exceedanceCounts } from "../src/fit.js";

const FIXTURES = join(dirname(fileURLToPath(import.meta.url)), "fixtures", "run");

interface TailReport {
  checks: Array<{
    estimate: number;
    detail: { fit_points?: { m: number[]; ccdf: number[]; count: number[]; total: number };
              intercept?: number };
  }>;
}

describe("tail fit", () => {
  it("re-fit matches the harness-reported slope to 1e-9 on identical inputs", () => {
    const report = JSON.parse(
      readFileSync(join(FIXTURES, "report_sampler_tail.json"), "utf-8")) as TailReport;
    const check = report.checks.find((c) => c.detail.fit_points);
    expect(check).toBeDefined();
    const pts = check!.detail.fit_points!;
    const fit = fitTailCounts(pts.m, pts.count, pts.total);
    expect(fit).not.toBeNull();
    expect(Math.abs(fit!.slope - check!.estimate)).toBeLessThan(1e-9);
    expect(Math.abs(fit!.intercept - check!.detail.intercept!)).toBeLessThan(1e-9);
  });

  it("harness fit points lie on the shared log grid", () => {
    const report = JSON.parse(
      readFileSync(join(FIXTURES, "report_sampler_tail.json"), "utf-8")) as TailReport;
    const pts = report.checks.find((c) => c.detail.fit_points)!.detail.fit_points!;
    const grid = new Set(tailGrid());
    for (const m of pts.m) expect(grid.has(m)).toBe(true);
  });

  it("recovers the exponent of an exact-Pareto sample within 0.02", () => {
    // deterministic LCG; K = ceil(m0 * U^{-1/alpha}) has CCDF (m0/m)^alpha exactly
    const alpha = 1.5;
    const m0 = 50;
    let state = 12345n;
    const a = 6364136223846793005n;
    const c = 1442695040888963407n;
    const mask = (1n << 64n) - 1n;
    const ks: number[] = [];
    for (let i = 0; i < 2_000_000; i++) {
      state = (state * a + c) & mask;
      const u = Number(state >> 11n) / 9007199254740992.0;
      ks.push(Math.ceil(m0 * Math.pow(1 - u, -1 / alpha)));
    }
    const grid = tailGrid(100, 10_000);
    const counts = exceedanceCounts(ks, grid);
    const fit = fitTailCounts(grid, counts, ks.length);
    expect(fit).not.toBeNull();
    expect(Math.abs(fit!.slope + alpha)).toBeLessThan(0.02);
  });

  it("returns null with fewer than four usable points", () => {
    expect(fitTailCounts([100, 200], [50, 20], 1000)).toBeNull();
    expect(fitTailCounts([100, 200, 400, 800], [8, 5, 2, 1], 1000)).toBeNull();
  });
});
