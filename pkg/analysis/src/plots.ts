/**
 * Figure renderers.  Every numeric value shown here is either copied from
 * a harness artifact or recomputed with the exact harness formula (tail
 * fit), never derived by a new method.
 */

import { writeFileSync } from "fs";
import { join, basename } from "path";
import { ReportBundle, CheckRecord } from "./bundle.js";
import { fitTailCounts, tailGrid, exceedanceCounts } from "./fit.js";
import { Svg, DEFAULT_FRAME, linScale, logScale, divergingColor, Scale } from "./svg.js";

export interface RenderResult {
  files: string[];
  notes: string[];
}

function plotArea(svg: Svg): { x0: number; x1: number; y0: number; y1: number } {
  const { width, height, margin } = svg.frame;
  return { x0: margin.left, x1: width - margin.right, y0: height - margin.bottom, y1: margin.top };
}

function drawAxes(svg: Svg, xlab: string, ylab: string, title: string): void {
  const a = plotArea(svg);
  svg.line(a.x0, a.y0, a.x1, a.y0);
  svg.line(a.x0, a.y0, a.x0, a.y1);
  svg.text((a.x0 + a.x1) / 2, svg.frame.height - 14, xlab, { anchor: "middle" });
  svg.text(18, (a.y0 + a.y1) / 2, ylab, { anchor: "middle", rotate: -90 });
  svg.text((a.x0 + a.x1) / 2, 22, title, { anchor: "middle", size: 15 });
}

// ---------------------------------------------------------------------------
// convergence: Laplace gap vs refinement, one figure per study file
// ---------------------------------------------------------------------------

export function renderConvergence(bundle: ReportBundle, outDir: string): RenderResult {
  if (bundle.studies.length === 0) {
    throw new Error(
      `no study outputs in ${bundle.root}: expected study_rows*.json written by the study command`);
  }
  const files: string[] = [];
  for (const study of bundle.studies) {
    const rows = study.rows;
    if (rows.length === 0) throw new Error(`${study.path}: empty study rows`);
    const svg = new Svg(DEFAULT_FRAME);
    const a = plotArea(svg);
    const ns = rows.map((r) => r.n);
    const gaps = rows.map((r) => r.gap_pam);
    const errs = rows.map((r) => 3 * r.stderr);
    const xs = logScale([Math.min(...ns) / 1.3, Math.max(...ns) * 1.3], [a.x0, a.x1]);
    const yMax = Math.max(...gaps.map((g, i) => g + errs[i])) * 1.15 || 1;
    const ys = linScale([0, yMax], [a.y0, a.y1]);

    drawAxes(svg, "refinement n (log)", "Laplace gap to linear prediction",
             `gap vs n  (${study.regime}, T=${study.T}, bump h=${study.phi.height})`);
    for (const n of ns) {
      svg.text(xs(n), a.y0 + 18, String(n), { anchor: "middle", size: 12 });
      svg.line(xs(n), a.y0, xs(n), a.y0 + 4);
    }
    for (const frac of [0, 0.5, 1]) {
      const v = yMax * frac;
      svg.text(a.x0 - 8, ys(v) + 4, v.toExponential(1), { anchor: "end", size: 11 });
      svg.line(a.x0 - 4, ys(v), a.x0, ys(v));
    }
    const pts: Array<[number, number]> = [];
    rows.forEach((r, i) => {
      const x = xs(r.n);
      pts.push([x, ys(r.gap_pam)]);
      svg.line(x, ys(Math.max(r.gap_pam - errs[i], 0)), x, ys(r.gap_pam + errs[i]), "#1f77b4", 1.5);
      svg.circle(x, ys(r.gap_pam), 4);
    });
    if (pts.length > 1) svg.polyline(pts);
    const name = `convergence_${study.regime}_${basename(study.path).replace(/\.json$/, "")}.svg`;
    const out = join(outDir, name);
    writeFileSync(out, svg.render());
    files.push(out);
  }
  return { files, notes: [] };
}

// ---------------------------------------------------------------------------
// tail fit: CCDF points + fitted slope, from a harness report or a ledger
// ---------------------------------------------------------------------------

interface TailData {
  m: number[];
  ccdf: number[];
  slope: number;
  intercept: number;
  source: string;
  reportedSlope?: number;
}

function tailFromReports(bundle: ReportBundle): TailData | null {
  for (const rep of bundle.reports) {
    for (const check of rep.checks) {
      const pts = (check.detail as { fit_points?: { m: number[]; ccdf: number[]; count: number[]; total: number } }).fit_points;
      if (!pts) continue;
      const fit = fitTailCounts(pts.m, pts.count, pts.total);
      if (!fit) continue;
      return {
        m: pts.m, ccdf: pts.ccdf, slope: fit.slope, intercept: fit.intercept,
        source: rep.path, reportedSlope: check.estimate ?? undefined,
      };
    }
  }
  return null;
}

function tailFromLedger(bundle: ReportBundle): TailData | { insufficient: number } | null {
  for (const [path, rows] of bundle.ledgers) {
    // keep events at positive-environment sites when the field is available
    let xi: Float64Array | null = null;
    for (const [fpath, field] of bundle.fields) {
      if (basename(fpath) === "xi.fld") xi = field.values;
    }
    const ks = rows.filter((r) => (xi ? xi[r.site] > 0 : true)).map((r) => r.k);
    if (ks.length < 1000) return { insufficient: ks.length };
    const grid = tailGrid(10, 10_000);
    const counts = exceedanceCounts(ks, grid);
    const fit = fitTailCounts(grid, counts, ks.length);
    if (!fit) return { insufficient: ks.length };
    const keep = grid.map((_, i) => i).filter((i) => counts[i] >= 10);
    return {
      m: keep.map((i) => grid[i]),
      ccdf: keep.map((i) => counts[i] / ks.length),
      slope: fit.slope,
      intercept: fit.intercept,
      source: path,
    };
  }
  return null;
}

export function renderTail(bundle: ReportBundle, outDir: string): RenderResult {
  const svg = new Svg(DEFAULT_FRAME);
  const a = plotArea(svg);
  const out = join(outDir, "tail_fit.svg");
  const data = tailFromReports(bundle) ?? tailFromLedger(bundle);
  if (data === null) {
    throw new Error(`no tail data in ${bundle.root}: expected a harness tail report or ledger.csv`);
  }
  if ("insufficient" in data) {
    drawAxes(svg, "offspring count m (log)", "P[k > m] (log)", "offspring tail");
    svg.text((a.x0 + a.x1) / 2, (a.y0 + a.y1) / 2,
             `insufficient data (${data.insufficient} events < 1000)`,
             { anchor: "middle", size: 18, fill: "#aa3333" });
    writeFileSync(out, svg.render());
    return { files: [out], notes: ["insufficient data watermark"] };
  }
  const lx = data.m.map((v) => Math.log10(v));
  const ly = data.ccdf.map((v) => Math.log10(v));
  const xs = linScale([Math.min(...lx) - 0.2, Math.max(...lx) + 0.2], [a.x0, a.x1]);
  const ys = linScale([Math.min(...ly) - 0.4, Math.max(...ly) + 0.4], [a.y0, a.y1]);
  drawAxes(svg, "offspring count m (log10)", "log10 P[k > m]",
           `offspring tail fit  slope=${data.slope.toFixed(4)}`);
  for (const e of lx) {
    svg.line(xs(e), a.y0, xs(e), a.y0 + 4);
    svg.text(xs(e), a.y0 + 18, e.toFixed(1), { anchor: "middle", size: 11 });
  }
  for (let i = 0; i < lx.length; i++) svg.circle(xs(lx[i]), ys(ly[i]), 3.5);
  // fitted line lives in natural-log space; map onto the log10 axes
  const lineAt = (logm: number) => (data.intercept + data.slope * logm * Math.LN10) / Math.LN10;
  svg.polyline([
    [xs(lx[0]), ys(lineAt(lx[0]))],
    [xs(lx[lx.length - 1]), ys(lineAt(lx[lx.length - 1]))],
  ], "#d62728");
  svg.text(a.x1 - 8, a.y1 + 18, `slope ${data.slope.toFixed(4)}`, { anchor: "end", fill: "#d62728" });
  if (data.reportedSlope !== undefined) {
    svg.text(a.x1 - 8, a.y1 + 36, `harness ${data.reportedSlope.toFixed(4)}`, { anchor: "end", size: 11 });
  }
  writeFileSync(out, svg.render());
  return { files: [out], notes: [`source: ${data.source}`] };
}

// ---------------------------------------------------------------------------
// field heatmaps
// ---------------------------------------------------------------------------

export function renderFields(bundle: ReportBundle, outDir: string, which?: string): RenderResult {
  const files: string[] = [];
  const chosen = [...bundle.fields.entries()].filter(([path]) =>
    which ? basename(path).includes(which) : true);
  if (chosen.length === 0) {
    throw new Error(`no .fld files${which ? ` matching '${which}'` : ""} in ${bundle.root}`);
  }
  for (const [path, field] of chosen) {
    const M = field.M;
    const size = 480;
    const cell = size / M;
    const svg = new Svg({ width: size + 120, height: size + 60,
                          margin: { top: 30, right: 90, bottom: 30, left: 30 } });
    let vmax = 0;
    for (const v of field.values) vmax = Math.max(vmax, Math.abs(v));
    if (vmax === 0) vmax = 1;
    for (let ix = 0; ix < M; ix++) {
      for (let iy = 0; iy < M; iy++) {
        const v = field.values[ix * M + iy] / vmax;
        svg.rect(30 + iy * cell, 30 + ix * cell, cell + 0.5, cell + 0.5, divergingColor(v));
      }
    }
    svg.text(30 + size / 2, 20, `${basename(path)}  (n=${field.header.n}, max|v|=${vmax.toPrecision(3)})`,
             { anchor: "middle", size: 13 });
    // simple colourbar
    for (let i = 0; i <= 40; i++) {
      const v = 1 - i / 20;
      svg.rect(size + 50, 30 + (i * size) / 41, 18, size / 41 + 0.5, divergingColor(v));
    }
    svg.text(size + 74, 38, `+${vmax.toPrecision(2)}`, { size: 11 });
    svg.text(size + 74, 30 + size, `-${vmax.toPrecision(2)}`, { size: 11 });
    const out = join(outDir, basename(path).replace(/\.fld$/, ".svg"));
    writeFileSync(out, svg.render());
    files.push(out);
  }
  return { files, notes: [] };
}
