#!/usr/bin/env node
/**
 * analysis — offline renderer for lattice-lab run outputs.
 *
 * Usage:
 *   analysis report <dir>
 *   analysis plot <dir> --kind convergence|tail|fields [--which <substr>] [--out <dir>]
 *
 * Reads only the documented interchange formats (report_*.json,
 * study_rows*.json, observables/ledger CSVs, .fld fields); never imports
 * the simulation package.  Figures are written beside the inputs unless
 * --out is given.
 */

import { loadBundle, summarize } from "./bundle.js";
import { renderConvergence, renderTail, renderFields, RenderResult } from "./plots.js";

function usage(): never {
  console.error("usage: analysis report <dir> | analysis plot <dir> --kind convergence|tail|fields [--which s] [--out dir]");
  process.exit(2);
}

function parseFlags(args: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < args.length; i += 2) {
    if (!args[i].startsWith("--") || i + 1 >= args.length) usage();
    flags.set(args[i].slice(2), args[i + 1]);
  }
  return flags;
}

export function main(argv: string[]): number {
  const [command, dir, ...rest] = argv;
  if (!command || !dir) usage();
  try {
    const bundle = loadBundle(dir);
    if (command === "report") {
      console.log(summarize(bundle));
      return 0;
    }
    if (command === "plot") {
      const flags = parseFlags(rest);
      const kind = flags.get("kind");
      const outDir = flags.get("out") ?? dir;
      let result: RenderResult;
      if (kind === "convergence") result = renderConvergence(bundle, outDir);
      else if (kind === "tail") result = renderTail(bundle, outDir);
      else if (kind === "fields") result = renderFields(bundle, outDir, flags.get("which"));
      else usage();
      for (const f of result.files) console.log(`wrote ${f}`);
      for (const n of result.notes) console.log(`note: ${n}`);
      return 0;
    }
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
  usage();
}

process.exit(main(process.argv.slice(2)));
