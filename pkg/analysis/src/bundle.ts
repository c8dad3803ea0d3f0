/**
 * Loader for a run's output tree.  Collects verification reports, study
 * rows, simulation CSVs and `.fld` files, and rejects bundles whose JSON
 * artifacts carry more than one run-level config hash.
 */

import { readFileSync, readdirSync, statSync, existsSync } from "fs";
import { join, basename } from "path";
import { readField, FieldFile } from "./fld.js";

export interface CheckRecord {
  name: string;
  policy: string;
  passed: boolean;
  estimate: number | null;
  reference: number | null;
  stderr: number | null;
  tolerance: number | null;
  status: string;
  detail: Record<string, unknown>;
}

export interface ReportFile {
  path: string;
  name: string;
  config: Record<string, unknown>;
  config_hash: string;
  passed: boolean;
  checks: CheckRecord[];
}

export interface StudyRows {
  path: string;
  config_hash: string;
  regime: string;
  T: number;
  phi: { center: number[]; width: number; height: number };
  rows: Array<Record<string, number>>;
}

export interface LedgerRow {
  t: number;
  site: number;
  k: number;
}

export interface ReportBundle {
  root: string;
  runHash: string | null;
  reports: ReportFile[];
  studies: StudyRows[];
  ledgers: Map<string, LedgerRow[]>;
  fields: Map<string, FieldFile>;
}

function* walk(dir: string): Generator<string> {
  for (const entry of readdirSync(dir)) {
    const p = join(dir, entry);
    if (statSync(p).isDirectory()) yield* walk(p);
    else yield p;
  }
}

function readJson(path: string): Record<string, unknown> {
  return JSON.parse(readFileSync(path, "utf-8"));
}

export function loadBundle(root: string): ReportBundle {
  if (!existsSync(root)) throw new Error(`bundle directory ${root} does not exist`);
  const bundle: ReportBundle = {
    root,
    runHash: null,
    reports: [],
    studies: [],
    ledgers: new Map(),
    fields: new Map(),
  };
  const hashes = new Map<string, string>(); // run-level hash -> first file carrying it

  const note = (hash: unknown, path: string) => {
    if (typeof hash !== "string") return;
    if (!hashes.has(hash)) hashes.set(hash, path);
  };

  for (const path of walk(root)) {
    const name = basename(path);
    if (name.endsWith(".fld")) {
      bundle.fields.set(path, readField(path));
    } else if (name === "ledger.csv") {
      bundle.ledgers.set(path, parseLedger(path));
    } else if (name.startsWith("report_") && name.endsWith(".json")) {
      const data = readJson(path) as unknown as ReportFile;
      bundle.reports.push({ ...data, path });
      note((data.config as Record<string, unknown>)?.config_hash_run, path);
    } else if (name.startsWith("study_rows") && name.endsWith(".json")) {
      const data = readJson(path) as unknown as StudyRows;
      bundle.studies.push({ ...data, path });
      note(data.config_hash, path);
    } else if (name === "resolved_config.json" || name === "simulation_summary.json"
               || name === "meta.json") {
      note(readJson(path).config_hash, path);
    }
  }

  if (hashes.size > 1) {
    const listing = [...hashes.entries()].map(([h, p]) => `${h} (${p})`).join(", ");
    throw new Error(`mixed config hashes in one bundle: ${listing}`);
  }
  bundle.runHash = hashes.size === 1 ? [...hashes.keys()][0] : null;
  return bundle;
}

function parseLedger(path: string): LedgerRow[] {
  const lines = readFileSync(path, "utf-8").trim().split(/\r?\n/);
  const header = lines[0].split(",");
  if (header[0] !== "t" || header[1] !== "site" || header[2] !== "k") {
    throw new Error(`${path}: unexpected ledger header ${lines[0]}`);
  }
  return lines.slice(1).map((line) => {
    const [t, site, k] = line.split(",");
    return { t: Number(t), site: Number(site), k: Number(k) };
  });
}

export function summarize(bundle: ReportBundle): string {
  const lines: string[] = [];
  lines.push(`bundle: ${bundle.root}`);
  lines.push(`run hash: ${bundle.runHash ?? "(none found)"}`);
  for (const rep of bundle.reports) {
    lines.push(`report ${rep.name}: ${rep.passed ? "PASS" : "FAIL"}`);
    for (const c of rep.checks) {
      const mark = c.status !== "ran" ? c.status : c.passed ? "pass" : "FAIL";
      lines.push(`  ${mark.padEnd(12)} ${c.name}`);
    }
  }
  for (const st of bundle.studies) {
    lines.push(`study ${st.regime}: ${st.rows.length} refinements`);
    for (const row of st.rows) {
      lines.push(`  n=${row.n}  mc=${row.mc?.toFixed(5)}  gap_linear=${row.gap_pam?.toFixed(5)}`);
    }
  }
  for (const [path, rows] of bundle.ledgers) {
    lines.push(`ledger ${path}: ${rows.length} branching events`);
  }
  lines.push(`fields: ${bundle.fields.size}`);
  return lines.join("\n");
}
