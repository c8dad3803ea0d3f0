/**
 * Reader for the `.fld` lattice field format: one JSON header line
 * `{n, L, kind, seed, dist}` followed by a little-endian float64
 * row-major payload of size (L*n)^2.
 */

import { readFileSync } from "fs";

export interface FieldHeader {
  n: number;
  L: number;
  kind: string;
  seed: number | null;
  dist: string | null;
}

export interface FieldFile {
  header: FieldHeader;
  M: number;
  values: Float64Array; // row-major, values[ix * M + iy]
}

export function readField(path: string): FieldFile {
  const raw = readFileSync(path);
  const nl = raw.indexOf(0x0a);
  if (nl < 0) throw new Error(`${path}: missing header line`);
  const header = JSON.parse(raw.subarray(0, nl).toString("utf-8")) as FieldHeader;
  const M = Math.round(header.L * header.n);
  const payload = raw.subarray(nl + 1);
  if (payload.length !== M * M * 8) {
    throw new Error(`${path}: payload is ${payload.length} bytes, expected ${M * M * 8}`);
  }
  const values = new Float64Array(M * M);
  for (let i = 0; i < M * M; i++) values[i] = payload.readDoubleLE(i * 8);
  return { header, M, values };
}
