#!/usr/bin/env node
/**
 * logit-exporter <job.json> [--dest <directory>]
 *
 * Reads a JSON job description and writes PCT1 tensors plus a manifest.
 * Job schema:
 *   {
 *     "role": "validation" | "target",
 *     "task": "classification" | "segmentation",
 *     "class_count": number,
 *     "destination": string,          // optional when --dest is given
 *     "cases": [
 *       { "logits": {"shape": [...], "data": [...]},
 *         "labels": {"shape": [...], "data": [...]} }   // labels optional
 *     ]
 *   }
 *
 * Exit codes: 0 success, 1 usage error, 2 data error.
 */
import { readFileSync } from "node:fs";

import { ExportJob, runExport } from "./export.js";
import { DataError } from "./pct1.js";

function usage(message: string): never {
  process.stderr.write(`usage error: ${message}\n`);
  process.stderr.write("usage: logit-exporter <job.json> [--dest <directory>]\n");
  process.exit(1);
}

function parseJob(raw: unknown, destOverride?: string): ExportJob {
  if (typeof raw !== "object" || raw === null) {
    throw new DataError("job description must be a JSON object");
  }
  const job = raw as Record<string, unknown>;
  const role = job["role"];
  const task = job["task"];
  const classCount = job["class_count"];
  const destination = destOverride ?? job["destination"];
  const cases = job["cases"];
  if (role !== "validation" && role !== "target") {
    throw new DataError(`role must be "validation" or "target", got ${JSON.stringify(role)}`);
  }
  if (task !== "classification" && task !== "segmentation") {
    throw new DataError(`task must be "classification" or "segmentation"`);
  }
  if (typeof classCount !== "number") {
    throw new DataError("class_count must be a number");
  }
  if (typeof destination !== "string" || destination.length === 0) {
    throw new DataError("destination missing (set it in the job or pass --dest)");
  }
  if (!Array.isArray(cases)) {
    throw new DataError("cases must be an array");
  }
  return {
    role,
    task,
    classCount,
    destination,
    cases: cases as ExportJob["cases"],
  };
}

export function main(argv: string[]): number {
  const args = [...argv];
  let dest: string | undefined;
  const destIndex = args.indexOf("--dest");
  if (destIndex >= 0) {
    if (destIndex + 1 >= args.length) usage("--dest requires a value");
    dest = args[destIndex + 1];
    args.splice(destIndex, 2);
  }
  if (args.length !== 1) usage("expected exactly one job file");
  let raw: unknown;
  try {
    raw = JSON.parse(readFileSync(args[0], "utf8"));
  } catch (err) {
    process.stderr.write(`data error: cannot read job file: ${String(err)}\n`);
    return 2;
  }
  try {
    const manifestPath = runExport(parseJob(raw, dest));
    process.stdout.write(`manifest=${manifestPath}\n`);
    return 0;
  } catch (err) {
    if (err instanceof DataError) {
      process.stderr.write(`data error: ${err.message}\n`);
      return 2;
    }
    throw err;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
