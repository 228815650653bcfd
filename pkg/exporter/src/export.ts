/**
 * Export jobs: write logit/label arrays as PCT1 files plus a manifest with
 * the naming scheme the shiftcal toolkit's loader expects.
 */
import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { DataError, Tensor, checkLabels, encodeTensor } from "./pct1.js";

export type Role = "validation" | "target";
export type Task = "classification" | "segmentation";

export interface ExportCase {
  logits: Tensor;
  labels?: Tensor;
}

export interface ExportJob {
  role: Role;
  task: Task;
  classCount: number;
  destination: string;
  cases: ExportCase[];
}

function checkCase(job: ExportJob, c: ExportCase, index: number): void {
  const where = `case ${index}`;
  const shape = c.logits.shape;
  if (job.task === "classification") {
    if (shape.length !== 2) {
      throw new DataError(`${where}: classification logits must be [N, c]`);
    }
    if (shape[1] !== job.classCount) {
      throw new DataError(
        `${where}: logits class dim ${shape[1]} != class_count ${job.classCount}`
      );
    }
    if (c.labels && (c.labels.shape.length !== 1 || c.labels.shape[0] !== shape[0])) {
      throw new DataError(`${where}: labels must be a length-${shape[0]} vector`);
    }
  } else {
    if (shape.length !== 3 && shape.length !== 4) {
      throw new DataError(
        `${where}: segmentation logits must be [c, D1..Dk] with 2 or 3 spatial dims`
      );
    }
    if (shape[0] !== job.classCount) {
      throw new DataError(
        `${where}: logits class dim ${shape[0]} != class_count ${job.classCount}`
      );
    }
    if (c.labels) {
      const spatial = shape.slice(1);
      const labelShape = c.labels.shape;
      if (
        labelShape.length !== spatial.length ||
        labelShape.some((d, i) => d !== spatial[i])
      ) {
        throw new DataError(
          `${where}: label shape [${c.labels.shape}] must match spatial shape [${spatial}]`
        );
      }
    }
  }
  if (job.role === "validation" && !c.labels) {
    throw new DataError(`${where}: validation export requires labels`);
  }
  if (c.labels) {
    checkLabels(c.labels, job.classCount);
  }
}

/** Write every case as PCT1 files plus manifest.txt; returns the manifest path. */
export function runExport(job: ExportJob): string {
  if (!Number.isInteger(job.classCount) || job.classCount < 2) {
    throw new DataError(`class_count must be an integer >= 2, got ${job.classCount}`);
  }
  if (job.cases.length === 0) {
    throw new DataError("export job has no cases");
  }
  job.cases.forEach((c, i) => checkCase(job, c, i));

  mkdirSync(job.destination, { recursive: true });
  const lines = [
    `role=${job.role}`,
    `task=${job.task}`,
    `class_count=${job.classCount}`,
    "",
  ];
  job.cases.forEach((c, i) => {
    const caseId = `case_${String(i).padStart(4, "0")}`;
    const logitsName = `${caseId}_logits.pct1`;
    writeFileSync(join(job.destination, logitsName), encodeTensor(c.logits));
    let labelsName = "-";
    if (c.labels) {
      labelsName = `${caseId}_labels.pct1`;
      writeFileSync(join(job.destination, labelsName), encodeTensor(c.labels));
    }
    lines.push(`${caseId}\t${logitsName}\t${labelsName}`);
  });
  const manifestPath = join(job.destination, "manifest.txt");
  writeFileSync(manifestPath, lines.join("\n") + "\n");
  return manifestPath;
}
