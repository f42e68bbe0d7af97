// Exports per-class activation arrays from a training environment into
// the FLDT score stacks the label synthesis pipeline reads. The bridge
// is I/O only: it clamps negative activations to zero, bilinearly
// upsamples each plane to the working resolution, and lays planes out
// by class id. It never rescales values; peak normalization belongs to
// the consuming pipeline, which applies it when it loads the stack.

import { mkdirSync, readFileSync, writeFileSync } from 'node:fs';
import { basename, join } from 'node:path';

import { upsamplePlane } from './bilinear.js';
import { writeTensor } from './fldt.js';

export interface GridShape {
  height: number;
  width: number;
}

export interface ExportSpec {
  /** Paths of per-image activation dumps (JSON, see loadPlanes). */
  sources: string[];
  /** Class id of each source plane, in plane order. */
  classes: number[];
  /** Working resolution the planes are upsampled to. */
  target: GridShape;
  /** Source planes are already peak-normalized. Recorded in the
   * manifest for the consumer; the export itself never rescales. */
  normalized: boolean;
}

export interface ImageRecord {
  source: string;
  tensor: string;
  /** Classes whose exported plane has any positive value. */
  present: number[];
}

export interface ExportResult {
  manifestPath: string;
  images: ImageRecord[];
}

export class ExportError extends Error {}

// downstream seed maps reserve 255 as their unlabeled sentinel, so a
// stack can hold at most 254 class planes
export const MAX_CLASS = 254;

export function validateSpec(spec: ExportSpec): void {
  if (spec.sources.length === 0) {
    throw new ExportError('no source arrays given');
  }
  if (spec.classes.length === 0) {
    throw new ExportError('class list must not be empty');
  }
  const seen = new Set<number>();
  for (const c of spec.classes) {
    if (!Number.isInteger(c) || c < 1 || c > MAX_CLASS) {
      throw new ExportError(`class ids must be integers in 1..${MAX_CLASS}, got ${c}`);
    }
    if (seen.has(c)) {
      throw new ExportError(`class ${c} listed twice`);
    }
    seen.add(c);
  }
  const { height, width } = spec.target;
  if (!Number.isInteger(height) || !Number.isInteger(width) || height < 1 || width < 1) {
    throw new ExportError(`target shape must be positive, got ${height}x${width}`);
  }
}

export interface SourcePlanes {
  planes: Float64Array; // [K, height, width] row-major
  height: number;
  width: number;
}

function asFiniteNumber(v: unknown, path: string): number {
  if (typeof v !== 'number' || !Number.isFinite(v)) {
    throw new ExportError(`${path}: activation values must be finite numbers, got ${JSON.stringify(v)}`);
  }
  return v;
}

/**
 * Read one image's activation planes from a JSON dump. Accepts either
 * a nested [K][h][w] array or {shape: [K, h, w], data: [flat values]}.
 * K must equal the number of listed classes.
 */
export function loadPlanes(path: string, expectedPlanes: number): SourcePlanes {
  let text: string;
  try {
    text = readFileSync(path, 'utf8');
  } catch (err) {
    throw new ExportError(`${path}: unreadable source (${(err as Error).message})`);
  }
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch (err) {
    throw new ExportError(`${path}: not valid JSON (${(err as Error).message})`);
  }

  let k: number;
  let height: number;
  let width: number;
  let planes: Float64Array;

  if (Array.isArray(doc)) {
    k = doc.length;
    if (k === 0 || !Array.isArray(doc[0]) || !Array.isArray((doc[0] as unknown[])[0])) {
      throw new ExportError(`${path}: expected a [planes][rows][cols] array`);
    }
    const first = doc[0] as unknown[][];
    height = first.length;
    width = (first[0] as unknown[]).length;
    if (height === 0 || width === 0) {
      throw new ExportError(`${path}: planes must be non-empty`);
    }
    planes = new Float64Array(k * height * width);
    for (let c = 0; c < k; c++) {
      const plane = doc[c] as unknown[];
      if (!Array.isArray(plane) || plane.length !== height) {
        throw new ExportError(`${path}: plane ${c} has ${(plane as unknown[]).length ?? '?'} rows, expected ${height}`);
      }
      for (let i = 0; i < height; i++) {
        const row = plane[i] as unknown[];
        if (!Array.isArray(row) || row.length !== width) {
          throw new ExportError(`${path}: plane ${c} row ${i} has ${(row as unknown[]).length ?? '?'} values, expected ${width}`);
        }
        for (let j = 0; j < width; j++) {
          planes[(c * height + i) * width + j] = asFiniteNumber(row[j], path);
        }
      }
    }
  } else if (doc !== null && typeof doc === 'object' && 'shape' in doc && 'data' in doc) {
    const shape = (doc as { shape: unknown }).shape;
    const data = (doc as { data: unknown }).data;
    if (!Array.isArray(shape) || shape.length !== 3 || !shape.every((d) => Number.isInteger(d) && d > 0)) {
      throw new ExportError(`${path}: shape must be three positive integers, got ${JSON.stringify(shape)}`);
    }
    [k, height, width] = shape as number[];
    if (!Array.isArray(data) || data.length !== k * height * width) {
      throw new ExportError(
        `${path}: data holds ${Array.isArray(data) ? data.length : '?'} values, shape wants ${k * height * width}`);
    }
    planes = new Float64Array(k * height * width);
    for (let i = 0; i < planes.length; i++) {
      planes[i] = asFiniteNumber(data[i], path);
    }
  } else {
    throw new ExportError(`${path}: expected a nested array or {shape, data} object`);
  }

  if (k !== expectedPlanes) {
    throw new ExportError(`${path}: ${k} planes for ${expectedPlanes} listed classes (class-count mismatch)`);
  }
  return { planes, height, width };
}

function stemOf(path: string): string {
  const base = basename(path);
  const dot = base.lastIndexOf('.');
  return dot > 0 ? base.slice(0, dot) : base;
}

/**
 * Export every source image as a [C, H, W] f32 score stack plus one
 * class-presence manifest. C is the largest listed class id; plane
 * c - 1 carries class c and unlisted classes stay all-zero. Negative
 * activations are clamped to zero before resampling, so every exported
 * value is non-negative.
 */
export function exportCams(spec: ExportSpec, outDir: string): ExportResult {
  validateSpec(spec);
  mkdirSync(outDir, { recursive: true });

  const { height: dstH, width: dstW } = spec.target;
  const numClasses = Math.max(...spec.classes);
  const planeSize = dstH * dstW;
  const images: ImageRecord[] = [];
  const used = new Set<string>(['manifest.txt']);

  for (const source of spec.sources) {
    const name = `${stemOf(source)}.fldt`;
    if (used.has(name)) {
      throw new ExportError(`${source}: output name ${name} already taken`);
    }
    used.add(name);

    const { planes, height, width } = loadPlanes(source, spec.classes.length);
    for (let i = 0; i < planes.length; i++) {
      if (planes[i] < 0) {
        planes[i] = 0;
      }
    }

    const stack = new Float32Array(numClasses * planeSize);
    const present: number[] = [];
    for (let k = 0; k < spec.classes.length; k++) {
      const srcPlane = planes.subarray(k * height * width, (k + 1) * height * width);
      const resampled = upsamplePlane(srcPlane, height, width, dstH, dstW);
      stack.set(resampled, (spec.classes[k] - 1) * planeSize);
      if (resampled.some((v) => v > 0)) {
        present.push(spec.classes[k]);
      }
    }
    present.sort((a, b) => a - b);

    const tensorPath = join(outDir, name);
    writeTensor(tensorPath, { dims: [numClasses, dstH, dstW], data: stack });
    images.push({ source, tensor: name, present });
  }

  const lines = [
    'tool=labelsynth-bridge 0.1.0',
    `planes=${numClasses}`,
    `height=${dstH}`,
    `width=${dstW}`,
    `classes=${spec.classes.join(',')}`,
    `normalized=${spec.normalized}`,
    `images=${images.length}`,
  ];
  images.forEach((img, i) => {
    lines.push(`image.${i}.source=${img.source}`);
    lines.push(`image.${i}.tensor=${img.tensor}`);
    lines.push(`image.${i}.present=${img.present.join(',')}`);
  });
  const manifestPath = join(outDir, 'manifest.txt');
  writeFileSync(manifestPath, lines.join('\n') + '\n');
  return { manifestPath, images };
}
