#!/usr/bin/env node
// Command-line front end: export-cams --in <arrays> --classes <list>
// --size HxW --out <dir>. Exit codes: 0 success, 2 bad usage or input.

import { parseArgs } from 'node:util';

import { ExportError, exportCams } from './export.js';

const USAGE = `usage: export-cams --in activations.json [--in more.json ...]
                   --classes 1,3 --size 64x64 --out exported/ [--normalized]

Reads per-image activation dumps (JSON, either [planes][rows][cols] or
{shape, data}), clamps negative values to zero, bilinearly upsamples
every plane to the target HxW, and writes one FLDT f32 [C,H,W] score
stack per image plus a class-presence manifest. --classes gives the
class id of each source plane; --normalized records that the sources
are already peak-normalized (values are never rescaled here).`;

function fail(message: string): never {
  process.stderr.write(`export-cams: ${message}\n`);
  process.exit(2);
}

function main(argv: string[]): number {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      options: {
        in: { type: 'string', multiple: true },
        classes: { type: 'string' },
        size: { type: 'string' },
        out: { type: 'string' },
        normalized: { type: 'boolean', default: false },
        help: { type: 'boolean', short: 'h', default: false },
      },
      allowPositionals: false,
    });
  } catch (err) {
    fail((err as Error).message);
  }
  const opts = parsed.values;
  if (opts.help) {
    process.stdout.write(USAGE + '\n');
    return 0;
  }
  if (!opts.in || opts.in.length === 0 || !opts.classes || !opts.size || !opts.out) {
    fail('--in, --classes, --size and --out are all required (see --help)');
  }

  const classes = opts.classes.split(',').map((part) => {
    const id = Number(part.trim());
    if (!Number.isInteger(id)) {
      fail(`--classes expects comma-separated integers, got '${part}'`);
    }
    return id;
  });

  const sizeMatch = /^(\d+)x(\d+)$/.exec(opts.size);
  if (!sizeMatch) {
    fail(`--size expects HxW (e.g. 64x64), got '${opts.size}'`);
  }
  const target = { height: Number(sizeMatch[1]), width: Number(sizeMatch[2]) };

  try {
    const result = exportCams(
      { sources: opts.in, classes, target, normalized: opts.normalized },
      opts.out,
    );
    for (const img of result.images) {
      process.stdout.write(`${img.source} -> ${img.tensor} (classes ${img.present.join(',') || 'none'})\n`);
    }
    process.stdout.write(`wrote ${result.images.length} tensors + ${result.manifestPath}\n`);
    return 0;
  } catch (err) {
    if (err instanceof ExportError) {
      fail(err.message);
    }
    throw err;
  }
}

process.exit(main(process.argv.slice(2)));
