import { describe, expect, it } from 'vitest';

import { axisTable, upsamplePlane, upsampleStack } from '../src/bilinear.js';
import { makeRng } from './rng.js';

const F32_EPS = 1.1920929e-7;

function expectClose(actual: Float32Array, expected: number[], tol = 1e-6): void {
  expect(actual.length).toBe(expected.length);
  for (let i = 0; i < expected.length; i++) {
    const bound = tol * Math.max(1, Math.abs(expected[i]));
    expect(Math.abs(actual[i] - expected[i]), `element ${i}`).toBeLessThanOrEqual(bound);
  }
}

interface Fixture {
  name: string;
  src: number[];
  srcH: number;
  srcW: number;
  dstH: number;
  dstW: number;
  expected: number[];
}

function grid(h: number, w: number, f: (i: number, j: number) => number): number[] {
  const out: number[] = [];
  for (let i = 0; i < h; i++) {
    for (let j = 0; j < w; j++) {
      out.push(f(i, j));
    }
  }
  return out;
}

// Ten closed-form cases. Output pixel (i, j) samples the source at
// (i * (srcH - 1) / (dstH - 1), j * (srcW - 1) / (dstW - 1)), and
// interpolating an affine or separable source has an exact formula.
const FIXTURES: Fixture[] = [
  {
    name: 'two identical columns 0|1 to 4x4: columns linearly interpolated',
    src: [0, 1, 0, 1],
    srcH: 2,
    srcW: 2,
    dstH: 4,
    dstW: 4,
    expected: grid(4, 4, (_, j) => j / 3),
  },
  {
    name: 'constant plane stays constant at any size',
    src: grid(3, 2, () => 0.7),
    srcH: 3,
    srcW: 2,
    dstH: 7,
    dstW: 5,
    expected: grid(7, 5, () => 0.7),
  },
  {
    name: 'single source pixel broadcasts',
    src: [5],
    srcH: 1,
    srcW: 1,
    dstH: 3,
    dstW: 4,
    expected: grid(3, 4, () => 5),
  },
  {
    name: 'lone hot corner 2x2 to 3x3 is the product i/2 * j/2',
    src: [0, 0, 0, 1],
    srcH: 2,
    srcW: 2,
    dstH: 3,
    dstW: 3,
    expected: grid(3, 3, (i, j) => (i / 2) * (j / 2)),
  },
  {
    name: 'single row stretches along width only',
    src: [0, 1, 2],
    srcH: 1,
    srcW: 3,
    dstH: 2,
    dstW: 5,
    expected: grid(2, 5, (_, j) => j / 2),
  },
  {
    name: 'affine planes are reproduced exactly',
    src: grid(3, 4, (r, c) => 2 + 3 * r - c),
    srcH: 3,
    srcW: 4,
    dstH: 5,
    dstW: 7,
    expected: grid(5, 7, (i, j) => 2 + 3 * (i / 2) - j / 2),
  },
  {
    name: 'same size is an exact copy',
    src: [0.5, 1.25, -2, 3, 0.75, -0.125],
    srcH: 2,
    srcW: 3,
    dstH: 2,
    dstW: 3,
    expected: [0.5, 1.25, -2, 3, 0.75, -0.125],
  },
  {
    name: 'hot corner 2x2 to 5x5 is the separable hat (1-i/4)(1-j/4)',
    src: [1, 0, 0, 0],
    srcH: 2,
    srcW: 2,
    dstH: 5,
    dstW: 5,
    expected: grid(5, 5, (i, j) => (1 - i / 4) * (1 - j / 4)),
  },
  {
    name: 'single column stretches along height only',
    src: [0, 3, 6, 9],
    srcH: 4,
    srcW: 1,
    dstH: 7,
    dstW: 3,
    expected: grid(7, 3, (i) => 1.5 * i),
  },
  {
    name: 'center spike 3x3 to 5x5 is the outer product of [0,.5,1,.5,0]',
    src: [0, 0, 0, 0, 1, 0, 0, 0, 0],
    srcH: 3,
    srcW: 3,
    dstH: 5,
    dstW: 5,
    expected: grid(5, 5, (i, j) => (1 - Math.abs(i - 2) / 2) * (1 - Math.abs(j - 2) / 2)),
  },
];

describe('upsamplePlane closed forms', () => {
  it.each(FIXTURES)('$name', ({ src, srcH, srcW, dstH, dstW, expected }) => {
    expectClose(upsamplePlane(src, srcH, srcW, dstH, dstW), expected);
  });

  it('pins the two-column 2x2 -> 4x4 values element by element', () => {
    const out = upsamplePlane([0, 1, 0, 1], 2, 2, 4, 4);
    for (let i = 0; i < 4; i++) {
      expect(out[i * 4 + 0]).toBe(0);
      expect(out[i * 4 + 3]).toBe(1);
      expect(Math.abs(out[i * 4 + 1] - 1 / 3)).toBeLessThanOrEqual(F32_EPS);
      expect(Math.abs(out[i * 4 + 2] - 2 / 3)).toBeLessThanOrEqual(2 * F32_EPS);
    }
  });
});

describe('upsamplePlane properties', () => {
  it('preserves the plane maximum when the scale keeps source grid points', () => {
    const rng = makeRng(11);
    for (let trial = 0; trial < 50; trial++) {
      const srcH = 2 + Math.floor(rng() * 4);
      const srcW = 2 + Math.floor(rng() * 4);
      const k = 2 + Math.floor(rng() * 2);
      // dst - 1 a multiple of src - 1 lands every source pixel on an output pixel
      const dstH = (srcH - 1) * k + 1;
      const dstW = (srcW - 1) * k + 1;
      const src = Float32Array.from({ length: srcH * srcW }, () => rng() * 3 - 1);
      const out = upsamplePlane(src, srcH, srcW, dstH, dstW);
      const maxIn = Math.max(...src);
      const maxOut = Math.max(...out);
      expect(Math.abs(maxOut - maxIn)).toBeLessThanOrEqual(F32_EPS * Math.abs(maxIn));
    }
  });

  it('stays inside the source value range', () => {
    const rng = makeRng(12);
    for (let trial = 0; trial < 50; trial++) {
      const srcH = 1 + Math.floor(rng() * 5);
      const srcW = 1 + Math.floor(rng() * 5);
      const dstH = 1 + Math.floor(rng() * 12);
      const dstW = 1 + Math.floor(rng() * 12);
      const src = Float32Array.from({ length: srcH * srcW }, () => rng() * 10 - 5);
      const out = upsamplePlane(src, srcH, srcW, dstH, dstW);
      const lo = Math.min(...src);
      const hi = Math.max(...src);
      const slack = F32_EPS * Math.max(Math.abs(lo), Math.abs(hi));
      for (const v of out) {
        expect(v).toBeGreaterThanOrEqual(lo - slack);
        expect(v).toBeLessThanOrEqual(hi + slack);
      }
    }
  });

  it('keeps non-negative planes non-negative and zero planes zero', () => {
    const rng = makeRng(13);
    const src = Float32Array.from({ length: 12 }, () => rng());
    for (const v of upsamplePlane(src, 3, 4, 9, 11)) {
      expect(v).toBeGreaterThanOrEqual(0);
    }
    expect(upsamplePlane(new Float32Array(12), 3, 4, 9, 11)).toEqual(new Float32Array(99));
  });

  it('rejects bad axis sizes and mismatched plane lengths', () => {
    expect(() => axisTable(0, 4)).toThrow(RangeError);
    expect(() => axisTable(4, 0)).toThrow(RangeError);
    expect(() => upsamplePlane([1, 2, 3], 2, 2, 4, 4)).toThrow(/holds 3 values/);
  });
});

describe('upsampleStack', () => {
  it('resamples planes independently', () => {
    const planes = Float64Array.from([...[0, 1, 0, 1], ...[4, 4, 4, 4]]);
    const out = upsampleStack(planes, 2, 2, 2, 4, 4);
    expect(out.length).toBe(32);
    expectClose(out.subarray(0, 16), grid(4, 4, (_, j) => j / 3));
    expectClose(out.subarray(16), grid(4, 4, () => 4));
  });

  it('rejects stacks whose length disagrees with the declared shape', () => {
    expect(() => upsampleStack(new Float32Array(7), 2, 2, 2, 4, 4)).toThrow(/holds 7 values/);
  });
});
