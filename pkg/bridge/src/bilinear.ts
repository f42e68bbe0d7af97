// Corner-aligned bilinear resampling. Output pixel (i, j) samples the
// source at (i * (srcH - 1) / (dstH - 1), j * (srcW - 1) / (dstW - 1)),
// so the four output corners reproduce the four source corners exactly
// and a source grid point is copied verbatim whenever the scale lands
// an output pixel on it. Every output value is a convex combination of
// source values, so the result stays inside [min(src), max(src)] up to
// f32 rounding.

export interface AxisTable {
  lo: Int32Array;
  hi: Int32Array;
  t: Float64Array; // weight of hi; lo gets 1 - t
}

export function axisTable(srcDim: number, dstDim: number): AxisTable {
  if (srcDim < 1 || dstDim < 1) {
    throw new RangeError(`axis sizes must be positive, got ${srcDim} -> ${dstDim}`);
  }
  const lo = new Int32Array(dstDim);
  const hi = new Int32Array(dstDim);
  const t = new Float64Array(dstDim);
  // a single row or column on either side pins the sample to coordinate 0
  const scale = srcDim > 1 && dstDim > 1 ? (srcDim - 1) / (dstDim - 1) : 0;
  for (let i = 0; i < dstDim; i++) {
    const pos = i * scale;
    const base = Math.min(Math.floor(pos), srcDim - 1);
    lo[i] = base;
    hi[i] = Math.min(base + 1, srcDim - 1);
    t[i] = pos - base;
  }
  return { lo, hi, t };
}

/** Resample one row-major plane of srcH x srcW values to dstH x dstW. */
export function upsamplePlane(
  src: ArrayLike<number>,
  srcH: number,
  srcW: number,
  dstH: number,
  dstW: number,
): Float32Array {
  if (src.length !== srcH * srcW) {
    throw new RangeError(`plane holds ${src.length} values, expected ${srcH}x${srcW}`);
  }
  const rows = axisTable(srcH, dstH);
  const cols = axisTable(srcW, dstW);
  const out = new Float32Array(dstH * dstW);
  for (let i = 0; i < dstH; i++) {
    const r0 = rows.lo[i] * srcW;
    const r1 = rows.hi[i] * srcW;
    const tr = rows.t[i];
    for (let j = 0; j < dstW; j++) {
      const c0 = cols.lo[j];
      const c1 = cols.hi[j];
      const tc = cols.t[j];
      const top = src[r0 + c0] + tc * (src[r0 + c1] - src[r0 + c0]);
      const bottom = src[r1 + c0] + tc * (src[r1 + c1] - src[r1 + c0]);
      out[i * dstW + j] = top + tr * (bottom - top);
    }
  }
  return out;
}

/** Resample each plane of a [C, srcH, srcW] stack independently. */
export function upsampleStack(
  planes: Float32Array | Float64Array,
  numPlanes: number,
  srcH: number,
  srcW: number,
  dstH: number,
  dstW: number,
): Float32Array {
  if (planes.length !== numPlanes * srcH * srcW) {
    throw new RangeError(`stack holds ${planes.length} values, expected ${numPlanes}x${srcH}x${srcW}`);
  }
  const out = new Float32Array(numPlanes * dstH * dstW);
  const srcPlane = srcH * srcW;
  const dstPlane = dstH * dstW;
  for (let c = 0; c < numPlanes; c++) {
    out.set(upsamplePlane(planes.subarray(c * srcPlane, (c + 1) * srcPlane), srcH, srcW, dstH, dstW), c * dstPlane);
  }
  return out;
}
