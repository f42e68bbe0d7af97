// Flat little-endian tensor files, the interchange format of the label
// synthesis pipeline. Layout: bytes 0-3 magic 'FLDT'; byte 4 format
// version (1); byte 5 dtype code (0 = f32, 1 = u8, 2 = i32); byte 6
// ndim; byte 7 reserved zero; then ndim little-endian u32 dimensions;
// then the row-major little-endian payload.

import { readFileSync, writeFileSync } from 'node:fs';

export const MAGIC = 'FLDT';
export const VERSION = 1;

export type TensorData = Float32Array | Uint8Array | Int32Array;

export interface Tensor {
  dims: number[];
  data: TensorData;
}

export class FldtError extends Error {}

const F32 = 0;
const U8 = 1;
const I32 = 2;

function dtypeCode(data: TensorData): number {
  if (data instanceof Float32Array) {
    return F32;
  }
  if (data instanceof Uint8Array) {
    return U8;
  }
  if (data instanceof Int32Array) {
    return I32;
  }
  throw new FldtError(`unsupported payload type ${(data as object).constructor.name}`);
}

/** Serialize a tensor to the exact on-disk byte layout. */
export function encodeTensor(tensor: Tensor): Buffer {
  const { dims, data } = tensor;
  if (dims.length < 1) {
    throw new FldtError('zero-dimensional tensors are not supported');
  }
  let count = 1;
  for (const d of dims) {
    if (!Number.isInteger(d) || d < 0 || d > 0xffffffff) {
      throw new FldtError(`dimension ${d} outside u32 range`);
    }
    count *= d;
  }
  if (count !== data.length) {
    throw new FldtError(`dims [${dims.join(',')}] expect ${count} elements, payload holds ${data.length}`);
  }
  const code = dtypeCode(data);
  const itemSize = data.BYTES_PER_ELEMENT;
  const buf = Buffer.alloc(8 + 4 * dims.length + count * itemSize);
  buf.write(MAGIC, 0, 'ascii');
  buf.writeUInt8(VERSION, 4);
  buf.writeUInt8(code, 5);
  buf.writeUInt8(dims.length, 6);
  buf.writeUInt8(0, 7);
  let offset = 8;
  for (const d of dims) {
    buf.writeUInt32LE(d, offset);
    offset += 4;
  }
  // DataView keeps the payload little-endian on any host
  const view = new DataView(buf.buffer, buf.byteOffset + offset);
  if (code === F32) {
    for (let i = 0; i < count; i++) {
      view.setFloat32(i * 4, data[i], true);
    }
  } else if (code === I32) {
    for (let i = 0; i < count; i++) {
      view.setInt32(i * 4, data[i], true);
    }
  } else {
    for (let i = 0; i < count; i++) {
      view.setUint8(i, data[i]);
    }
  }
  return buf;
}

export function writeTensor(path: string, tensor: Tensor): void {
  writeFileSync(path, encodeTensor(tensor));
}

/** Exact inverse of encodeTensor. */
export function decodeTensor(raw: Buffer, label = 'tensor'): Tensor {
  if (raw.length < 4 || raw.toString('ascii', 0, 4) !== MAGIC) {
    throw new FldtError(`${label}: not a FLDT tensor (bad magic)`);
  }
  if (raw.length < 8) {
    throw new FldtError(`${label}: truncated header`);
  }
  const version = raw.readUInt8(4);
  const code = raw.readUInt8(5);
  const ndim = raw.readUInt8(6);
  if (version !== VERSION) {
    throw new FldtError(`${label}: unsupported format version ${version}`);
  }
  if (code !== F32 && code !== U8 && code !== I32) {
    throw new FldtError(`${label}: unknown dtype code ${code}`);
  }
  const dimsEnd = 8 + 4 * ndim;
  if (raw.length < dimsEnd) {
    throw new FldtError(`${label}: truncated dimension list`);
  }
  const dims: number[] = [];
  let count = 1;
  for (let i = 0; i < ndim; i++) {
    const d = raw.readUInt32LE(8 + 4 * i);
    dims.push(d);
    count *= d;
  }
  const itemSize = code === U8 ? 1 : 4;
  const expected = dimsEnd + count * itemSize;
  if (raw.length < expected) {
    const have = Math.floor((raw.length - dimsEnd) / itemSize);
    throw new FldtError(`${label}: payload holds ${have} of ${count} elements`);
  }
  if (raw.length > expected) {
    throw new FldtError(`${label}: ${raw.length - expected} trailing bytes after payload`);
  }
  const view = new DataView(raw.buffer, raw.byteOffset + dimsEnd);
  if (code === F32) {
    const data = new Float32Array(count);
    for (let i = 0; i < count; i++) {
      data[i] = view.getFloat32(i * 4, true);
    }
    return { dims, data };
  }
  if (code === I32) {
    const data = new Int32Array(count);
    for (let i = 0; i < count; i++) {
      data[i] = view.getInt32(i * 4, true);
    }
    return { dims, data };
  }
  const data = new Uint8Array(count);
  for (let i = 0; i < count; i++) {
    data[i] = view.getUint8(i);
  }
  return { dims, data };
}

export function readTensor(path: string): Tensor {
  return decodeTensor(readFileSync(path), path);
}
