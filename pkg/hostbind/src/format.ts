// On-disk format shared with the primary package.  The byte layout here is
// the cross-language contract: a shard is an 8-byte header followed by raw
// little-endian payloads, and manifest.jsonl records one entry per line.

import { endianness } from "node:os";
import { crc32 as zlibCrc32 } from "node:zlib";
import { CorruptionError, InputError } from "./errors.js";

const LITTLE_ENDIAN = endianness() === "LE";

export const FORMAT_VERSION = 1;
export const MAGIC = Buffer.from("ERCS", "ascii");
export const HEADER_LEN = 8;
export const SHARD_LIMIT = 256 * 1024 * 1024;

export type DtypeName = "f32" | "f16";

const DTYPE_CODES: Record<DtypeName, number> = { f32: 0, f16: 1 };
const DTYPE_SIZES: Record<DtypeName, number> = { f32: 4, f16: 2 };

export function dtypeFromString(s: string): DtypeName {
  if (s === "f32" || s === "f16") {
    return s;
  }
  throw new InputError(`unknown dtype ${JSON.stringify(s)}`);
}

export function itemSize(dtype: DtypeName): number {
  return DTYPE_SIZES[dtype];
}

export function entrySize(seqLen: number, dim: number, dtype: DtypeName): number {
  if (seqLen < 1 || dim < 1) {
    throw new InputError(`entry shape must be positive, got ${seqLen}x${dim}`);
  }
  return seqLen * dim * DTYPE_SIZES[dtype];
}

export function crc32(data: Buffer | Uint8Array): number {
  return zlibCrc32(data) >>> 0;
}

export function buildShardHeader(dtype: DtypeName): Buffer {
  const header = Buffer.alloc(HEADER_LEN);
  MAGIC.copy(header, 0);
  header.writeUInt16LE(FORMAT_VERSION, 4);
  header.writeUInt8(DTYPE_CODES[dtype], 6);
  return header; // byte 7 reserved, zero
}

export function checkShardHeader(header: Buffer, dtype: DtypeName, name: string): void {
  if (header.length < HEADER_LEN || !header.subarray(0, 4).equals(MAGIC)) {
    throw new CorruptionError(`${name}: bad shard magic`);
  }
  const version = header.readUInt16LE(4);
  if (version !== FORMAT_VERSION) {
    throw new CorruptionError(`${name}: unsupported shard version ${version}`);
  }
  if (header.readUInt8(6) !== DTYPE_CODES[dtype]) {
    throw new CorruptionError(`${name}: shard dtype does not match store.json`);
  }
}

// -- binary16 conversion, round to nearest even -----------------------------

const scratch = new ArrayBuffer(4);
const scratchF32 = new Float32Array(scratch);
const scratchU32 = new Uint32Array(scratch);

export function f32ToF16Bits(x: number): number {
  scratchF32[0] = x; // double -> f32 rounding happens here
  const bits = scratchU32[0]!;
  const sign = (bits >>> 16) & 0x8000;
  const exp = (bits >>> 23) & 0xff;
  let mant = bits & 0x7fffff;
  if (exp === 0xff) {
    // infinity keeps a zero payload; any NaN becomes a quiet NaN
    return mant === 0 ? sign | 0x7c00 : sign | 0x7c00 | 0x200 | (mant >>> 13);
  }
  const e = exp - 127 + 15;
  if (e >= 0x1f) {
    return sign | 0x7c00; // overflow to infinity
  }
  if (e <= 0) {
    if (e < -10) {
      return sign; // below half the smallest subnormal: underflow to zero
    }
    mant |= 0x800000;
    const shift = 14 - e; // 14..24, result is an f16 subnormal
    const half = 1 << (shift - 1);
    const rest = mant & ((1 << shift) - 1);
    let h = mant >>> shift;
    if (rest > half || (rest === half && (h & 1) === 1)) {
      h += 1; // may carry into the exponent field: still correct
    }
    return sign | h;
  }
  let h = (e << 10) | (mant >>> 13);
  const rest = mant & 0x1fff;
  if (rest > 0x1000 || (rest === 0x1000 && (h & 1) === 1)) {
    h += 1;
  }
  return sign | h;
}

export function f16BitsToF32(h: number): number {
  const sign = (h & 0x8000) << 16;
  const exp = (h >>> 10) & 0x1f;
  let mant = h & 0x3ff;
  let bits: number;
  if (exp === 0) {
    if (mant === 0) {
      bits = sign;
    } else {
      let e = 0;
      while ((mant & 0x400) === 0) {
        mant <<= 1;
        e += 1;
      }
      bits = sign | ((113 - e) << 23) | ((mant & 0x3ff) << 13);
    }
  } else if (exp === 0x1f) {
    bits = sign | 0x7f800000 | (mant << 13);
  } else {
    bits = sign | ((exp + 112) << 23) | (mant << 13);
  }
  scratchU32[0] = bits >>> 0;
  return scratchF32[0]!;
}

// -- payload encoding -------------------------------------------------------

export function encodePayload(data: Float32Array, dtype: DtypeName): Buffer {
  if (dtype === "f32") {
    if (LITTLE_ENDIAN) {
      // platform layout already matches the format: view, not copy
      return Buffer.from(data.buffer, data.byteOffset, data.byteLength);
    }
    const out = Buffer.alloc(data.length * 4);
    for (let i = 0; i < data.length; i++) {
      out.writeFloatLE(data[i]!, i * 4);
    }
    return out;
  }
  const out = Buffer.alloc(data.length * 2);
  for (let i = 0; i < data.length; i++) {
    out.writeUInt16LE(f32ToF16Bits(data[i]!), i * 2);
  }
  return out;
}

export function decodePayload(buf: Buffer, dtype: DtypeName): Float32Array {
  const n = Math.floor(buf.length / DTYPE_SIZES[dtype]);
  const out = new Float32Array(n);
  if (dtype === "f32") {
    if (LITTLE_ENDIAN) {
      Buffer.from(out.buffer).set(buf.subarray(0, n * 4));
      return out;
    }
    for (let i = 0; i < n; i++) {
      out[i] = buf.readFloatLE(i * 4);
    }
  } else {
    for (let i = 0; i < n; i++) {
      out[i] = f16BitsToF32(buf.readUInt16LE(i * 2));
    }
  }
  return out;
}

// -- manifest lines ---------------------------------------------------------

export interface EntryKey {
  modelId: string;
  layer: number;
  docId: string;
}

export interface EntryMeta extends EntryKey {
  seqLen: number;
  dim: number;
  dtype: DtypeName;
  shard: string;
  offset: number;
  byteLen: number;
  crc32: number;
}

export function keyOf(modelId: string, layer: number, docId: string): string {
  return JSON.stringify([modelId, layer, docId]);
}

export function toManifestLine(m: EntryMeta): string {
  return JSON.stringify({
    model_id: m.modelId,
    layer: m.layer,
    doc_id: m.docId,
    seq_len: m.seqLen,
    dim: m.dim,
    dtype: m.dtype,
    shard: m.shard,
    offset: m.offset,
    byte_len: m.byteLen,
    crc32: m.crc32.toString(16).padStart(8, "0"),
  });
}

export function parseManifestLine(line: string): EntryMeta {
  const obj = JSON.parse(line) as Record<string, unknown>;
  const str = (k: string): string => {
    const v = obj[k];
    if (typeof v !== "string") {
      throw new Error(`manifest field ${k} must be a string`);
    }
    return v;
  };
  const int = (k: string): number => {
    const v = obj[k];
    if (typeof v !== "number" || !Number.isInteger(v)) {
      throw new Error(`manifest field ${k} must be an integer`);
    }
    return v;
  };
  const crcText = str("crc32");
  if (!/^[0-9a-f]{8}$/.test(crcText)) {
    throw new Error(`manifest field crc32 must be 8 hex digits`);
  }
  const meta: EntryMeta = {
    modelId: str("model_id"),
    layer: int("layer"),
    docId: str("doc_id"),
    seqLen: int("seq_len"),
    dim: int("dim"),
    dtype: dtypeFromString(str("dtype")),
    shard: str("shard"),
    offset: int("offset"),
    byteLen: int("byte_len"),
    crc32: Number.parseInt(crcText, 16),
  };
  if (meta.byteLen !== entrySize(meta.seqLen, meta.dim, meta.dtype)) {
    throw new Error(
      `byte_len ${meta.byteLen} does not match ${meta.seqLen}x${meta.dim} ${meta.dtype}`,
    );
  }
  return meta;
}
