// Host-side binding to the activation store.  Layout under the root:
//
//     store.json       {"version": 1, "dtype": "f32", "shards": [...]}
//     manifest.jsonl   one entry per line, append-only index
//     shard-000000.bin 8-byte header then raw little-endian payloads
//     .lock            present while a writer holds the store
//
// Readers never take the lock; a read-write handle is single-owner and
// removes .lock on close().  A torn final manifest line (crashed writer)
// is dropped on load and truncated away before the next append.

import * as fs from "node:fs";
import * as path from "node:path";
import { setTimeout as delay } from "node:timers/promises";

import {
  CorruptionError,
  DuplicateKeyError,
  InputError,
  KeyNotFoundError,
  ShapeError,
  StoreExistsError,
  StoreModeError,
  StoreNotFoundError,
} from "./errors.js";
import {
  DtypeName,
  EntryKey,
  EntryMeta,
  FORMAT_VERSION,
  HEADER_LEN,
  SHARD_LIMIT,
  buildShardHeader,
  checkShardHeader,
  crc32,
  decodePayload,
  dtypeFromString,
  encodePayload,
  keyOf,
  parseManifestLine,
  toManifestLine,
} from "./format.js";

const STORE_JSON = "store.json";
const MANIFEST = "manifest.jsonl";
const LOCK = ".lock";

export type StoreMode = "read" | "read-write";

export interface StoreOptions {
  // rollover threshold override so tests can force multi-shard stores
  shardLimitBytes?: number;
}

/** Row-major float32 activation matrix. */
export interface Matrix {
  rows: number;
  cols: number;
  data: Float32Array;
}

export function asMatrix(input: Matrix | number[][], name = "tensor"): Matrix {
  if (Array.isArray(input)) {
    const rows = input.length;
    const first = input[0];
    if (rows < 1 || !Array.isArray(first)) {
      throw new ShapeError(`${name}: expected 2-D [seq_len, dim]`);
    }
    const cols = first.length;
    if (cols < 1) {
      throw new ShapeError(`${name}: seq_len and dim must be >= 1, got ${rows}x${cols}`);
    }
    const data = new Float32Array(rows * cols);
    for (let r = 0; r < rows; r++) {
      const row = input[r];
      if (!Array.isArray(row) || row.length !== cols) {
        throw new ShapeError(`${name}: rows must all have length ${cols}`);
      }
      for (let c = 0; c < cols; c++) {
        const v = row[c];
        if (typeof v !== "number") {
          throw new ShapeError(`${name}: element [${r}][${c}] is not a number`);
        }
        data[r * cols + c] = v;
      }
    }
    checkFinite(data, name);
    return { rows, cols, data };
  }
  const { rows, cols, data } = input;
  if (!Number.isInteger(rows) || !Number.isInteger(cols) || rows < 1 || cols < 1) {
    throw new ShapeError(`${name}: seq_len and dim must be >= 1, got ${rows}x${cols}`);
  }
  if (!(data instanceof Float32Array) || data.length !== rows * cols) {
    throw new ShapeError(`${name}: data must be a Float32Array of length ${rows * cols}`);
  }
  checkFinite(data, name);
  return input;
}

function checkFinite(data: Float32Array, name: string): void {
  for (let i = 0; i < data.length; i++) {
    if (!Number.isFinite(data[i])) {
      throw new ShapeError(`${name}: contains NaN or Inf`);
    }
  }
}

function sleepSync(ms: number): void {
  Atomics.wait(new Int32Array(new SharedArrayBuffer(4)), 0, 0, ms);
}

function errnoCode(e: unknown): string | undefined {
  return (e as NodeJS.ErrnoException).code;
}

function acquireLock(root: string): void {
  let fd: number;
  try {
    fd = fs.openSync(path.join(root, LOCK), "wx");
  } catch (e) {
    if (errnoCode(e) === "EEXIST") {
      throw new StoreModeError(`another writer holds the lock at ${root}`);
    }
    throw e;
  }
  fs.writeSync(fd, String(process.pid));
  fs.closeSync(fd);
}

function releaseLock(root: string): void {
  try {
    fs.unlinkSync(path.join(root, LOCK));
  } catch (e) {
    if (errnoCode(e) !== "ENOENT") {
      throw e;
    }
  }
}

function writeStoreJson(root: string, dtype: DtypeName, shards: string[]): void {
  const tmp = path.join(root, STORE_JSON + ".tmp");
  fs.writeFileSync(tmp, JSON.stringify({ version: FORMAT_VERSION, dtype, shards }));
  fs.renameSync(tmp, path.join(root, STORE_JSON));
}

function readStoreJson(root: string): { dtype: DtypeName; shards: string[] } {
  const file = path.join(root, STORE_JSON);
  let isDir = false;
  try {
    isDir = fs.statSync(root).isDirectory();
  } catch {
    isDir = false;
  }
  if (!isDir || !fs.existsSync(file)) {
    throw new StoreNotFoundError(`no store at ${root}`);
  }
  let obj: Record<string, unknown>;
  let dtype: DtypeName;
  try {
    obj = JSON.parse(fs.readFileSync(file, "utf-8")) as Record<string, unknown>;
    dtype = dtypeFromString(String(obj["dtype"]));
  } catch (e) {
    throw new CorruptionError(`unreadable store.json: ${(e as Error).message}`);
  }
  if (obj["version"] !== FORMAT_VERSION) {
    throw new CorruptionError(`unsupported store version ${JSON.stringify(obj["version"])}`);
  }
  const shards = Array.isArray(obj["shards"]) ? (obj["shards"] as string[]) : [];
  return { dtype, shards };
}

// Parse manifest.jsonl; only the final line may be malformed (torn write),
// anything else is corruption.  goodEnd is the byte offset after the last
// intact line so a writer can truncate the tear away.
function loadManifest(file: string): { index: Map<string, EntryMeta>; goodEnd: number } {
  const index = new Map<string, EntryMeta>();
  if (!fs.existsSync(file)) {
    return { index, goodEnd: 0 };
  }
  const raw = fs.readFileSync(file);
  let pos = 0;
  let goodEnd = 0;
  while (pos < raw.length) {
    const nl = raw.indexOf(0x0a, pos);
    const line = nl < 0 ? raw.subarray(pos) : raw.subarray(pos, nl);
    const last = nl < 0 || nl === raw.length - 1;
    let meta: EntryMeta;
    try {
      meta = parseManifestLine(line.toString("utf-8"));
      if (nl < 0) {
        throw new Error("missing trailing newline");
      }
    } catch (e) {
      if (last) {
        break; // torn final line, drop it
      }
      throw new CorruptionError(`manifest damaged mid-file: ${(e as Error).message}`);
    }
    const k = keyOf(meta.modelId, meta.layer, meta.docId);
    if (index.has(k)) {
      throw new CorruptionError(`duplicate manifest key: ${k}`);
    }
    index.set(k, meta);
    pos = nl + 1;
    goodEnd = pos;
  }
  return { index, goodEnd };
}

export class BoundStore {
  readonly root: string;
  readonly mode: StoreMode;
  readonly dtype: DtypeName;
  /** Injected latency per read, for pipeline experiments. */
  readDelayMs = 0;

  private readonly shards: string[];
  private readonly index: Map<string, EntryMeta>;
  private readonly shardLimit: number;
  private readonly fds = new Map<string, number>();
  private readonly checkedHeaders = new Set<string>();
  private readonly handles = new Map<string, Promise<fs.promises.FileHandle>>();
  private manifestFd: number | null = null;
  private shardFd: number | null = null;
  private shardSize = 0;
  private closed = false;

  /** Use boundCreate / boundOpen, not the constructor. */
  constructor(
    root: string,
    mode: StoreMode,
    dtype: DtypeName,
    shards: string[],
    index: Map<string, EntryMeta>,
    manifestEnd: number,
    opts?: StoreOptions,
  ) {
    this.root = root;
    this.mode = mode;
    this.dtype = dtype;
    this.shards = shards;
    this.index = index;
    this.shardLimit = opts?.shardLimitBytes ?? SHARD_LIMIT;
    if (mode === "read-write") {
      this.openWriter(manifestEnd);
    }
  }

  private filePath(name: string): string {
    return path.join(this.root, name);
  }

  private openWriter(manifestEnd: number): void {
    // drop a torn final line before appending anything new
    const mpath = this.filePath(MANIFEST);
    if (fs.existsSync(mpath) && fs.statSync(mpath).size > manifestEnd) {
      fs.truncateSync(mpath, manifestEnd);
    }
    this.manifestFd = fs.openSync(mpath, "a");
    if (this.shards.length > 0) {
      const last = this.filePath(this.shards[this.shards.length - 1]!);
      this.shardFd = fs.openSync(last, "a");
      this.shardSize = fs.statSync(last).size;
    }
  }

  close(): void {
    if (this.closed) {
      return;
    }
    this.closed = true;
    if (this.manifestFd !== null) {
      fs.closeSync(this.manifestFd);
    }
    if (this.shardFd !== null) {
      fs.closeSync(this.shardFd);
    }
    for (const fd of this.fds.values()) {
      fs.closeSync(fd);
    }
    this.fds.clear();
    for (const p of this.handles.values()) {
      void p.then((fh) => fh.close(), () => {});
    }
    this.handles.clear();
    if (this.mode === "read-write") {
      releaseLock(this.root);
    }
  }

  get size(): number {
    return this.index.size;
  }

  keys(): EntryKey[] {
    return Array.from(this.index.values(), (m) => ({
      modelId: m.modelId,
      layer: m.layer,
      docId: m.docId,
    }));
  }

  meta(modelId: string, layer: number, docId: string): EntryMeta {
    const m = this.index.get(keyOf(modelId, layer, docId));
    if (m === undefined) {
      throw new KeyNotFoundError(`no entry for ${keyOf(modelId, layer, docId)}`);
    }
    return m;
  }

  // -- writing --------------------------------------------------------------

  private startShard(): void {
    const name = `shard-${String(this.shards.length).padStart(6, "0")}.bin`;
    if (this.shardFd !== null) {
      fs.closeSync(this.shardFd);
    }
    this.shardFd = fs.openSync(this.filePath(name), "wx");
    fs.writeSync(this.shardFd, buildShardHeader(this.dtype));
    this.shardSize = HEADER_LEN;
    this.shards.push(name);
    writeStoreJson(this.root, this.dtype, this.shards);
  }

  put(modelId: string, layer: number, docId: string, matrix: Matrix | number[][]): EntryMeta {
    if (this.mode !== "read-write") {
      throw new StoreModeError("store opened read-only");
    }
    if (!Number.isInteger(layer) || layer < 0) {
      throw new InputError(`layer must be a non-negative integer, got ${layer}`);
    }
    const k = keyOf(modelId, layer, docId);
    if (this.index.has(k)) {
      throw new DuplicateKeyError(`entry already present: ${k}`);
    }
    const m = asMatrix(matrix);
    const payload = encodePayload(m.data, this.dtype);
    const rollover =
      this.shardSize + payload.length > this.shardLimit && this.shardSize > HEADER_LEN;
    if (this.shardFd === null || rollover) {
      this.startShard();
    }
    const offset = this.shardSize;
    fs.writeSync(this.shardFd!, payload);
    this.shardSize += payload.length;
    const meta: EntryMeta = {
      modelId,
      layer,
      docId,
      seqLen: m.rows,
      dim: m.cols,
      dtype: this.dtype,
      shard: this.shards[this.shards.length - 1]!,
      offset,
      byteLen: payload.length,
      crc32: crc32(payload),
    };
    fs.writeSync(this.manifestFd!, toManifestLine(meta) + "\n");
    this.index.set(k, meta);
    return meta;
  }

  // -- reading --------------------------------------------------------------

  private lookup(modelId: string, layer: number, docId: string): EntryMeta {
    const meta = this.index.get(keyOf(modelId, layer, docId));
    if (meta === undefined) {
      throw new KeyNotFoundError(`no entry for ${keyOf(modelId, layer, docId)}`);
    }
    return meta;
  }

  private shardFdFor(shard: string): number {
    let fd = this.fds.get(shard);
    if (fd === undefined) {
      try {
        fd = fs.openSync(this.filePath(shard), "r");
      } catch (e) {
        if (errnoCode(e) === "ENOENT") {
          throw new CorruptionError(`missing shard file ${shard}`);
        }
        throw e;
      }
      this.fds.set(shard, fd);
    }
    if (!this.checkedHeaders.has(shard)) {
      const header = Buffer.alloc(HEADER_LEN);
      fs.readSync(fd, header, 0, HEADER_LEN, 0);
      checkShardHeader(header, this.dtype, shard);
      this.checkedHeaders.add(shard);
    }
    return fd;
  }

  private checkPayload(meta: EntryMeta, buf: Buffer, got: number): void {
    if (got !== meta.byteLen) {
      throw new CorruptionError(
        `${meta.shard}: short read at offset ${meta.offset} (${got} of ${meta.byteLen} bytes)`,
      );
    }
    if (crc32(buf) !== meta.crc32) {
      throw new CorruptionError(
        `checksum mismatch for ${keyOf(meta.modelId, meta.layer, meta.docId)} in ${meta.shard}`,
      );
    }
  }

  get(modelId: string, layer: number, docId: string): Matrix {
    const meta = this.lookup(modelId, layer, docId);
    if (this.readDelayMs > 0) {
      sleepSync(this.readDelayMs);
    }
    const fd = this.shardFdFor(meta.shard);
    const buf = Buffer.alloc(meta.byteLen);
    const got = fs.readSync(fd, buf, 0, meta.byteLen, meta.offset);
    this.checkPayload(meta, buf, got);
    return { rows: meta.seqLen, cols: meta.dim, data: decodePayload(buf, meta.dtype) };
  }

  private shardHandle(shard: string): Promise<fs.promises.FileHandle> {
    let p = this.handles.get(shard);
    if (p === undefined) {
      p = (async () => {
        let fh: fs.promises.FileHandle;
        try {
          fh = await fs.promises.open(this.filePath(shard), "r");
        } catch (e) {
          if (errnoCode(e) === "ENOENT") {
            throw new CorruptionError(`missing shard file ${shard}`);
          }
          throw e;
        }
        try {
          const header = Buffer.alloc(HEADER_LEN);
          await fh.read(header, 0, HEADER_LEN, 0);
          checkShardHeader(header, this.dtype, shard);
        } catch (e) {
          await fh.close();
          throw e;
        }
        return fh;
      })();
      p.catch(() => {}); // rethrown to each caller that awaits
      this.handles.set(shard, p);
    }
    return p;
  }

  async getAsync(modelId: string, layer: number, docId: string): Promise<Matrix> {
    const meta = this.lookup(modelId, layer, docId);
    if (this.readDelayMs > 0) {
      await delay(this.readDelayMs);
    }
    const fh = await this.shardHandle(meta.shard);
    const buf = Buffer.alloc(meta.byteLen);
    const { bytesRead } = await fh.read(buf, 0, meta.byteLen, meta.offset);
    this.checkPayload(meta, buf, bytesRead);
    return { rows: meta.seqLen, cols: meta.dim, data: decodePayload(buf, meta.dtype) };
  }
}

/** Create an empty store and return a read-write handle holding its lock. */
export function boundCreate(root: string, dtype: DtypeName = "f32", opts?: StoreOptions): BoundStore {
  if (fs.existsSync(path.join(root, STORE_JSON))) {
    throw new StoreExistsError(`store already exists at ${root}`);
  }
  fs.mkdirSync(root, { recursive: true });
  acquireLock(root);
  try {
    writeStoreJson(root, dtype, []);
    fs.writeFileSync(path.join(root, MANIFEST), "");
  } catch (e) {
    releaseLock(root);
    throw e;
  }
  return new BoundStore(root, "read-write", dtype, [], new Map(), 0, opts);
}

/** Open an existing store; mode is "read" or "read-write". */
export function boundOpen(root: string, mode: StoreMode = "read", opts?: StoreOptions): BoundStore {
  if (mode !== "read" && mode !== "read-write") {
    throw new InputError(`mode must be 'read' or 'read-write', got ${JSON.stringify(mode)}`);
  }
  const { dtype, shards } = readStoreJson(root);
  const { index, goodEnd } = loadManifest(path.join(root, MANIFEST));
  if (mode === "read-write") {
    acquireLock(root);
    try {
      return new BoundStore(root, mode, dtype, shards, index, goodEnd, opts);
    } catch (e) {
      releaseLock(root);
      throw e;
    }
  }
  return new BoundStore(root, mode, dtype, shards, index, goodEnd, opts);
}
