"""Bit-exact activation cache: append-only shards plus a JSON-lines manifest.

Layout under the store root:

    store.json       header: {"version": 1, "dtype": "f32", "shards": [...]}
    manifest.jsonl   one entry per line, append-only index
    shard-000000.bin 8-byte header then raw little-endian payloads
    .lock            present while a writer holds the store

Shard header: magic ``ERCS``, version u16 LE, dtype code u8, reserved u8.
Payloads are row-major and carry no framing of their own; the manifest
records offset, length, shape, dtype, and a CRC-32 per entry.  A torn final
manifest line (crashed writer) is detected and dropped on load.  Shards
roll over at 256 MiB so a damaged file bounds the loss.

Readers never take the lock and may share a handle across threads; writes
require the exclusive read-write mode.  ``MemStore`` offers the same
put/get surface backed by a dict, for benchmarks that compare against RAM.
"""

from __future__ import annotations

import io
import json
import os
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from .core import Dtype, as_activation, checksum, tensor_bytes
from .errors import (
    CorruptionError,
    DuplicateKeyError,
    InputError,
    KeyNotFoundError,
    StoreExistsError,
    StoreModeError,
    StoreNotFoundError,
)

FORMAT_VERSION = 1
_MAGIC = b"ERCS"
_HEADER_LEN = 8
SHARD_LIMIT = 256 * 1024 * 1024

_STORE_JSON = "store.json"
_MANIFEST = "manifest.jsonl"
_LOCK = ".lock"


@dataclass(frozen=True)
class CacheKey:
    model_id: str
    layer: int
    doc_id: str


@dataclass(frozen=True)
class EntryMeta:
    key: CacheKey
    seq_len: int
    dim: int
    dtype: Dtype
    shard: str
    offset: int
    byte_len: int
    crc32: int

    def to_manifest_line(self) -> str:
        return json.dumps({
            "model_id": self.key.model_id,
            "layer": self.key.layer,
            "doc_id": self.key.doc_id,
            "seq_len": self.seq_len,
            "dim": self.dim,
            "dtype": str(self.dtype),
            "shard": self.shard,
            "offset": self.offset,
            "byte_len": self.byte_len,
            "crc32": "%08x" % self.crc32,
        })

    @classmethod
    def from_manifest_obj(cls, obj: dict) -> "EntryMeta":
        key = CacheKey(obj["model_id"], int(obj["layer"]), obj["doc_id"])
        return cls(
            key=key,
            seq_len=int(obj["seq_len"]),
            dim=int(obj["dim"]),
            dtype=Dtype.from_str(obj["dtype"]),
            shard=obj["shard"],
            offset=int(obj["offset"]),
            byte_len=int(obj["byte_len"]),
            crc32=int(obj["crc32"], 16),
        )


def entry_size(seq_len: int, dim: int, dtype: Dtype) -> int:
    """Payload bytes for one cached activation: seq_len * dim * itemsize."""
    if seq_len < 1 or dim < 1:
        raise InputError(f"sizes must be positive, got ({seq_len}, {dim})")
    return seq_len * dim * dtype.itemsize


def _shard_header(dtype: Dtype) -> bytes:
    return _MAGIC + FORMAT_VERSION.to_bytes(2, "little") + bytes([int(dtype), 0])


def _check_shard_header(header: bytes, dtype: Dtype, name: str) -> None:
    if len(header) < _HEADER_LEN or header[:4] != _MAGIC:
        raise CorruptionError(f"{name}: bad shard magic")
    version = int.from_bytes(header[4:6], "little")
    if version != FORMAT_VERSION:
        raise CorruptionError(f"{name}: unsupported shard version {version}")
    if header[6] != int(dtype):
        raise CorruptionError(
            f"{name}: shard dtype code {header[6]} does not match store"
        )


class StoreHandle:
    """Open store; create via store_create / store_open, not directly.

    Read handles are safe to share across threads (reads use positional
    pread on cached descriptors).  A read-write handle is single-owner and
    holds the on-disk lock until close().
    """

    def __init__(self, root: str, mode: str, dtype: Dtype,
                 shards: List[str], index: Dict[CacheKey, EntryMeta],
                 manifest_end: int):
        self.root = root
        self.mode = mode
        self.dtype = dtype
        self.shards = shards
        self.index = index
        self.read_delay_ms = 0.0
        self._fds: Dict[str, int] = {}
        self._fd_lock = threading.Lock()
        self._checked_headers: set = set()
        self._manifest_f: Optional[io.TextIOBase] = None
        self._shard_f: Optional[io.BufferedWriter] = None
        self._shard_size = 0
        self._closed = False
        if mode == "read-write":
            self._open_writer(manifest_end)

    # -- lifecycle -----------------------------------------------------

    def _path(self, name: str) -> str:
        return os.path.join(self.root, name)

    def _open_writer(self, manifest_end: int) -> None:
        # drop a torn final line before appending anything new
        mpath = self._path(_MANIFEST)
        if os.path.exists(mpath) and os.path.getsize(mpath) > manifest_end:
            with open(mpath, "r+b") as f:
                f.truncate(manifest_end)
        self._manifest_f = open(mpath, "a", encoding="utf-8")
        if self.shards:
            last = self._path(self.shards[-1])
            self._shard_f = open(last, "ab")
            self._shard_size = os.path.getsize(last)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self._manifest_f is not None:
            self._manifest_f.close()
        if self._shard_f is not None:
            self._shard_f.close()
        with self._fd_lock:
            for fd in self._fds.values():
                os.close(fd)
            self._fds.clear()
        if self.mode == "read-write":
            try:
                os.unlink(self._path(_LOCK))
            except FileNotFoundError:
                pass

    def __enter__(self) -> "StoreHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __len__(self) -> int:
        return len(self.index)

    def keys(self) -> List[CacheKey]:
        return list(self.index)

    # -- writing -------------------------------------------------------

    def _write_store_json(self) -> None:
        obj = {"version": FORMAT_VERSION, "dtype": str(self.dtype),
               "shards": self.shards}
        tmp = self._path(_STORE_JSON + ".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(obj, f)
        os.replace(tmp, self._path(_STORE_JSON))

    def _start_shard(self) -> None:
        name = "shard-%06d.bin" % len(self.shards)
        if self._shard_f is not None:
            self._shard_f.close()
        self._shard_f = open(self._path(name), "xb")
        self._shard_f.write(_shard_header(self.dtype))
        self._shard_f.flush()
        self._shard_size = _HEADER_LEN
        self.shards.append(name)
        self._write_store_json()

    def put(self, key: CacheKey, t: np.ndarray) -> EntryMeta:
        if self.mode != "read-write":
            raise StoreModeError("store opened read-only")
        if key in self.index:
            raise DuplicateKeyError(f"entry already present: {key}")
        t = as_activation(t, "tensor")
        payload = tensor_bytes(t, self.dtype)
        rollover = (self._shard_size + len(payload) > SHARD_LIMIT
                    and self._shard_size > _HEADER_LEN)
        if self._shard_f is None or rollover:
            self._start_shard()
        offset = self._shard_size
        self._shard_f.write(payload)
        self._shard_f.flush()
        self._shard_size += len(payload)
        meta = EntryMeta(
            key=key, seq_len=t.shape[0], dim=t.shape[1], dtype=self.dtype,
            shard=self.shards[-1], offset=offset, byte_len=len(payload),
            crc32=checksum(payload),
        )
        self._manifest_f.write(meta.to_manifest_line() + "\n")
        self._manifest_f.flush()
        self.index[key] = meta
        return meta

    # -- reading -------------------------------------------------------

    def _shard_fd(self, shard: str) -> int:
        with self._fd_lock:
            fd = self._fds.get(shard)
            if fd is None:
                try:
                    fd = os.open(self._path(shard), os.O_RDONLY)
                except FileNotFoundError:
                    raise CorruptionError(f"missing shard file {shard}")
                self._fds[shard] = fd
        if shard not in self._checked_headers:
            _check_shard_header(os.pread(fd, _HEADER_LEN, 0), self.dtype, shard)
            self._checked_headers.add(shard)
        return fd

    def _read_payload(self, meta: EntryMeta) -> bytes:
        if self.read_delay_ms > 0:
            time.sleep(self.read_delay_ms / 1000.0)
        fd = self._shard_fd(meta.shard)
        data = os.pread(fd, meta.byte_len, meta.offset)
        if len(data) != meta.byte_len:
            raise CorruptionError(
                f"{meta.shard}: short read at offset {meta.offset} "
                f"({len(data)} of {meta.byte_len} bytes)"
            )
        if checksum(data) != meta.crc32:
            raise CorruptionError(
                f"checksum mismatch for {meta.key} in {meta.shard}"
            )
        return data

    def get(self, key: CacheKey) -> np.ndarray:
        meta = self.index.get(key)
        if meta is None:
            raise KeyNotFoundError(f"no entry for {key}")
        data = self._read_payload(meta)
        arr = np.frombuffer(data, dtype=meta.dtype.numpy_dtype)
        return arr.astype(np.float32).reshape(meta.seq_len, meta.dim)


class MemStore:
    """Dict-backed store with the same put/get surface as StoreHandle.

    Payloads still pass through the at-rest dtype so the RAM and disk
    variants return identical tensors.
    """

    def __init__(self, dtype: Dtype = Dtype.F32):
        self.dtype = dtype
        self.index: Dict[CacheKey, EntryMeta] = {}
        self._payloads: Dict[CacheKey, bytes] = {}
        self.read_delay_ms = 0.0

    def __len__(self) -> int:
        return len(self.index)

    def keys(self) -> List[CacheKey]:
        return list(self.index)

    def put(self, key: CacheKey, t: np.ndarray) -> EntryMeta:
        if key in self.index:
            raise DuplicateKeyError(f"entry already present: {key}")
        t = as_activation(t, "tensor")
        payload = tensor_bytes(t, self.dtype)
        meta = EntryMeta(
            key=key, seq_len=t.shape[0], dim=t.shape[1], dtype=self.dtype,
            shard="", offset=0, byte_len=len(payload),
            crc32=checksum(payload),
        )
        self._payloads[key] = payload
        self.index[key] = meta
        return meta

    def get(self, key: CacheKey) -> np.ndarray:
        meta = self.index.get(key)
        if meta is None:
            raise KeyNotFoundError(f"no entry for {key}")
        if self.read_delay_ms > 0:
            time.sleep(self.read_delay_ms / 1000.0)
        arr = np.frombuffer(self._payloads[key], dtype=meta.dtype.numpy_dtype)
        return arr.astype(np.float32).reshape(meta.seq_len, meta.dim)

    def close(self) -> None:
        pass


def _load_manifest(path: str) -> Tuple[Dict[CacheKey, EntryMeta], int]:
    """Parse manifest.jsonl; returns (index, byte offset of last good line).

    Only the final line may be malformed (torn write); it is dropped.
    Damage anywhere else is corruption.
    """
    index: Dict[CacheKey, EntryMeta] = {}
    good_end = 0
    if not os.path.exists(path):
        return index, 0
    with open(path, "rb") as f:
        raw = f.read()
    pos = 0
    while pos < len(raw):
        nl = raw.find(b"\n", pos)
        line = raw[pos:] if nl < 0 else raw[pos:nl]
        last = nl < 0 or nl == len(raw) - 1
        try:
            obj = json.loads(line.decode("utf-8"))
            meta = EntryMeta.from_manifest_obj(obj)
            expect = entry_size(meta.seq_len, meta.dim, meta.dtype)
            if meta.byte_len != expect:
                raise ValueError(f"byte_len {meta.byte_len} != {expect}")
            if nl < 0:
                raise ValueError("missing trailing newline")
        except (ValueError, KeyError, UnicodeDecodeError) as e:
            if last:
                break  # torn final line, drop it
            raise CorruptionError(f"manifest damaged mid-file: {e}") from e
        if meta.key in index:
            raise CorruptionError(f"duplicate manifest key: {meta.key}")
        index[meta.key] = meta
        pos = nl + 1
        good_end = pos
    return index, good_end


def _read_store_json(root: str) -> dict:
    path = os.path.join(root, _STORE_JSON)
    if not os.path.isdir(root) or not os.path.exists(path):
        raise StoreNotFoundError(f"no store at {root}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            obj = json.load(f)
        if obj.get("version") != FORMAT_VERSION:
            raise CorruptionError(
                f"unsupported store version {obj.get('version')!r}"
            )
        Dtype.from_str(obj["dtype"])
        return obj
    except (json.JSONDecodeError, KeyError, ValueError) as e:
        raise CorruptionError(f"unreadable store.json: {e}") from e


def _acquire_lock(root: str) -> None:
    try:
        fd = os.open(os.path.join(root, _LOCK),
                     os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StoreModeError(f"another writer holds the lock at {root}")
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)


def store_create(path: str, dtype: Dtype) -> StoreHandle:
    """Create an empty store and return a read-write handle holding its lock."""
    if os.path.exists(os.path.join(path, _STORE_JSON)):
        raise StoreExistsError(f"store already exists at {path}")
    os.makedirs(path, exist_ok=True)
    _acquire_lock(path)
    try:
        obj = {"version": FORMAT_VERSION, "dtype": str(dtype), "shards": []}
        tmp = os.path.join(path, _STORE_JSON + ".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(obj, f)
        os.replace(tmp, os.path.join(path, _STORE_JSON))
        with open(os.path.join(path, _MANIFEST), "w", encoding="utf-8"):
            pass
    except BaseException:
        os.unlink(os.path.join(path, _LOCK))
        raise
    return StoreHandle(path, "read-write", dtype, [], {}, 0)


def store_open(path: str, mode: str = "read") -> StoreHandle:
    """Open an existing store; mode is "read" or "read-write"."""
    if mode not in ("read", "read-write"):
        raise InputError(f"mode must be 'read' or 'read-write', got {mode!r}")
    obj = _read_store_json(path)
    dtype = Dtype.from_str(obj["dtype"])
    shards = list(obj.get("shards", []))
    index, good_end = _load_manifest(os.path.join(path, _MANIFEST))
    if mode == "read-write":
        _acquire_lock(path)
        try:
            return StoreHandle(path, mode, dtype, shards, index, good_end)
        except BaseException:
            os.unlink(os.path.join(path, _LOCK))
            raise
    return StoreHandle(path, mode, dtype, shards, index, good_end)


def store_put(s, key: CacheKey, t: np.ndarray) -> EntryMeta:
    return s.put(key, t)


def store_get(s, key: CacheKey) -> np.ndarray:
    return s.get(key)


@dataclass
class VerifyReport:
    entries: int
    ok: int
    corrupted: List[Tuple[CacheKey, str]] = field(default_factory=list)


def store_verify(path: str) -> VerifyReport:
    """Re-read and checksum every entry; never raises on damaged payloads."""
    obj = _read_store_json(path)
    dtype = Dtype.from_str(obj["dtype"])
    index, _ = _load_manifest(os.path.join(path, _MANIFEST))
    report = VerifyReport(entries=len(index), ok=0)
    sizes: Dict[str, int] = {}
    headers_ok: Dict[str, bool] = {}
    for key, meta in index.items():
        spath = os.path.join(path, meta.shard)
        if meta.shard not in sizes:
            try:
                sizes[meta.shard] = os.path.getsize(spath)
                with open(spath, "rb") as f:
                    _check_shard_header(f.read(_HEADER_LEN), dtype, meta.shard)
                headers_ok[meta.shard] = True
            except FileNotFoundError:
                sizes[meta.shard] = -1
                headers_ok[meta.shard] = False
            except CorruptionError:
                headers_ok[meta.shard] = False
        if sizes[meta.shard] < 0:
            report.corrupted.append((key, "missing shard"))
            continue
        if not headers_ok[meta.shard]:
            report.corrupted.append((key, "bad shard header"))
            continue
        if meta.offset + meta.byte_len > sizes[meta.shard]:
            report.corrupted.append((key, "payload out of bounds"))
            continue
        with open(spath, "rb") as f:
            f.seek(meta.offset)
            data = f.read(meta.byte_len)
        if len(data) != meta.byte_len or checksum(data) != meta.crc32:
            report.corrupted.append((key, "checksum mismatch"))
            continue
        report.ok += 1
    return report


def prefetch_iter(s, keys: Iterable[CacheKey],
                  depth: int) -> Iterator[Tuple[CacheKey, np.ndarray]]:
    """Yield (key, tensor) in input order, reading up to `depth` ahead.

    Depth 0 degenerates to sequential gets.  A missing key raises at its
    position in the stream.  Abandoning the iterator cancels the background
    reader; no reads leak past the next buffer slot.
    """
    key_list = list(keys)
    if depth <= 0:
        for key in key_list:
            yield key, s.get(key)
        return

    out: queue.Queue = queue.Queue()
    slots = threading.Semaphore(depth)  # bounds completed-but-unconsumed reads
    cancel = threading.Event()
    done = object()

    def reader():
        for key in key_list:
            while not slots.acquire(timeout=0.05):
                if cancel.is_set():
                    return
            if cancel.is_set():
                return
            try:
                out.put((key, s.get(key), None))
            except BaseException as e:  # surfaced at this key's position
                out.put((key, None, e))
                return
        out.put(done)

    t = threading.Thread(target=reader, daemon=True)
    t.start()
    try:
        while True:
            item = out.get()
            if item is done:
                break
            key, tensor, err = item
            if err is not None:
                raise err
            yield key, tensor
            slots.release()
    finally:
        cancel.set()
        t.join(timeout=10.0)
