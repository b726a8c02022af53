"""Command-line front end: build caches, verify them, benchmark, inspect.

Exit codes: 0 success, 1 operational failure (corruption, lock conflicts,
equivalence failures), 2 usage or configuration errors.  The environment
variable EMBREC_LOG (error, info, debug) controls stderr verbosity;
results go to stdout and report files only.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from typing import Iterator, List, Tuple

from .bench import Scenario, report_emit, run_benchmark
from .core import Dtype, tensor_checksum
from .errors import (
    ConfigError,
    EmbrecError,
    InputError,
    KeyNotFoundError,
    LayerRangeError,
    ShapeError,
)
from .model import (
    ModelConfig,
    embed,
    forward_range,
    full_forward,
    init_model,
    model_id,
)
from .store import (
    CacheKey,
    store_create,
    store_get,
    store_open,
    store_verify,
)

log = logging.getLogger("embrec")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO,
               "debug": logging.DEBUG}


def _setup_logging() -> None:
    name = os.environ.get("EMBREC_LOG", "error")
    if name not in _LOG_LEVELS:
        raise ConfigError(
            f"EMBREC_LOG must be one of {sorted(_LOG_LEVELS)}, got {name!r}"
        )
    logging.basicConfig(level=_LOG_LEVELS[name], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def read_corpus(path: str, max_seq: int,
                vocab_size: int) -> Iterator[Tuple[str, List[int]]]:
    """Yield (doc_id, token ids) from a JSON-lines corpus.

    Each record carries exactly one of `tokens` (explicit ids) or `text`
    (byte-level: every UTF-8 byte becomes its own id, so the model needs
    vocab_size >= 256).  Sequences longer than max_seq are split into
    windows with doc_id suffix "#w<i>".
    """
    try:
        f = open(path, "r", encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"corpus file not found: {path}")
    with f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise InputError(f"corpus line {ln}: invalid JSON: {e}")
            if not isinstance(obj, dict) or "doc_id" not in obj:
                raise InputError(f"corpus line {ln}: missing doc_id")
            doc_id = str(obj["doc_id"])
            has_tokens = "tokens" in obj
            has_text = "text" in obj
            if has_tokens == has_text:
                raise InputError(
                    f"corpus line {ln}: need exactly one of tokens/text"
                )
            if has_tokens:
                tokens = list(obj["tokens"])
            else:
                if vocab_size < 256:
                    raise InputError(
                        f"corpus line {ln}: text records need vocab_size "
                        f">= 256, model has {vocab_size}"
                    )
                tokens = list(str(obj["text"]).encode("utf-8"))
            if not tokens:
                raise InputError(f"corpus line {ln}: empty sequence")
            if len(tokens) <= max_seq:
                yield doc_id, tokens
            else:
                for i in range(0, len(tokens), max_seq):
                    yield f"{doc_id}#w{i // max_seq}", tokens[i:i + max_seq]


def _cmd_build(args) -> int:
    cfg = ModelConfig.from_file(args.model_config)
    if not 0 <= args.layer <= cfg.n_layers:
        raise InputError(
            f"--layer {args.layer} outside 0..{cfg.n_layers}"
        )
    model = init_model(cfg)
    mid = model_id(cfg)
    entries = 0
    total_bytes = 0
    with store_create(args.out, Dtype.from_str(args.dtype)) as s:
        for doc_id, tokens in read_corpus(args.corpus, cfg.max_seq,
                                          cfg.vocab_size):
            h = forward_range(model, embed(model, tokens), 0, args.layer)
            meta = s.put(CacheKey(mid, args.layer, doc_id), h)
            entries += 1
            total_bytes += meta.byte_len
            log.debug("cached %s: %d x %d, %d bytes",
                      doc_id, meta.seq_len, meta.dim, meta.byte_len)
    log.info("built %s: %d entries", args.out, entries)
    print(f"store={args.out} model_id={mid} layer={args.layer} "
          f"entries={entries} payload_bytes={total_bytes}")
    return 0


def _cmd_verify(args) -> int:
    report = store_verify(args.store)
    for key, reason in report.corrupted:
        print(f"CORRUPT {key.model_id}/{key.layer}/{key.doc_id}: {reason}")
    print(f"entries={report.entries} ok={report.ok} "
          f"corrupted={len(report.corrupted)}")
    return 0 if not report.corrupted else 1


def _cmd_bench(args) -> int:
    cfg = ModelConfig.from_file(args.model_config)
    mode = args.mode.replace("-", "_")
    scenario = Scenario(config=cfg, k=args.k, batch=args.batch,
                        seq_len=args.seq, mode=mode,
                        prefetch_depth=args.prefetch, reps=args.reps)
    handle = None
    if mode in ("recycle_disk", "recycle_disk_prefetch"):
        if os.path.exists(os.path.join(args.store, "store.json")):
            handle = store_open(args.store, "read-write")
        else:
            handle = store_create(args.store, Dtype.F32)
        handle.read_delay_ms = args.inject_read_delay_ms
    try:
        report = run_benchmark(scenario, handle)
    finally:
        if handle is not None:
            handle.close()
    report_emit(report, "json", args.json)
    if args.csv:
        report_emit(report, "csv", args.csv)
    b, v = report.baseline, report.variant
    print(f"mode={args.mode} N={cfg.n_layers} k={args.k} "
          f"batch={args.batch} seq={args.seq}")
    print(f"baseline {b.mean_ms:.2f} ms/batch (stdev {b.stdev_ms:.2f}, "
          f"reps {b.reps})")
    print(f"variant  {v.mean_ms:.2f} ms/batch (stdev {v.stdev_ms:.2f}, "
          f"wait {report.wait_time_ms:.2f} ms)")
    print(f"speedup {round(report.measured_speedup_pct)}% measured, "
          f"{round(report.theoretical_speedup_pct)}% theoretical cap")
    log.info("report written to %s", args.json)
    return 0


def _cmd_inspect(args) -> int:
    with store_open(args.store, "read") as s:
        metas = [m for key, m in s.index.items() if key.doc_id == args.doc]
        if not metas:
            raise KeyNotFoundError(f"no entries for doc {args.doc!r}")
        for meta in metas:
            t = store_get(s, meta.key)
            print(f"model_id={meta.key.model_id} layer={meta.key.layer} "
                  f"doc_id={meta.key.doc_id}")
            print(f"  seq_len={meta.seq_len} dim={meta.dim} "
                  f"dtype={meta.dtype} shard={meta.shard} "
                  f"offset={meta.offset} byte_len={meta.byte_len} "
                  f"crc32={meta.crc32:08x}")
            print(f"  min={t.min():.6g} max={t.max():.6g} "
                  f"mean={t.mean():.6g} std={t.std():.6g}")
    return 0


def _cmd_demo(args) -> int:
    cfg = ModelConfig(n_layers=4, d_model=32, n_heads=2, d_ff=64,
                      vocab_size=256, max_seq=64, seed=args.seed)
    model = init_model(cfg)
    mid = model_id(cfg)
    tokens = list(b"the same bytes in give the same bytes out")
    full = full_forward(model, tokens)
    full_crc = tensor_checksum(full)
    print(f"model_id={mid} layers={cfg.n_layers} d={cfg.d_model} "
          f"seq_len={len(tokens)}")
    ok = True
    with tempfile.TemporaryDirectory() as td:
        root = os.path.join(td, "store")
        with store_create(root, Dtype.F32) as s:
            h = embed(model, tokens)
            for k in range(cfg.n_layers + 1):
                s.put(CacheKey(mid, k, "demo"),
                      forward_range(model, h, 0, k))
        with store_open(root, "read") as s:
            for k in range(cfg.n_layers + 1):
                hk = store_get(s, CacheKey(mid, k, "demo"))
                resumed = forward_range(model, hk, k, cfg.n_layers)
                crc = tensor_checksum(resumed)
                match = "ok" if crc == full_crc else "MISMATCH"
                print(f"k={k} full={full_crc:08x} recycled={crc:08x} {match}")
                ok = ok and crc == full_crc
    return 0 if ok else 1


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="embrec",
        description="Cache transformer activations at a layer boundary and "
                    "resume inference from them.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="populate a store from a corpus")
    b.add_argument("--model-config", required=True)
    b.add_argument("--corpus", required=True)
    b.add_argument("--layer", type=int, required=True)
    b.add_argument("--dtype", choices=["f32", "f16"], default="f32")
    b.add_argument("--out", required=True)
    b.set_defaults(func=_cmd_build)

    v = sub.add_parser("verify", help="checksum every entry in a store")
    v.add_argument("--store", required=True)
    v.set_defaults(func=_cmd_verify)

    n = sub.add_parser("bench", help="time full vs. recycled forward passes")
    n.add_argument("--model-config", required=True)
    n.add_argument("--store", required=True)
    n.add_argument("--k", type=int, required=True)
    n.add_argument("--mode", required=True,
                   choices=["full", "recycle-ram", "recycle-disk",
                            "recycle-disk-prefetch"])
    n.add_argument("--batch", type=int, default=8)
    n.add_argument("--seq", type=int, default=64)
    n.add_argument("--reps", type=int, default=7)
    n.add_argument("--prefetch", type=int, default=0)
    n.add_argument("--json", required=True)
    n.add_argument("--csv", default=None)
    n.add_argument("--inject-read-delay-ms", type=float, default=0.0)
    n.set_defaults(func=_cmd_bench)

    i = sub.add_parser("inspect", help="show metadata and stats for a doc")
    i.add_argument("--store", required=True)
    i.add_argument("--doc", required=True)
    i.set_defaults(func=_cmd_inspect)

    d = sub.add_parser("demo", help="show full vs. recycled checksums")
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=_cmd_demo)
    return p


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except (ConfigError, InputError, ShapeError, LayerRangeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except EmbrecError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
