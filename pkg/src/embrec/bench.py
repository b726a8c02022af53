"""Timing harness for the recycling cost model.

Baseline runs the full forward pass over a synthetic batch; recycle
variants load the cached layer-k activations (from RAM or disk, optionally
through the prefetcher) and run only layers k+1..N.  Variant outputs are
verified against the baseline before any timing is reported, so a report
can never describe a shortcut that changed the results.

Speedup is (t_baseline / t_variant - 1) x 100: halving the work scores
100%.  Under a uniform per-layer cost model the cap is k/(N-k) x 100.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import statistics
import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from .core import Dtype, Rng
from .errors import ConfigError, EquivalenceError, InputError, KeyNotFoundError
from .model import ModelConfig, embed, forward_range, init_model, model_id
from .store import CacheKey, MemStore, entry_size, prefetch_iter

MODES = ("full", "recycle_ram", "recycle_disk", "recycle_disk_prefetch")


@dataclass(frozen=True)
class TimingStats:
    mean_ms: float
    stdev_ms: float
    reps: int
    per_rep_ms: tuple

    @classmethod
    def from_durations(cls, per_rep_ms) -> "TimingStats":
        samples = [float(x) for x in per_rep_ms]
        if not samples:
            raise InputError("need at least one timed repetition")
        mean = statistics.fmean(samples)
        stdev = statistics.stdev(samples) if len(samples) > 1 else 0.0
        return cls(mean, stdev, len(samples), tuple(samples))


def time_stage(work: Callable[[], None], reps: int = 7,
               warmup: int = 2) -> TimingStats:
    """Run `work` warmup times untimed, then reps timed; monotonic clock."""
    if reps < 1:
        raise InputError(f"reps must be >= 1, got {reps}")
    if warmup < 0:
        raise InputError(f"warmup must be >= 0, got {warmup}")
    for _ in range(warmup):
        work()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        work()
        samples.append((time.perf_counter() - t0) * 1000.0)
    return TimingStats.from_durations(samples)


def speedup_pct(baseline_ms: float, variant_ms: float) -> float:
    """Percent speedup; full precision (round only for display)."""
    if baseline_ms <= 0 or variant_ms <= 0:
        raise InputError(
            f"timings must be positive, got ({baseline_ms}, {variant_ms})"
        )
    return (baseline_ms / variant_ms - 1.0) * 100.0


def theoretical_speedup_pct(k: int, n_layers: int) -> float:
    """Cap under uniform per-layer cost: k / (N - k) x 100."""
    if not 0 <= k < n_layers:
        raise InputError(f"need 0 <= k < N, got k={k}, N={n_layers}")
    return k / (n_layers - k) * 100.0


@dataclass(frozen=True)
class Scenario:
    config: ModelConfig
    k: int
    batch: int
    seq_len: int
    mode: str
    prefetch_depth: int = 0
    reps: int = 7
    warmup: int = 2

    def __post_init__(self):
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 <= self.k <= self.config.n_layers:
            raise InputError(
                f"k={self.k} outside 0..{self.config.n_layers}"
            )
        if self.batch < 1:
            raise InputError(f"batch must be >= 1, got {self.batch}")
        if not 1 <= self.seq_len <= self.config.max_seq:
            raise ConfigError(
                f"seq_len {self.seq_len} outside 1..{self.config.max_seq}"
            )
        if self.prefetch_depth < 0:
            raise InputError("prefetch_depth must be >= 0")
        if self.reps < 1 or self.warmup < 0:
            raise InputError("need reps >= 1 and warmup >= 0")


@dataclass(frozen=True)
class BenchReport:
    scenario: Scenario
    baseline: TimingStats
    variant: TimingStats
    measured_speedup_pct: float
    per_run_speedup_pct_mean: float
    theoretical_speedup_pct: float
    wait_time_ms: float
    wait_per_rep_ms: tuple
    storage: dict  # {"bytes_per_seq", "bytes_per_token"}


def bench_tokens(config: ModelConfig, batch: int, seq_len: int) -> List[np.ndarray]:
    """Deterministic synthetic batch: token ids drawn from the config seed."""
    rng = Rng(config.seed)
    out = []
    for _ in range(batch):
        ids = rng.fill_uniform(seq_len, 0.0, float(config.vocab_size))
        ids = np.minimum(ids.astype(np.int64), config.vocab_size - 1)
        out.append(ids)
    return out


def bench_doc_ids(batch: int) -> List[str]:
    return ["bench-%04d" % i for i in range(batch)]


def run_benchmark(scenario: Scenario, store=None) -> BenchReport:
    """Time baseline vs. variant; refuses to report non-equivalent outputs.

    recycle_ram builds its own in-memory store when none is given; the disk
    modes require an open store handle, which is populated with the batch's
    h^k entries if writable.  k == N leaves no layers to run and is
    rejected for recycle modes.
    """
    cfg = scenario.config
    n = cfg.n_layers
    model = init_model(cfg)
    token_batch = bench_tokens(cfg, scenario.batch, scenario.seq_len)
    h0s = [embed(model, t) for t in token_batch]
    baseline_outs = [forward_range(model, h0, 0, n) for h0 in h0s]

    def run_baseline():
        for h0 in h0s:
            forward_range(model, h0, 0, n)

    if scenario.mode == "full":
        stats = time_stage(run_baseline, scenario.reps, scenario.warmup)
        dtype = store.dtype if store is not None else Dtype.F32
        return _report(scenario, stats, stats, 0.0, (0.0,) * scenario.reps,
                       0.0, dtype)

    k = scenario.k
    if k >= n:
        raise InputError(
            f"recycle modes need k < N (k={k}, N={n}): no layers left to run"
        )
    if store is None:
        if scenario.mode != "recycle_ram":
            raise InputError(f"mode {scenario.mode} requires an open store")
        store = MemStore(Dtype.F32)
    mid = model_id(cfg)
    keys = [CacheKey(mid, k, d) for d in bench_doc_ids(scenario.batch)]
    missing = [key for key in keys if key not in store.index]
    if missing:
        if getattr(store, "mode", "read-write") != "read-write":
            raise KeyNotFoundError(
                f"store lacks {len(missing)} bench entries, e.g. {missing[0]}"
            )
        for key, h0 in zip(keys, h0s):
            if key in store.index:
                continue
            store.put(key, forward_range(model, h0, 0, k))

    # equivalence gate, untimed: resumed outputs must match the baseline
    for key, expect in zip(keys, baseline_outs):
        got = forward_range(model, store.get(key), k, n)
        if store.dtype is Dtype.F32:
            if got.tobytes() != expect.tobytes():
                raise EquivalenceError(f"recycled output differs for {key}")
        elif not np.allclose(got, expect, rtol=5e-2, atol=1e-3):
            raise EquivalenceError(
                f"recycled output (f16 at rest) diverged for {key}"
            )

    waits: List[float] = []

    if scenario.mode == "recycle_disk_prefetch":
        def run_variant():
            wait = 0.0
            it = prefetch_iter(store, keys, scenario.prefetch_depth)
            try:
                while True:
                    t0 = time.perf_counter()
                    try:
                        _, t = next(it)
                    except StopIteration:
                        break
                    wait += time.perf_counter() - t0
                    forward_range(model, t, k, n)
            finally:
                it.close()
            waits.append(wait * 1000.0)
    else:
        def run_variant():
            wait = 0.0
            for key in keys:
                t0 = time.perf_counter()
                t = store.get(key)
                wait += time.perf_counter() - t0
                forward_range(model, t, k, n)
            waits.append(wait * 1000.0)

    baseline_stats = time_stage(run_baseline, scenario.reps, scenario.warmup)
    variant_stats = time_stage(run_variant, scenario.reps, scenario.warmup)
    wait_per_rep = tuple(waits[-scenario.reps:])  # drop warmup runs
    return _report(scenario, baseline_stats, variant_stats,
                   statistics.fmean(wait_per_rep), wait_per_rep,
                   theoretical_speedup_pct(k, n), store.dtype)


def _report(scenario: Scenario, baseline: TimingStats, variant: TimingStats,
            wait_ms: float, wait_per_rep: tuple, theoretical: float,
            dtype: Dtype) -> BenchReport:
    if variant is baseline:
        measured = 0.0
        per_run = 0.0
    else:
        measured = speedup_pct(baseline.mean_ms, variant.mean_ms)
        per_run = statistics.fmean(
            speedup_pct(b, v)
            for b, v in zip(baseline.per_rep_ms, variant.per_rep_ms)
        )
    bps = entry_size(scenario.seq_len, scenario.config.d_model, dtype)
    return BenchReport(
        scenario=scenario,
        baseline=baseline,
        variant=variant,
        measured_speedup_pct=measured,
        per_run_speedup_pct_mean=per_run,
        theoretical_speedup_pct=theoretical,
        wait_time_ms=wait_ms,
        wait_per_rep_ms=wait_per_rep,
        storage={"bytes_per_seq": bps,
                 "bytes_per_token": scenario.config.d_model * dtype.itemsize},
    )


def report_to_dict(report: BenchReport) -> dict:
    sc = report.scenario
    return {
        "scenario": {
            "config": dataclasses.asdict(sc.config),
            "k": sc.k,
            "batch": sc.batch,
            "seq_len": sc.seq_len,
            "mode": sc.mode,
            "prefetch_depth": sc.prefetch_depth,
            "reps": sc.reps,
            "warmup": sc.warmup,
        },
        "baseline": _stats_dict(report.baseline),
        "variant": _stats_dict(report.variant),
        "measured_speedup_pct": report.measured_speedup_pct,
        "per_run_speedup_pct_mean": report.per_run_speedup_pct_mean,
        "theoretical_speedup_pct": report.theoretical_speedup_pct,
        "wait_time_ms": report.wait_time_ms,
        "wait_per_rep_ms": list(report.wait_per_rep_ms),
        "storage": dict(report.storage),
    }


def _stats_dict(s: TimingStats) -> dict:
    return {"mean_ms": s.mean_ms, "stdev_ms": s.stdev_ms, "reps": s.reps,
            "per_rep_ms": list(s.per_rep_ms)}


CSV_COLUMNS = (
    "mode", "N", "k", "d_model", "batch", "seq_len",
    "baseline_mean_ms", "baseline_stdev_ms",
    "variant_mean_ms", "variant_stdev_ms",
    "speedup_pct", "theoretical_pct", "wait_ms", "bytes_per_seq",
)


def report_emit(report: BenchReport, format: str, path: str) -> None:
    """Write a report to disk as a JSON object or a one-row CSV."""
    if format == "json":
        with open(path, "w", encoding="utf-8") as f:
            json.dump(report_to_dict(report), f, indent=2)
            f.write("\n")
    elif format == "csv":
        sc = report.scenario
        row = (
            sc.mode, sc.config.n_layers, sc.k, sc.config.d_model,
            sc.batch, sc.seq_len,
            report.baseline.mean_ms, report.baseline.stdev_ms,
            report.variant.mean_ms, report.variant.stdev_ms,
            report.measured_speedup_pct, report.theoretical_speedup_pct,
            report.wait_time_ms, report.storage["bytes_per_seq"],
        )
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f)
            w.writerow(CSV_COLUMNS)
            w.writerow(row)
    else:
        raise InputError(f"unknown report format {format!r}")
