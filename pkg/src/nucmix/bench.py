"""Compression metrics and a small benchmark harness writing CSV reports."""

from __future__ import annotations

import csv
import io
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import psutil

from .errors import ConfigInvalid, EmptyList, EmptySource, NucmixError, VerificationFailed, ZeroTime
from .pipeline import CompressConfig, compress, decompress

CSV_HEADER = [
    "dataset",
    "source_bytes",
    "compressed_bytes",
    "ct_s",
    "dt_s",
    "cr_bits_per_base",
    "thp_bytes_per_s",
    "verified",
]


def compression_ratio(compressed: int, source: int) -> float:
    """Bits of output per input base (byte)."""
    if source <= 0:
        raise EmptySource("source size must be positive")
    return compressed / source * 8


def throughput(source: int, ct: float, dt: float) -> float:
    """Bytes per second over compression plus decompression time."""
    if ct + dt <= 0:
        raise ZeroTime("total time must be positive")
    return source / (ct + dt)


def robustness(crs, ddof: int = 1) -> float:
    """Coefficient of variation of ``crs`` in percent.

    ``ddof=1`` (sample standard deviation) is what reproduces published
    robustness figures from their per-dataset ratios; ``ddof=0`` is the
    population form.  A single value has no spread and gives 0.
    """
    crs = [float(c) for c in crs]
    if not crs:
        raise EmptyList("robustness needs at least one value")
    if ddof not in (0, 1):
        raise ConfigInvalid("ddof must be 0 or 1")
    mean = sum(crs) / len(crs)
    if mean <= 0:
        raise EmptyList("mean compression ratio must be positive")
    if len(crs) == 1:
        return 0.0
    var = sum((c - mean) ** 2 for c in crs) / (len(crs) - ddof)
    return 100 * math.sqrt(var) / mean


class MemorySampler:
    """Background thread recording the peak resident set size of this
    process and its children."""

    def __init__(self, interval: float = 0.1):
        self.interval = interval
        self.peak = 0
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._proc = psutil.Process(os.getpid())

    def sample(self) -> int:
        rss = self._proc.memory_info().rss
        for child in self._proc.children(recursive=True):
            try:
                rss += child.memory_info().rss
            except psutil.Error:
                pass
        self.peak = max(self.peak, rss)
        return rss

    def _loop(self):
        while not self._stop.wait(self.interval):
            self.sample()

    def __enter__(self):
        self.sample()
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._stop.set()
        self._thread.join()
        self.sample()
        return False


@dataclass
class DatasetResult:
    dataset: str
    source_bytes: int
    compressed_bytes: int
    ct_s: float
    dt_s: float
    cr: float
    thp: float
    verified: str  # "ok" or the failure class name


@dataclass
class MetricsReport:
    rows: list[DatasetResult] = field(default_factory=list)
    peak_memory_bytes: int = 0

    @property
    def good_rows(self) -> list[DatasetResult]:
        return [r for r in self.rows if r.verified == "ok"]

    @property
    def mean_cr(self) -> float:
        good = self.good_rows
        return sum(r.cr for r in good) / len(good) if good else float("nan")

    @property
    def crp(self) -> float:
        good = self.good_rows
        return robustness([r.cr for r in good]) if good else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow(
                [r.dataset, r.source_bytes, r.compressed_bytes, f"{r.ct_s:.6f}", f"{r.dt_s:.6f}",
                 f"{r.cr:.6f}", f"{r.thp:.3f}", r.verified]
            )
        if self.rows:
            w.writerow(["AGGREGATE", "-", "-", "-", "-", f"{self.mean_cr:.6f}", f"{self.crp:.6f}",
                        self.peak_memory_bytes])
        return buf.getvalue()


def run_benchmark(datasets, cfg: CompressConfig = CompressConfig(), spum_path=None, csv_path=None,
                  fault_hook=None) -> MetricsReport:
    """Compress, decompress and verify every dataset in turn.

    ``fault_hook``, if given, is applied to the decompressed bytes before the
    comparison; it exists to exercise the failure path.
    """
    report = MetricsReport()
    with MemorySampler() as mem:
        for path in datasets:
            path = Path(path)
            raw = path.read_bytes()
            t0 = time.perf_counter()
            blob = compress(raw, cfg, spum_path)
            ct = time.perf_counter() - t0
            t0 = time.perf_counter()
            status = "ok"
            try:
                out = decompress(blob, spum_path, cfg.workers)
                if fault_hook is not None:
                    out = fault_hook(out)
                if out != raw:
                    raise VerificationFailed(f"{path.name}: round trip differs")
            except NucmixError as exc:
                status = type(exc).__name__
            dt = time.perf_counter() - t0
            cr = compression_ratio(len(blob), len(raw)) if raw else 0.0
            thp = throughput(len(raw), ct, dt)
            report.rows.append(DatasetResult(path.name, len(raw), len(blob), ct, dt, cr, thp, status))
    report.peak_memory_bytes = mem.peak
    if csv_path is not None:
        Path(csv_path).write_text(report.to_csv())
    return report
