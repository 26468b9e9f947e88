"""``nucmix`` command line: compress, decompress, verify, pretrain-spum, bench.

Exit codes: 0 success, 1 usage, 2 I/O, 3 format or checksum, 4 verification.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from pathlib import Path

from .bench import compression_ratio, run_benchmark
from .errors import ConfigInvalid, NucmixError, VerificationFailed
from .pipeline import CompressConfig, compress, decompress
from .training import TrainConfig, pretrain_spum

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_FORMAT, EXIT_VERIFY = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _codec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--s", type=int, default=3, help="step between k-mer windows")
    p.add_argument("--k", type=int, default=3, help="k-mer window size")
    p.add_argument("--t", type=int, default=32, help="context length in tokens")
    p.add_argument("--bs", type=int, default=320, help="interleaved substreams per chunk")
    p.add_argument("--workers", type=int, default=1, help="chunks and worker processes (>1: multi-worker mode)")
    p.add_argument("--spum", default=None, metavar="PATH", help="SPuM model file")
    p.add_argument("--selector-threshold", type=int, default=500_000_000, metavar="BYTES",
                   help="inputs up to this size use SPuM, larger ones SPrM")
    p.add_argument("--smp-fraction", type=float, default=0.05,
                   help="fraction of a chunk's model steps before its snapshot is passed on")
    p.add_argument("--no-smp", action="store_true", help="start every chunk from the seeded init")
    p.add_argument("--seed", type=int, default=42, help="DM init seed (SPrM uses seed+1)")
    p.add_argument("--scale-factor", type=int, default=4, help="divide model dims by this (1 = full size)")


def _config(a) -> CompressConfig:
    return CompressConfig(
        s=a.s, k=a.k, t=a.t, bs=a.bs, workers=a.workers, selector_threshold=a.selector_threshold,
        smp_fraction=a.smp_fraction, seed=a.seed, scale_factor=a.scale_factor, smp=not a.no_smp,
    )


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="nucmix", description="Lossless nucleotide compressor with mixed neural predictors.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("compress", help="compress a file", formatter_class=fmt)
    c.add_argument("-i", "--input", required=True, help="input file")
    c.add_argument("-o", "--output", required=True, help="output container")
    _codec_flags(c)
    c.add_argument("--json", action="store_true", help="print a JSON summary")

    d = sub.add_parser("decompress", help="restore a compressed file", formatter_class=fmt)
    d.add_argument("-i", "--input", required=True, help="input container")
    d.add_argument("-o", "--output", required=True, help="restored file")
    d.add_argument("--spum", default=None, metavar="PATH", help="SPuM model file used at compression")
    d.add_argument("--workers", type=int, default=1, help="worker processes")
    d.add_argument("--json", action="store_true", help="print a JSON summary")

    v = sub.add_parser("verify", help="compress, decompress and compare", formatter_class=fmt)
    v.add_argument("-i", "--input", required=True, help="input file")
    _codec_flags(v)
    v.add_argument("--json", action="store_true", help="print a JSON summary")

    t = sub.add_parser("pretrain-spum", help="pre-train a SPuM model on a corpus", formatter_class=fmt)
    t.add_argument("-i", "--input", nargs="+", required=True, help="corpus files")
    t.add_argument("-o", "--output", required=True, help="model file to write")
    t.add_argument("--s", type=int, default=3, help="step between k-mer windows")
    t.add_argument("--k", type=int, default=3, help="k-mer window size")
    t.add_argument("--t", type=int, default=32, help="context length in tokens")
    t.add_argument("--bs", type=int, default=320, help="batch size")
    t.add_argument("--epochs", type=int, default=2, help="passes over the corpus")
    t.add_argument("--seed", type=int, default=0, help="init seed")
    t.add_argument("--scale-factor", type=int, default=4, help="divide model dims by this (1 = full size)")
    t.add_argument("--json", action="store_true", help="print a JSON summary")

    b = sub.add_parser("bench", help="benchmark datasets and write a CSV report", formatter_class=fmt)
    b.add_argument("datasets", nargs="*", help="input files")
    b.add_argument("--csv", default=None, metavar="PATH", help="CSV report path (stdout when omitted)")
    _codec_flags(b)
    b.add_argument("--json", action="store_true", help="print a JSON summary")
    return parser


def _emit(args, summary: dict, text: str) -> None:
    print(json.dumps(summary, sort_keys=True) if args.json else text)


def _write_atomic(path: str, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cmd_compress(a) -> int:
    cfg = _config(a)
    raw = Path(a.input).read_bytes()
    t0 = time.perf_counter()
    blob = compress(raw, cfg, a.spum)
    el = time.perf_counter() - t0
    _write_atomic(a.output, blob)
    cr = compression_ratio(len(blob), len(raw)) if raw else 0.0
    _emit(a, {"source_bytes": len(raw), "compressed_bytes": len(blob), "cr_bits_per_base": cr, "elapsed_s": el},
          f"source {len(raw)} B, compressed {len(blob)} B, CR {cr:.4f} bits/base, {el:.2f} s")
    return EXIT_OK


def _cmd_decompress(a) -> int:
    if a.workers < 1:
        raise ConfigInvalid("workers must be >= 1")
    blob = Path(a.input).read_bytes()
    t0 = time.perf_counter()
    raw = decompress(blob, a.spum, a.workers)
    el = time.perf_counter() - t0
    _write_atomic(a.output, raw)
    _emit(a, {"compressed_bytes": len(blob), "restored_bytes": len(raw), "elapsed_s": el},
          f"restored {len(raw)} B from {len(blob)} B in {el:.2f} s")
    return EXIT_OK


def _cmd_verify(a) -> int:
    cfg = _config(a)
    raw = Path(a.input).read_bytes()
    with tempfile.TemporaryDirectory() as tmp:
        cpath = Path(tmp) / "c.pmkl"
        cpath.write_bytes(compress(raw, cfg, a.spum))
        out = decompress(cpath.read_bytes(), a.spum, cfg.workers)
        size = cpath.stat().st_size
    ok = out == raw
    _emit(a, {"identical": ok, "source_bytes": len(raw), "compressed_bytes": size},
          f"{'OK' if ok else 'MISMATCH'}: {len(raw)} B -> {size} B")
    if not ok:
        raise VerificationFailed("decompressed output differs from the input")
    return EXIT_OK


def _cmd_pretrain(a) -> int:
    cfg = TrainConfig(s=a.s, k=a.k, t=a.t, bs=a.bs, epochs=a.epochs, scale_factor=a.scale_factor)
    corpus = [Path(p).read_bytes() for p in a.input]
    res = pretrain_spum(corpus, cfg, seed=a.seed)
    _write_atomic(a.output, res.file_bytes)
    _emit(a, {"hash": f"{res.file_hash:016x}", "losses": res.losses, "bytes": len(res.file_bytes)},
          f"wrote {a.output} ({len(res.file_bytes)} B, hash {res.file_hash:016x}), "
          f"epoch losses {', '.join(f'{x:.4f}' for x in res.losses)}")
    return EXIT_OK


def _cmd_bench(a) -> int:
    cfg = _config(a)
    report = run_benchmark(a.datasets, cfg, a.spum, a.csv)
    if a.json:
        print(json.dumps({"mean_cr": report.mean_cr, "crp_percent": report.crp,
                          "peak_memory_bytes": report.peak_memory_bytes,
                          "rows": [r.__dict__ for r in report.rows]}, sort_keys=True))
    elif a.csv is None:
        print(report.to_csv(), end="")
    failed = [r for r in report.rows if r.verified != "ok"]
    return EXIT_VERIFY if failed else EXIT_OK


_COMMANDS = {
    "compress": _cmd_compress,
    "decompress": _cmd_decompress,
    "verify": _cmd_verify,
    "pretrain-spum": _cmd_pretrain,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except NucmixError as exc:
        print(f"nucmix: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"nucmix: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
