"""Chunked compression and decompression.

The token stream is split into ``W`` contiguous chunks.  Inside a chunk the
tokens are laid out as ``bs`` interleaved substreams of length ``L`` and coded
one batch step at a time: the first ``t`` steps use a uniform distribution,
every later step runs the enabled models on the previous ``t`` tokens of each
substream, mixes, quantizes, codes the ``bs`` targets and then updates DM and
alpha.  Chunk ``i+1`` starts from a snapshot of chunk ``i``'s learner taken
after a fixed fraction of its model steps.

Compression and decompression call the same :func:`_run_chunk`, so the model
sees identical inputs on both sides.
"""

from __future__ import annotations

import math
import multiprocessing as mp
import queue
from dataclasses import dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from ._validation import check_int, check_open_unit, check_scale_factor
from .alphabet import canonicalize, pack_bases, restore, unpack_bases
from .coder import RangeDecoder, RangeEncoder, quantize_batch, uniform_dist
from .container import FLAG_NO_SMP, ChunkEntry, ContainerParts, read, write
from .errors import (
    ArchitectureMismatch,
    ChecksumMismatch,
    ConfigInvalid,
    CorruptStream,
    LengthMismatch,
    NucmixError,
    SpumMissing,
    StreamExhausted,
    TableInconsistent,
    TokenOutOfRange,
)
from .mixer import OnlineMixer, SelectorFlags, select_models, snapshot_hash
from .models import DynamicModel, ModelBundle, SprmModel, SpumModel, load_spum
from .skmer import SkParams, TokenSequence, decode, digits_to_tokens, encode, token_digits
from .training import TrainConfig, pretrain_sprm

SMP_SCALE = 10000


@dataclass(frozen=True)
class CompressConfig:
    s: int = 3
    k: int = 3
    t: int = 32
    bs: int = 320
    workers: int = 1
    selector_threshold: int = 500_000_000
    smp_fraction: float = 0.05
    seed: int = 42
    scale_factor: int = 4
    smp: bool = True
    flags: SelectorFlags | None = None  # overrides the size rule when set
    processes: int | None = None  # worker processes; defaults to ``workers``

    def __post_init__(self):
        SkParams(self.s, self.k)
        check_int(self.t, "t", min_val=1, max_val=65535)
        check_int(self.bs, "bs", min_val=1, max_val=2**32 - 1)
        check_int(self.workers, "workers", min_val=1)
        check_int(self.selector_threshold, "selector_threshold", min_val=1)
        check_open_unit(self.smp_fraction, "smp_fraction")
        if not 1 <= self.smp_q < SMP_SCALE:
            raise ConfigInvalid("smp_fraction must be representable in 1/10000 steps")
        check_int(self.seed, "seed", min_val=0, max_val=2**63 - 1)
        check_scale_factor(self.scale_factor)
        if self.processes is not None:
            check_int(self.processes, "processes", min_val=1)

    @property
    def n_processes(self) -> int:
        return self.workers if self.processes is None else self.processes

    @property
    def smp_q(self) -> int:
        return int(round(self.smp_fraction * SMP_SCALE))

    @property
    def skparams(self) -> SkParams:
        return SkParams(self.s, self.k)


@dataclass(frozen=True)
class ChunkPlan:
    ranges: tuple[tuple[int, int], ...]
    bs: int
    t: int
    smp_fraction: float

    @property
    def chunk_count(self) -> int:
        return len(self.ranges)


def plan_chunks(token_count: int, W: int, bs: int, t: int, smp_fraction: float = 0.05) -> ChunkPlan:
    """Even split into at most ``W`` chunks, remainder to the earliest ones.

    ``W`` shrinks until each chunk holds at least ``bs*(t+1)`` tokens, then
    ``bs`` shrinks so every substream of the shortest chunk has ``t+1`` tokens.
    """
    token_count = check_int(token_count, "token_count", min_val=0)
    W = check_int(W, "W", min_val=1)
    bs = check_int(bs, "bs", min_val=1)
    t = check_int(t, "t", min_val=1)
    smp_fraction = check_open_unit(smp_fraction, "smp_fraction")
    if token_count == 0:
        return ChunkPlan((), bs, t, smp_fraction)
    W = max(1, min(W, token_count // (bs * (t + 1))))
    q, r = divmod(token_count, W)
    ranges, start = [], 0
    for i in range(W):
        n = q + (1 if i < r else 0)
        ranges.append((start, n))
        start += n
    bs = max(1, min(bs, q // (t + 1)))
    return ChunkPlan(tuple(ranges), bs, t, smp_fraction)


def snapshot_point(model_steps: int, smp_fraction: float) -> int:
    """Number of model-coded steps after which a chunk's snapshot is taken."""
    return min(model_steps, math.ceil(smp_fraction * model_steps - 1e-9))


@dataclass
class ChunkTrace:
    index: int
    n_tokens: int
    substream_len: int
    uniform_symbols: int = 0
    model_steps: int = 0
    losses: list[float] = field(default_factory=list)  # mean nats per token, one per model step
    snapshot_step: int | None = None
    snapshot_hash: int | None = None
    inbound_hash: int | None = None
    forward_calls: dict[str, int] = field(default_factory=dict)


@dataclass
class Trace:
    flags: SelectorFlags
    plan: ChunkPlan
    chunks: list[ChunkTrace] = field(default_factory=list)

    @property
    def uniform_symbols(self) -> int:
        return sum(c.uniform_symbols for c in self.chunks)

    @property
    def snapshot_hashes(self) -> list[int]:
        return [c.snapshot_hash for c in self.chunks if c.snapshot_hash is not None]

    @property
    def handoffs(self) -> int:
        return sum(c.inbound_hash is not None for c in self.chunks)

    def forward_calls(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for c in self.chunks:
            for name, n in c.forward_calls.items():
                out[name] = out.get(name, 0) + n
        return out


# chunk coding ----------------------------------------------------------------


@dataclass(frozen=True)
class _Shared:
    """Everything a worker needs besides its own chunk, picklable."""

    k: int
    t: int
    bs: int
    smp_fraction: float
    smp: bool
    flags: SelectorFlags
    dm_seed: int
    scale_factor: int
    spum_bytes: bytes | None
    sprm_bytes: bytes | None


class _Models:
    def __init__(self, sh: _Shared):
        self.spum = SpumModel.from_bytes(sh.spum_bytes) if sh.spum_bytes is not None else None
        self.sprm = SprmModel.from_bytes(sh.sprm_bytes) if sh.sprm_bytes is not None else None


def _pack_tokens(tokens: np.ndarray, k: int) -> bytes:
    return pack_bases(token_digits(tokens, k).reshape(-1)) if tokens.size else b""


def _unpack_tokens(buf: bytes, n: int, k: int) -> np.ndarray:
    if n == 0:
        return np.zeros(0, np.uint32)
    return digits_to_tokens(unpack_bases(buf, n * k).reshape(n, k))


def _run_chunk(index, sh: _Shared, models: _Models, n_tokens, tokens=None, payload=None, trailer_len=0,
               inbound=None, send=None):
    """Code one chunk.  Pass ``tokens`` to encode (returns payload bytes) or
    ``payload`` to decode (returns tokens).  ``send`` receives the snapshot."""
    encoding = tokens is not None
    k, t = sh.k, sh.t
    bs = min(sh.bs, n_tokens)
    L = n_tokens // bs
    n_left = n_tokens - bs * L
    V = 4**k
    dm = DynamicModel.scaled(k, t, sh.scale_factor).init(sh.dm_seed)
    bundle = ModelBundle(dm=dm, skparams=SkParams(1, k), t=t, spum=models.spum, sprm=models.sprm)
    mixer = OnlineMixer(bundle, sh.flags)
    trace = ChunkTrace(index, n_tokens, L)
    if inbound is not None:
        mixer.restore(inbound)
        trace.inbound_hash = snapshot_hash(inbound)
    calls0 = {
        "spum": models.spum.forward_calls if models.spum else 0,
        "sprm": models.sprm.forward_calls if models.sprm else 0,
    }
    M = max(L - t, 0)
    snap_at = snapshot_point(M, sh.smp_fraction) if sh.smp else None

    def take_snapshot():
        blob = mixer.snapshot()
        trace.snapshot_step = snap_at
        trace.snapshot_hash = snapshot_hash(blob)
        if send is not None:
            send(blob)

    rows = np.arange(bs)
    u = uniform_dist(V)
    if encoding:
        tokens = np.asarray(tokens, dtype=np.intp)
        sub = tokens[: bs * L].reshape(bs, L)
        coder = RangeEncoder()
        ufreq = u.freqs.astype(np.int64)
        ucum = u.cumulative()[:-1].astype(np.int64)
    else:
        body = payload[: len(payload) - trailer_len]
        try:
            coder = RangeDecoder(body)
        except StreamExhausted as exc:
            raise CorruptStream(str(exc)) from None
        sub = np.zeros((bs, L), dtype=np.intp)
        ucum_list = [u.cumulative().tolist()] * bs

    try:
        for j in range(min(t, L)):
            if encoding:
                col = sub[:, j]
                coder.encode_many(ucum[col].tolist(), ufreq[col].tolist())
            else:
                sub[:, j] = coder.decode_many(ucum_list)
            trace.uniform_symbols += bs
        if snap_at == 0:
            take_snapshot()
        for j in range(t, L):
            dist = mixer.predict(sub[:, j - t : j])
            freqs = quantize_batch(dist.probs)
            if encoding:
                tg = sub[:, j]
                f = freqs[rows, tg]
                cum = np.cumsum(freqs, axis=1)[rows, tg] - f
                coder.encode_many(cum.tolist(), f.tolist())
            else:
                cum = np.zeros((bs, V + 1), dtype=np.int64)
                np.cumsum(freqs, axis=1, out=cum[:, 1:])
                sub[:, j] = coder.decode_many(cum.tolist())
                tg = sub[:, j]
            loss = mixer.controller_step(tg, dist)
            trace.losses.append(loss / bs)
            trace.model_steps += 1
            if snap_at is not None and trace.model_steps == snap_at:
                take_snapshot()
    except StreamExhausted as exc:
        raise CorruptStream(f"chunk {index}: {exc}") from None

    trace.forward_calls = {
        "spum": (models.spum.forward_calls if models.spum else 0) - calls0["spum"],
        "sprm": (models.sprm.forward_calls if models.sprm else 0) - calls0["sprm"],
        "dm": dm.forward_calls,
    }
    if encoding:
        trailer = _pack_tokens(tokens[bs * L :], k)
        return coder.finish() + trailer, len(trailer), trace
    left = _unpack_tokens(payload[len(payload) - trailer_len :], n_left, k)
    if len(payload) - trailer_len != coder.pos:
        raise CorruptStream(f"chunk {index}: codestream has trailing bytes")
    return np.concatenate([sub.reshape(-1).astype(np.uint32), left]), trailer_len, trace


# scheduling ------------------------------------------------------------------


def _worker_main(sh: _Shared, jobs, handoffs, results):
    """Process body: run the assigned chunks in ascending order."""
    try:
        with threadpool_limits(1):
            models = _Models(sh)
            for job in jobs:
                i = job["index"]
                inbound = handoffs[i - 1].get() if sh.smp and i > 0 else None
                send = handoffs[i].put if sh.smp and i < len(handoffs) else None
                out = _run_chunk(i, sh, models, inbound=inbound, send=send, **job["args"])
                results.put(("ok", i, out))
    except BaseException as exc:  # reported to the parent, which re-raises
        results.put(("error", None, exc))


def _run_all(sh: _Shared, jobs: list[dict], workers: int):
    W = len(jobs)
    procs = min(workers, W)
    if procs <= 1:
        with threadpool_limits(1):
            models = _Models(sh)
            outs, pending = [], None
            for job in jobs:
                i = job["index"]
                inbound = pending if sh.smp and i > 0 else None
                box = []
                out = _run_chunk(i, sh, models, inbound=inbound, send=box.append, **job["args"])
                pending = box[0] if box else None
                outs.append(out)
            return outs
    ctx = mp.get_context("spawn")
    handoffs = [ctx.Queue() for _ in range(W - 1)]
    results = ctx.Queue()
    ps = [
        ctx.Process(target=_worker_main, args=(sh, jobs[q::procs], handoffs, results), daemon=True)
        for q in range(procs)
    ]
    for p in ps:
        p.start()
    outs: list = [None] * W
    try:
        got = 0
        while got < W:
            try:
                status, i, payload = results.get(timeout=1.0)
            except queue.Empty:
                if any(not p.is_alive() and p.exitcode not in (0, None) for p in ps):
                    raise NucmixError("a worker process died unexpectedly") from None
                continue
            if status == "error":
                raise payload
            outs[i] = payload
            got += 1
    finally:
        for p in ps:
            if p.is_alive():
                p.terminate()
            p.join()
    return outs


# public entry points ---------------------------------------------------------


def _resolve_flags(cfg: CompressConfig, raw_len: int, n_tokens: int, have_spum: bool) -> SelectorFlags:
    flags = cfg.flags or select_models(raw_len, cfg.selector_threshold)
    if flags.s0 and not have_spum:
        flags = replace(flags, s0=0)
    if flags.s1 and n_tokens < cfg.t + 1:
        flags = replace(flags, s1=0)
    return flags


def compress_traced(raw: bytes, cfg: CompressConfig = CompressConfig(), spum_path=None) -> tuple[bytes, Trace]:
    raw = bytes(raw)
    p = cfg.skparams
    stream, exc = canonicalize(raw)
    ts = encode(stream, p, workers=cfg.workers)
    spum, spum_hash = (None, 0)
    if spum_path is not None:
        spum, spum_hash = load_spum(spum_path)
        if spum.k != p.k or spum.t != cfg.t:
            raise ArchitectureMismatch(f"SPuM was built for k={spum.k}, t={spum.t}; run uses k={p.k}, t={cfg.t}")
    flags = _resolve_flags(cfg, len(raw), ts.tokens.size, spum is not None)
    sprm_seed = cfg.seed + 1
    sprm_blob = None
    if flags.s1:
        tcfg = TrainConfig(s=p.s, k=p.k, t=cfg.t, bs=cfg.bs, epochs=1, scale_factor=cfg.scale_factor)
        with threadpool_limits(1):
            sprm = pretrain_sprm(ts, spum, tcfg, seed=sprm_seed)
        sprm_blob = sprm.to_bytes()
    plan = plan_chunks(ts.tokens.size, cfg.workers, cfg.bs, cfg.t, cfg.smp_q / SMP_SCALE)
    sh = _Shared(
        k=p.k,
        t=cfg.t,
        bs=plan.bs,
        smp_fraction=cfg.smp_q / SMP_SCALE,
        smp=cfg.smp,
        flags=flags,
        dm_seed=cfg.seed,
        scale_factor=cfg.scale_factor,
        spum_bytes=spum.to_bytes() if flags.s0 else None,
        sprm_bytes=sprm_blob,
    )
    jobs = [
        {"index": i, "args": {"n_tokens": n, "tokens": ts.tokens[a : a + n]}}
        for i, (a, n) in enumerate(plan.ranges)
    ]
    outs = _run_all(sh, jobs, cfg.n_processes)
    parts = ContainerParts(
        flags=flags.to_bits() | (0 if cfg.smp else FLAG_NO_SMP),
        s=p.s,
        k=p.k,
        t=cfg.t,
        bs=plan.bs,
        smp_q=cfg.smp_q,
        scale_factor=cfg.scale_factor,
        dm_seed=cfg.seed,
        sprm_seed=sprm_seed if flags.s1 else 0,
        spum_hash=spum_hash if flags.s0 else 0,
        original_len=len(raw),
        chunks=[ChunkEntry(a, n, trailer_len=out[1]) for (a, n), out in zip(plan.ranges, outs)],
        payloads=[out[0] for out in outs],
        sprm_blob=sprm_blob,
        exceptions=exc,
        residual=ts.residual,
    )
    return write(parts), Trace(flags, plan, [out[2] for out in outs])


def compress(raw: bytes, cfg: CompressConfig = CompressConfig(), spum_path=None) -> bytes:
    return compress_traced(raw, cfg, spum_path)[0]


def decompress_traced(data: bytes, spum_path=None, workers: int = 1) -> tuple[bytes, Trace]:
    parts = read(data)
    workers = check_int(workers, "workers", min_val=1)
    flags = SelectorFlags.from_bits(parts.flags & 7)
    try:
        p = SkParams(parts.s, parts.k)
        check_scale_factor(parts.scale_factor)
    except ConfigInvalid as exc:
        raise TableInconsistent(f"container parameters are invalid: {exc}") from None
    if parts.t < 1 or parts.bs < 1 or not 0 < parts.smp_q < SMP_SCALE:
        raise TableInconsistent("container parameters are invalid")
    spum_bytes = None
    if flags.s0:
        if spum_path is None:
            raise SpumMissing("this file was compressed with a SPuM model; pass it with --spum")
        spum, h = load_spum(spum_path)
        if h != parts.spum_hash:
            raise ChecksumMismatch("SPuM file hash does not match the one recorded in the container")
        spum_bytes = spum.to_bytes()
    smp = not parts.flags & FLAG_NO_SMP
    sh = _Shared(
        k=p.k,
        t=parts.t,
        bs=parts.bs,
        smp_fraction=parts.smp_q / SMP_SCALE,
        smp=smp,
        flags=flags,
        dm_seed=parts.dm_seed,
        scale_factor=parts.scale_factor,
        spum_bytes=spum_bytes,
        sprm_bytes=parts.sprm_blob,
    )
    jobs = [
        {"index": i, "args": {"n_tokens": e.token_len, "payload": pl, "trailer_len": e.trailer_len}}
        for i, (e, pl) in enumerate(zip(parts.chunks, parts.payloads))
    ]
    outs = _run_all(sh, jobs, workers)
    tokens = np.concatenate([o[0] for o in outs]) if outs else np.zeros(0, np.uint32)
    try:
        stream = decode(TokenSequence(tokens, parts.residual, p))
        raw = restore(stream, parts.exceptions, parts.original_len)
    except (TokenOutOfRange, LengthMismatch) as exc:
        raise CorruptStream(str(exc)) from None
    plan = ChunkPlan(tuple((e.token_start, e.token_len) for e in parts.chunks), parts.bs, parts.t, sh.smp_fraction)
    return raw, Trace(flags, plan, [o[2] for o in outs])


def decompress(data: bytes, spum_path=None, workers: int = 1) -> bytes:
    return decompress_traced(data, spum_path, workers)[0]
