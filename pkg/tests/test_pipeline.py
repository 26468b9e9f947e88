import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nucmix import container
from nucmix.datasets import genome_like_fasta, periodic_acgt, random_acgt, random_bytes
from nucmix.errors import ArchitectureMismatch, ChecksumMismatch, ConfigInvalid, CorruptStream, SpumMissing
from nucmix.mixer import SelectorFlags
from nucmix.neural import checksum64
from nucmix.pipeline import (
    CompressConfig,
    _Models,
    _run_chunk,
    _Shared,
    compress,
    compress_traced,
    decompress,
    decompress_traced,
    plan_chunks,
    snapshot_point,
)
from nucmix.skmer import SkParams, encode
from nucmix.alphabet import canonicalize

SK_PAIRS = [(1, 1), (1, 2), (2, 2), (1, 3), (2, 3), (3, 3), (1, 4), (2, 4), (3, 4), (4, 4)]
DM_ONLY = SelectorFlags(0, 0, 1)


def small(**kw):
    base = dict(t=4, bs=8, flags=DM_ONLY, processes=1)
    base.update(kw)
    return CompressConfig(**base)


def test_plan_examples():
    assert plan_chunks(1000, 2, 1, 1).ranges == ((0, 500), (500, 500))
    assert plan_chunks(1001, 2, 1, 1).ranges == ((0, 501), (501, 500))
    p = plan_chunks(100, 4, 320, 32)
    assert p.chunk_count == 1 and p.bs <= 100 and p.bs == 100 // 33
    assert plan_chunks(0, 3, 8, 4).ranges == ()
    assert plan_chunks(5, 1, 320, 32).bs == 1


@settings(max_examples=300)
@given(st.integers(0, 10**6), st.integers(1, 8), st.integers(1, 400), st.integers(1, 64))
def test_plan_invariants(n, W, bs, t):
    p = plan_chunks(n, W, bs, t)
    if n == 0:
        assert p.chunk_count == 0
        return
    starts = [a for a, _ in p.ranges]
    lens = [l for _, l in p.ranges]
    assert starts == [0] + list(np.cumsum(lens)[:-1]) and sum(lens) == n
    assert max(lens) - min(lens) <= 1 and lens == sorted(lens, reverse=True)
    assert 1 <= p.chunk_count <= W and 1 <= p.bs <= bs
    if p.chunk_count > 1:
        assert min(lens) >= p.bs * (t + 1)
    if min(lens) >= t + 1:
        assert min(lens) // p.bs >= t + 1


def test_snapshot_point():
    assert snapshot_point(100, 0.05) == 5
    assert snapshot_point(101, 0.05) == 6
    assert snapshot_point(3, 0.05) == 1
    assert snapshot_point(0, 0.05) == 0
    assert snapshot_point(10, 0.5) == 5


def test_config_validation():
    for bad in (dict(s=2, k=1), dict(t=0), dict(bs=0), dict(workers=0), dict(smp_fraction=1.0),
                dict(smp_fraction=0.00001), dict(scale_factor=3), dict(processes=0)):
        with pytest.raises(ConfigInvalid):
            CompressConfig(**bad)


def test_empty_and_tiny_inputs():
    for raw in (b"", b"A", b"AC", b"ACG"[:2]):
        data = compress(raw, CompressConfig(k=3, s=3))
        parts = container.read(data)
        assert parts.chunks == [] and parts.payloads == []
        assert decompress(data) == raw
    data = compress(b"AC", CompressConfig())
    assert len(data) == len(compress(b"", CompressConfig())) + 1  # one packed residual byte


@pytest.mark.parametrize("s,k", SK_PAIRS)
def test_round_trip_all_skmer_pairs(s, k):
    raw = random_acgt(1500, seed=s * 10 + k) + b"nnACGT\nacgt>x"
    for W in (1, 2):
        cfg = small(s=s, k=k, workers=W, t=3, bs=4)
        data, trace = compress_traced(raw, cfg)
        assert decompress(data) == raw
        assert trace.plan.chunk_count >= 1


@settings(max_examples=25, deadline=None)
@given(st.binary(max_size=600), st.sampled_from(SK_PAIRS), st.sampled_from([1, 2, 4]), st.sampled_from([1, 8, 320]))
def test_round_trip_arbitrary_bytes(raw, sk, W, bs):
    cfg = small(s=sk[0], k=sk[1], workers=W, bs=bs, t=2)
    assert decompress(compress(raw, cfg)) == raw


def test_fasta_like_round_trip_and_learning():
    raw = genome_like_fasta(20_000, seed=5)
    data = compress(raw, small(t=8, bs=16, workers=2))
    assert decompress(data) == raw
    periodic = periodic_acgt(20_000, period=30, seed=1)
    assert len(compress(periodic, small(t=8, bs=16))) < 0.6 * len(compress(random_acgt(20_000, 1), small(t=8, bs=16)))


def test_multiprocess_equals_sequential():
    raw = random_acgt(12_000, seed=9)
    seq = compress(raw, small(workers=3, processes=1))
    par = compress(raw, small(workers=3, processes=3))
    assert seq == par
    assert decompress(par, workers=3) == raw
    assert decompress(par, workers=2) == raw


def test_decompress_with_other_worker_count():
    raw = random_acgt(9_000, seed=2)
    data = compress(raw, small(workers=4))
    assert container.read(data).chunks.__len__() == 4
    for w in (1, 4):
        assert decompress(data, workers=w) == raw


def test_uniform_coding_count():
    raw = random_acgt(6_000, seed=3)
    for W in (1, 2, 3):
        cfg = small(workers=W, s=1, k=2)
        _, trace = compress_traced(raw, cfg)
        assert trace.plan.chunk_count == W
        assert trace.uniform_symbols == W * trace.plan.bs * cfg.t


def test_smp_chain_and_hashes():
    raw = periodic_acgt(30_000, period=12, seed=0)
    cfg = small(workers=3, t=6, bs=10)
    data, ct = compress_traced(raw, cfg)
    back, dt = decompress_traced(data)
    assert back == raw
    assert ct.handoffs == 2 and len(ct.snapshot_hashes) == 3
    assert ct.snapshot_hashes == dt.snapshot_hashes
    assert [c.inbound_hash for c in ct.chunks] == [None] + ct.snapshot_hashes[:2]
    for c in ct.chunks:
        assert c.snapshot_step == math.ceil(0.05 * (c.substream_len - cfg.t))
    off = compress_traced(raw, small(workers=3, t=6, bs=10, smp=False))
    assert off[1].handoffs == 0 and off[1].snapshot_hashes == []
    assert container.read(off[0]).flags & container.FLAG_NO_SMP
    assert decompress(off[0]) == raw
    assert ct.chunks[0].losses == off[1].chunks[0].losses  # chunk 0 never receives a snapshot


def test_chunk_independence_given_snapshot():
    raw = random_acgt(8_000, seed=4)
    cfg = small(workers=2)
    data, trace = compress_traced(raw, cfg)
    parts = container.read(data)
    stream, _ = canonicalize(raw)
    tokens = encode(stream, SkParams(3, 3)).tokens
    sh = _Shared(3, cfg.t, parts.bs, 0.05, True, DM_ONLY, cfg.seed, cfg.scale_factor, None, None)
    models = _Models(sh)
    box = []
    e0, e1 = parts.chunks
    p0, _, _ = _run_chunk(0, sh, models, e0.token_len, tokens=tokens[: e0.token_len], send=box.append)
    assert p0 == parts.payloads[0]
    p1, _, t1 = _run_chunk(1, sh, models, e1.token_len, tokens=tokens[e1.token_start :], inbound=box[0])
    assert p1 == parts.payloads[1] and t1.inbound_hash == trace.chunks[1].inbound_hash


def test_tampering_detected():
    raw = random_acgt(5_000, seed=6)
    data = compress(raw, small())
    bad = bytearray(data)
    bad[-20] ^= 0x01
    with pytest.raises(ChecksumMismatch):
        decompress(bytes(bad))
    # same flip with a repaired checksum: the stream itself must be caught or differ
    body = bytes(bad[:-8])
    forged = body + checksum64(body).to_bytes(8, "little")
    try:
        out = decompress(forged)
    except CorruptStream:
        return
    assert out != raw


def test_reproducible_containers_sprm_branch():
    raw = genome_like_fasta(6_000, seed=8)
    cfg = small(flags=None, selector_threshold=100, workers=2)
    a, ta = compress_traced(raw, cfg)
    b = compress(raw, cfg)
    assert a == b
    assert ta.flags == SelectorFlags(0, 1, 1)
    parts = container.read(a)
    assert parts.flags & container.FLAG_SPRM and parts.sprm_blob
    assert decompress(a) == raw
    calls = ta.forward_calls()
    assert calls["spum"] == 0 and calls["sprm"] == sum(c.model_steps for c in ta.chunks)


def test_spum_branch(spum_path):
    path = spum_path(2, 8)
    raw = genome_like_fasta(3_000, seed=11)
    cfg = CompressConfig(s=2, k=2, t=8, bs=8, workers=2, processes=1)
    before = path.read_bytes()
    data, trace = compress_traced(raw, cfg, spum_path=path)
    assert trace.flags == SelectorFlags(1, 0, 1)
    assert trace.forward_calls()["sprm"] == 0
    assert decompress(data, spum_path=path) == raw
    assert path.read_bytes() == before
    with pytest.raises(SpumMissing):
        decompress(data)
    with pytest.raises(ChecksumMismatch):
        decompress(data, spum_path=spum_path(2, 4))
    with pytest.raises(ArchitectureMismatch):
        compress(raw, CompressConfig(s=3, k=3, t=8), spum_path=path)


def test_spum_selected_without_file_falls_back_to_dm():
    raw = random_acgt(2_000, seed=1)
    data, trace = compress_traced(raw, CompressConfig(t=4, bs=8))
    assert trace.flags == SelectorFlags(0, 0, 1)
    assert decompress(data) == raw
