import functools

import pytest

from nucmix.datasets import genome_like_fasta
from nucmix.training import TrainConfig, pretrain_spum


@pytest.fixture(scope="session")
def spum_corpus():
    return [genome_like_fasta(12_000, seed=101), genome_like_fasta(8_000, seed=102)]


@pytest.fixture(scope="session")
def spum_path(tmp_path_factory, spum_corpus):
    """``spum_path(k, t=32)`` -> path of a small SPuM trained once per session."""
    root = tmp_path_factory.mktemp("spum")

    @functools.lru_cache(maxsize=None)
    def make(k: int, t: int = 32):
        cfg = TrainConfig(s=k, k=k, t=t, bs=64, epochs=1)
        path = root / f"spum_k{k}_t{t}.nmw"
        pretrain_spum(spum_corpus, cfg, seed=k, out_path=path)
        return path

    return make
