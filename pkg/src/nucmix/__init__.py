"""Lossless nucleotide compression with (s,k)-mer tokens, a mixture of neural
predictors and range coding."""

from .errors import NucmixError
from .estimator import NucleotideCompressor, SpumPretrainer
from .pipeline import CompressConfig, compress, compress_traced, decompress, decompress_traced
from .skmer import SkMerEncoder, SkParams

__version__ = "0.1.0"

__all__ = [
    "CompressConfig",
    "NucleotideCompressor",
    "NucmixError",
    "SkMerEncoder",
    "SkParams",
    "SpumPretrainer",
    "compress",
    "compress_traced",
    "decompress",
    "decompress_traced",
    "__version__",
]
