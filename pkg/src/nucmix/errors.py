"""Exception hierarchy.

Every error raised by the package derives from :class:`NucmixError`.  The
``exit_code`` class attribute is what the command line maps an uncaught error
to (1 usage, 2 io, 3 format/checksum, 4 verification).
"""


class NucmixError(Exception):
    exit_code = 3


# configuration / usage
class ConfigInvalid(NucmixError, ValueError):
    exit_code = 1


class ArchitectureMismatch(NucmixError):
    exit_code = 1


# alphabet / skmer
class LengthMismatch(NucmixError):
    pass


class TokenOutOfRange(NucmixError):
    pass


class NotOverlapping(NucmixError, ValueError):
    exit_code = 1


# neural substrate
class ShapeMismatch(NucmixError, ValueError):
    exit_code = 1


class StaleTape(NucmixError):
    pass


class ContextLengthMismatch(ShapeMismatch):
    pass


# mixer
class MissingLogits(NucmixError, ValueError):
    exit_code = 1


class BatchMismatch(NucmixError, ValueError):
    exit_code = 1


# coder
class InvalidDistribution(NucmixError, ValueError):
    exit_code = 1


class StreamExhausted(NucmixError):
    pass


# container / pipeline
class ChecksumMismatch(NucmixError):
    pass


class BadMagic(NucmixError):
    pass


class UnsupportedVersion(NucmixError):
    pass


class TableInconsistent(NucmixError):
    pass


class CorruptStream(NucmixError):
    pass


class SpumMissing(NucmixError):
    pass


# training
class CorpusEmpty(NucmixError, ValueError):
    exit_code = 1


class TargetTooShort(NucmixError, ValueError):
    exit_code = 1


# bench
class EmptySource(NucmixError, ValueError):
    exit_code = 1


class ZeroTime(NucmixError, ValueError):
    exit_code = 1


class EmptyList(NucmixError, ValueError):
    exit_code = 1


class VerificationFailed(NucmixError):
    exit_code = 4
