"""Exception hierarchy.

Every error raised on bad *data* (as opposed to programming mistakes) derives
from :class:`OBAError`; the CLI maps those to exit code 2.
"""


class OBAError(Exception):
    """Base class for data errors."""


# geodata
class UnsupportedFormat(OBAError):
    pass


class CorruptFile(OBAError):
    pass


class WorldFileMalformed(OBAError):
    pass


class ParseError(OBAError):
    pass


class InvalidGeometry(OBAError):
    pass


class SingularTransform(OBAError):
    pass


class WindowOutOfBounds(OBAError):
    pass


class CrsMismatch(OBAError):
    pass


# objectbank
class EmptyMask(OBAError):
    pass


class PoolEmpty(OBAError):
    pass


class NoCleanWindow(OBAError):
    pass


# transforms / evalgen
class SizeMismatch(OBAError):
    pass


# compositor / sampler
class EmptyBank(OBAError):
    pass


class NoOriginals(OBAError):
    pass


class InvalidPolicy(OBAError):
    pass


# evalgen
class MissingPair(OBAError):
    pass


class NonBinaryMask(OBAError):
    pass


# search
class EpochNotReported(OBAError):
    pass


class TrainerCrash(OBAError):
    pass


class StoreCorrupt(OBAError):
    pass
