"""Exception hierarchy. Every failure raised on purpose derives from ThzqError."""


class ThzqError(Exception):
    pass


# quantum state / circuit
class ZeroNormWaveformError(ThzqError, ValueError):
    pass


class LengthExceedsRegisterError(ThzqError, ValueError):
    pass


class IndexOutOfRangeError(ThzqError, IndexError):
    pass


class SameQubitError(ThzqError, ValueError):
    pass


class OddQubitCountError(ThzqError, ValueError):
    pass


class NonPositiveLayersError(ThzqError, ValueError):
    pass


class FeatureLenExceedsRegisterError(ThzqError, ValueError):
    pass


# classifier
class InvalidDimsError(ThzqError, ValueError):
    pass


class BatchTooSmallError(ThzqError, ValueError):
    pass


class ShapeMismatchError(ThzqError, ValueError):
    pass


class StaleCacheError(ThzqError, RuntimeError):
    pass


# data / pipeline
class OutOfRangePixelError(ThzqError, IndexError):
    pass


class EmptySplitError(ThzqError, ValueError):
    pass


class DegenerateClassError(ThzqError, ValueError):
    pass


class SceneFormatError(ThzqError, ValueError):
    pass


# persistence
class IoFailureError(ThzqError, OSError):
    pass


class CorruptFileError(ThzqError, ValueError):
    """File structure is readable but its contents are inconsistent."""


class BadMagicError(CorruptFileError):
    pass


class UnsupportedVersionError(CorruptFileError):
    pass


class TruncatedFileError(CorruptFileError):
    pass


class SchemaMismatchError(CorruptFileError):
    pass
