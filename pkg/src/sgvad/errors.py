"""Exception types raised across the toolkit."""


class SgvadError(Exception):
    """Base class for all toolkit errors."""


class UnsupportedFormat(SgvadError):
    pass


class CorruptFile(SgvadError):
    pass


class TooShort(SgvadError):
    pass


class ShapeMismatch(SgvadError, ValueError):
    pass


class BadTarget(SgvadError, ValueError):
    pass


class ModeMismatch(SgvadError):
    pass


class EmptyBatch(SgvadError):
    pass


class NonFiniteLoss(SgvadError, FloatingPointError):
    pass


class MissingAudio(SgvadError, FileNotFoundError):
    pass


class DegenerateLabels(SgvadError, ValueError):
    pass


class UnmappedLabel(SgvadError, KeyError):
    pass


class ConfigError(SgvadError, ValueError):
    pass
