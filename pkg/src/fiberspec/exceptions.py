"""Exception hierarchy.

Every error raised by the library derives from :class:`FiberSpecError`, and
the validation-type errors additionally derive from :class:`ValueError` so
that scikit-learn style callers catching ``ValueError`` keep working.
"""


class FiberSpecError(Exception):
    """Base class for all library errors."""


class ShapeMismatch(FiberSpecError, ValueError):
    pass


class ZeroDenominator(FiberSpecError, ValueError):
    pass


class ZeroVariance(FiberSpecError, ValueError):
    pass


class EmptyOutput(FiberSpecError, ValueError):
    pass


class InvalidWindow(FiberSpecError, ValueError):
    pass


class TooShort(FiberSpecError, ValueError):
    pass


class StageError(FiberSpecError, ValueError):
    """A spectrum was pushed backwards through the preprocessing chain."""


class NonFinite(FiberSpecError, ValueError):
    pass


class IndexOutOfRange(FiberSpecError, ValueError):
    pass


class Diverged(FiberSpecError, RuntimeError):
    pass


class SpecInvalid(FiberSpecError, ValueError):
    pass


class ValidationError(FiberSpecError, ValueError):
    pass


class TooFewSamples(FiberSpecError, ValueError):
    pass


class EmptyObject(FiberSpecError, ValueError):
    pass


class LengthMismatch(FiberSpecError, ValueError):
    pass


class LabelOutOfRange(FiberSpecError, ValueError):
    pass


class UnknownObject(FiberSpecError, ValueError):
    pass


class HeaderMismatch(FiberSpecError, ValueError):
    pass


class TruncatedPayload(FiberSpecError, ValueError):
    pass


class BadUtf8(FiberSpecError, ValueError):
    pass


class ChecksumMismatch(FiberSpecError, ValueError):
    pass
