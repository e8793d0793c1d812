"""
Error types raised across screenmark.

Every error derives from ScreenmarkError; the CLI maps ``exit_code`` to the
process exit status.
"""

from typing import Optional


class ScreenmarkError(Exception):
    exit_code: int = 1


# ---- raster / metric errors ----

class ChannelMismatch(ScreenmarkError):
    pass


class ShapeMismatch(ScreenmarkError):
    pass


class ImageTooSmall(ScreenmarkError):
    pass


class LengthMismatch(ScreenmarkError):
    pass


class EvenKernel(ScreenmarkError):
    pass


class EvenWindow(ScreenmarkError):
    pass


class OutOfRange(ScreenmarkError):
    pass


# ---- geometry ----

class SingularTransform(ScreenmarkError):
    pass


class DegenerateQuad(ScreenmarkError):
    pass


class SingularSystem(ScreenmarkError):
    pass


class NonConvex(ScreenmarkError):
    pass


# ---- channel ----

class NonPositiveContrast(ScreenmarkError):
    pass


class NegativeSigma(ScreenmarkError):
    pass


class EvenSize(ScreenmarkError):
    pass


class NonPositiveSigma(ScreenmarkError):
    pass


class OddDimensions(ScreenmarkError):
    pass


# ---- localization ----

class EvenBlock(ScreenmarkError):
    pass


class EmptyMask(ScreenmarkError):
    pass


class BadThresholds(ScreenmarkError):
    pass


class TooFewPoints(ScreenmarkError):
    pass


class LocalizationFailed(ScreenmarkError):
    exit_code = 2

    def __init__(self, stage: str, cause: Optional[Exception] = None):
        self.stage = stage
        self.cause = cause
        detail = f": {cause}" if cause is not None else ""
        super().__init__(f"localization failed at stage '{stage}'{detail}")


# ---- anti-crop ----

class TooNarrow(ScreenmarkError):
    pass


class ZeroVariance(ScreenmarkError):
    pass


class NoSymmetryFound(ScreenmarkError):
    pass


# ---- codec ----

class OrthogonalityViolation(ScreenmarkError):
    pass


class PayloadLengthMismatch(ScreenmarkError):
    pass


class DecodeFailed(ScreenmarkError):
    pass


class InvalidKey(ScreenmarkError):
    pass


# ---- io / config ----

class ImageIOError(ScreenmarkError):
    exit_code = 3


class ConfigError(ScreenmarkError):
    pass
