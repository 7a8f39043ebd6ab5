"""Exception types raised across the pipeline.

Everything derives from ``TalkingHeadError`` so the CLI can map failures to
exit codes in one place. ``ValidationError`` subclasses are user/config/data
problems (exit code 1); anything else is a runtime failure (exit code 2).
"""


class TalkingHeadError(Exception):
    pass


class ValidationError(TalkingHeadError):
    pass


# audio
class NonDivisible(ValidationError):
    pass


class EmptyAudio(ValidationError):
    pass


class WeightsShapeMismatch(ValidationError):
    pass


# shapes / generic
class ShapeMismatch(ValidationError):
    pass


class DimensionMismatch(ShapeMismatch):
    pass


class ShortWindow(ValidationError):
    pass


class TooSmall(ValidationError):
    pass


class TooShort(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class ResolutionMismatch(ShapeMismatch):
    pass


# losses
class EmptyBatch(ValidationError):
    pass


class DegenerateEye(ValidationError):
    pass


# metrics
class NoEdges(ValidationError):
    pass


# curriculum
class InvalidPhase(ValidationError):
    pass


class MissingLandmarks(ValidationError):
    pass


class NonFiniteLoss(TalkingHeadError):
    pass


class UntrainedCheckpoint(ValidationError):
    pass


# data / persistence
class ConfigError(ValidationError):
    pass


class ManifestSyntax(ValidationError):
    pass


class FrameAudioMismatch(ValidationError):
    pass


class MissingFile(ValidationError):
    pass


class CountMismatch(ValidationError):
    pass


class VersionUnsupported(ValidationError):
    pass


class FingerprintMismatch(ValidationError):
    pass


class CorruptArchive(ValidationError):
    pass
