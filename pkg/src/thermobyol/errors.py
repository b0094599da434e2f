"""Exception taxonomy shared across the engine."""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatch(EngineError):
    pass


class InvalidAxis(EngineError):
    pass


class DegenerateVector(EngineError):
    pass


class NotScalar(EngineError):
    pass


class EmptyOutput(EngineError):
    pass


class InsufficientBatch(EngineError):
    pass


class LabelOutOfRange(EngineError):
    pass


class MissingGradient(EngineError):
    pass


class ConfigInvalid(EngineError):
    pass


class EmptyDataset(EngineError):
    pass


class MissingClassDir(EngineError):
    pass


class UnreadableImage(EngineError):
    pass


class ClassCountMismatch(EngineError):
    pass


class TooFewSamples(EngineError):
    pass


class LengthMismatch(EngineError):
    pass


class EmptyMatrix(EngineError):
    pass


class DegenerateClass(EngineError):
    pass


class CheckpointError(EngineError):
    pass


class CheckpointIncompatible(CheckpointError):
    pass


class IOFailure(EngineError):
    pass
