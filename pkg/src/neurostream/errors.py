"""Exception hierarchy. Every error raised by the package derives from NeuroStreamError."""


class NeuroStreamError(Exception):
    pass


class ShapeError(NeuroStreamError, ValueError):
    pass


class ShapeMismatch(ShapeError):
    pass


class MissingChannel(NeuroStreamError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DuplicateLabel(NeuroStreamError, ValueError):
    pass


class OutOfBounds(NeuroStreamError, ValueError):
    pass


class ParseError(NeuroStreamError, ValueError):
    pass


# dsp
class InvalidFrequency(NeuroStreamError, ValueError):
    pass


class ChannelCountChanged(NeuroStreamError, ValueError):
    pass


class RateNotDivisible(NeuroStreamError, ValueError):
    pass


# nn
class ContextMismatch(NeuroStreamError, RuntimeError):
    pass


class IndexOutOfWindow(NeuroStreamError, IndexError):
    pass


class DegenerateBatch(NeuroStreamError, ValueError):
    pass


# autoencoder
class EmptyDataset(NeuroStreamError, ValueError):
    pass


class TooFewSamples(NeuroStreamError, ValueError):
    pass


class CorruptCheckpoint(NeuroStreamError, ValueError):
    pass


# bus
class SchemaMismatch(NeuroStreamError, TypeError):
    pass


class QueueOverflow(NeuroStreamError, RuntimeError):
    pass


class SourceExhausted(NeuroStreamError, RuntimeError):
    pass


class ConfigError(NeuroStreamError, ValueError):
    pass


class CheckpointError(NeuroStreamError, RuntimeError):
    pass


# io
class CorruptFile(NeuroStreamError, ValueError):
    pass


class VersionMismatch(CorruptFile):
    pass


class RaggedRows(NeuroStreamError, ValueError):
    pass


class NonNumericCell(NeuroStreamError, ValueError):
    pass


class UnknownSchema(NeuroStreamError, ValueError):
    pass


class MalformedMessage(NeuroStreamError, ValueError):
    pass


class TruncatedMessage(MalformedMessage):
    pass
