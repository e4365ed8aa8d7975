"""Exception hierarchy.

Every failure raised on purpose by the package derives from
:class:`StreamNarError`, so callers (and the fuzz tests) can tell a named
error from a crash.
"""


class StreamNarError(Exception):
    """Base class for all errors raised by streamnar."""


class DimensionMismatch(StreamNarError, ValueError):
    pass


class FullyMaskedRow(StreamNarError, ValueError):
    """A softmax row had no allowed entries."""


class EvenKernel(StreamNarError, ValueError):
    pass


# frontend / encoder


class BlockTooShort(StreamNarError, ValueError):
    pass


class NotDivisibleBy4(StreamNarError, ValueError):
    pass


class NotDivisibleByBlock(StreamNarError, ValueError):
    pass


class StateConfigMismatch(StreamNarError, ValueError):
    pass


# merge


class PositionOutOfBlock(StreamNarError, ValueError):
    pass


class EmptyHypothesis(StreamNarError, ValueError):
    pass


class NonConsecutiveBlocks(StreamNarError, ValueError):
    pass


# pipeline


class EmptyBatch(StreamNarError, ValueError):
    pass


class ConfigError(StreamNarError, ValueError):
    """Invalid model or session configuration."""


# file formats


class FormatError(StreamNarError):
    """Base for malformed-input errors when reading files."""


class BadMagic(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class DimensionZero(FormatError):
    pass


class VersionUnsupported(FormatError):
    pass


class NonFiniteValues(FormatError):
    pass


class MalformedConfig(FormatError):
    pass


class MalformedText(FormatError):
    pass


class VocabError(FormatError):
    pass


class ShapeMismatch(FormatError):
    def __init__(self, name: str, expected, found):
        super().__init__(f"tensor {name!r}: expected shape {tuple(expected)}, got {tuple(found)}")
        self.name = name
        self.expected = tuple(expected)
        self.found = tuple(found)


class MissingTensor(FormatError):
    def __init__(self, name: str):
        super().__init__(f"missing tensor {name!r}")
        self.name = name


class UnexpectedTensor(FormatError):
    def __init__(self, name: str):
        super().__init__(f"unexpected tensor {name!r}")
        self.name = name
