"""Exception hierarchy for the bpbn engine.

Model-file errors get distinct classes so callers (and the CLI exit-code
contract) can tell a bad container from a bad shape from a runtime fault.
"""


class BpbnError(Exception):
    """Base class for all engine errors."""


class PackingError(BpbnError):
    """Bit packing/unpacking contract violation (non-bipolar element,
    nonzero padding, mismatched layouts)."""


class ShapeError(BpbnError):
    """Tensor/kernel/model shape disagreement."""


class RangeOverflowError(BpbnError):
    """A value left its declared integer range (Q16.16 overflow, shift
    headroom violation, 32-bit fusion overflow)."""


class ImageFormatError(BpbnError):
    """Unsupported or malformed PGM/PPM input."""


class ModelFormatError(BpbnError):
    """Malformed model container (bad magic, truncated, bad metadata)."""


class ModelVersionError(ModelFormatError):
    """Container version not supported by this engine."""


class MissingBlobError(ModelFormatError):
    """A layer references a weight blob that is not in the blob table."""


class DigestError(ModelFormatError):
    """A blob's stored SHA-256 does not match its payload."""
