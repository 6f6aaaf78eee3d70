"""Shared exception types mapped to CLI exit codes."""


class FormatError(ValueError):
    """A file (manifest, frame file, ARPA model, checkpoint) failed to parse
    or violates its declared structure."""


class NumericError(RuntimeError):
    """Training or decoding produced a non-finite quantity."""
