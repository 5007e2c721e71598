"""Shared exception types."""


class SpecRecError(Exception):
    """Base class for package errors."""


class CodebookError(SpecRecError):
    """Codebook fitting failed (degenerate input, bad shapes)."""


class CapacityError(SpecRecError):
    """Identification-token vocabulary exhausted for a semantic prefix."""


class CapabilityError(SpecRecError):
    """A scorer lacks a capability required by the requested mode."""


class FormatError(SpecRecError):
    """An artifact file is malformed or inconsistent with its header."""
