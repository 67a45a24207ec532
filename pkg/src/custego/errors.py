"""Exception types shared across the package.

The CLI maps these onto exit codes: format problems -> 2, capacity -> 3,
extraction -> 4.
"""


class FormatError(ValueError):
    """Malformed file, header or bitstream."""


class CapacityError(ValueError):
    """Message does not fit into the available carriers."""


class InfeasibleError(RuntimeError):
    """STC could not satisfy the syndrome without touching a wet position."""


class ExtractionError(RuntimeError):
    """Extraction is impossible with the information supplied."""
