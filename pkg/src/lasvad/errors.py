"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: validation/configuration problems
exit 2, data-format problems exit 3, numeric failures exit 4.
"""


class LasVadError(Exception):
    """Base class for all package-specific errors."""


class FormatError(LasVadError):
    """A file does not conform to its on-disk format (bad magic, truncated
    payload, malformed manifest line, misaligned text-bank files)."""


class ValidationError(LasVadError):
    """Input data violates a documented invariant."""


class DegenerateInputError(ValidationError):
    """An operation that needs nonzero rows (cosine similarity) received a
    zero row."""


class UndefinedMetricError(ValidationError):
    """A metric was requested on inputs where it is mathematically undefined
    (e.g. AUC with a single class present)."""


class ConfigurationError(LasVadError):
    """Configuration values are inconsistent with each other or the data
    (e.g. checkpoint feature dimension does not match the corpus)."""


class NumericError(LasVadError):
    """A non-finite value appeared where the pipeline requires finite ones."""
