"""Exception hierarchy shared across the pipeline.

The CLI maps these to exit codes: FormatError/ValidationError -> 1,
ConfigError -> 2, BackendError -> 3.
"""


class BioelinkError(Exception):
    pass


class FormatError(BioelinkError):
    """A file did not match its declared on-disk format."""


class ValidationError(BioelinkError):
    """An invariant or precondition was violated."""


class UnknownIdError(ValidationError):
    """Lookup of an id that is not present."""


class InsufficientPopulationError(ValidationError):
    """Negative sampling asked for more entities than are available."""


class UnparseableRankingError(ValidationError):
    """Model output matched none of the candidates."""


class ConfigError(BioelinkError):
    """Bad configuration: missing paths, out-of-range values, unknown options."""


class BackendError(BioelinkError):
    """A completion backend failed after retries, or returned garbage."""


class AuthError(BackendError):
    """Authentication rejected; never retried."""
