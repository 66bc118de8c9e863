"""Exception types shared across the package.

The CLI maps these onto process exit codes, so trainer code should raise
the most specific type that applies.
"""


class EffclError(Exception):
    """Base class for package errors."""


class ConfigError(EffclError):
    """Invalid, malformed, or contradictory configuration."""


class CorpusError(EffclError):
    """Corpus or vocabulary file cannot be read or is malformed."""


class NumericalError(EffclError):
    """A numerical computation produced non-finite or non-convergent results."""
