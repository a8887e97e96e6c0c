"""Exception hierarchy shared across the package.

The split matters for the CLI: configuration/usage problems exit with
code 2, runtime numeric/data failures with code 3.
"""


class HC2Error(Exception):
    """Base class for all package errors."""


class ConfigError(HC2Error):
    """Invalid configuration or argument value (CLI exit code 2)."""


class DimensionError(HC2Error):
    """Shape mismatch between operands; message names both shapes."""


class ContractError(HC2Error):
    """A documented precondition was violated by the caller."""


class GraphError(HC2Error):
    """Malformed differentiation graph (cycle, repeated backward)."""


class NumericError(HC2Error):
    """Non-finite value where a finite one is required (CLI exit code 3)."""


class DataError(HC2Error):
    """Malformed or inconsistent input data (CLI exit code 3)."""
