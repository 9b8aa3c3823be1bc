"""Error taxonomy shared by the pipeline and the CLI exit codes."""


class RulkitError(Exception):
    """Base class for reportable failures."""


class UsageError(RulkitError):
    """Bad flags or bad invocation (CLI exit code 1)."""


class DataError(RulkitError):
    """Malformed or inconsistent input data (CLI exit code 2)."""


class NumericError(RulkitError):
    """Numeric failure such as divergence or non-finite values (CLI exit code 3)."""
