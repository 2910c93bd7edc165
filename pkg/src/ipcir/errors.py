"""Exception hierarchy shared by all ipcir modules.

Exit-code mapping used by the CLI:
  2  configuration / argument errors
  3  data, format, shape, and resolution errors
  4  evaluation-protocol errors
"""


class IpcirError(Exception):
    exit_code = 1


class ConfigError(IpcirError):
    """Bad run configuration (missing paths, malformed flag values)."""

    exit_code = 2


class ArgumentError(ConfigError, ValueError):
    """Invalid argument to a library operation (empty list, k=0, ...)."""


class DataError(IpcirError):
    """Input data violates an invariant (NaN rows, dangling ids, ...)."""

    exit_code = 3


class FormatError(DataError):
    """A binary or structured file does not match its declared format."""


class RoleError(DataError):
    """An embedding set file carries a different role than expected."""


class ShapeError(DataError):
    """Dimension or length mismatch between values that must agree."""


class ResolutionError(DataError):
    """An id reference does not resolve to any known entry."""


class SizeError(DataError):
    """An instance exceeds the size limit of the requested operation."""


class LayoutParseError(DataError):
    """Layout document is not parseable; carries the byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class LayoutValidationError(DataError):
    """Layout document parsed but violates the schema; carries all findings."""

    def __init__(self, violations):
        lines = "; ".join(str(v) for v in violations)
        super().__init__(f"{len(violations)} layout violation(s): {lines}")
        self.violations = list(violations)


class ProtocolError(IpcirError):
    """Evaluation protocol violated (empty ground truth, GT outside subset)."""

    exit_code = 4


class DegenerateProxyWarning(UserWarning):
    """Raised when a robust proxy is built from an all-zero proxy feature."""
