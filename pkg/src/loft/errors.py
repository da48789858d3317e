"""Exception hierarchy shared across the toolkit."""


class LoftError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(LoftError, ValueError):
    """Malformed arguments: bad shapes, non-finite entries, empty inputs."""


class NumericalFailure(LoftError, ArithmeticError):
    """An iterative routine failed to converge or produced non-finite values."""


class DegenerateDirectionError(NumericalFailure):
    """A matrix that must have full column rank does not."""


class DegenerateCovarianceError(InvalidInputError):
    """A covariance with zero trace (empty split or constant features)."""


class FormatError(LoftError, ValueError):
    """A file does not follow its declared binary or text layout."""

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        parts = []
        if path is not None:
            parts.append(str(path))
        if offset is not None:
            parts.append(f"byte {offset}")
        prefix = ": ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)
