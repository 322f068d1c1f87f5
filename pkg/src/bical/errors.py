"""Exception and warning types shared across the package."""


class BicalError(Exception):
    """Base class for all package errors."""


class InvalidInput(BicalError, ValueError):
    pass


class DegenerateVector(BicalError, ValueError):
    """A zero vector was given where a direction or a mass is required."""


class InvalidState(BicalError, RuntimeError):
    pass


class MissingQuerySamples(BicalError, ValueError):
    def __init__(self, query_index):
        super().__init__(f"query {query_index} has no samples")
        self.query_index = query_index


class UnknownQuery(BicalError, KeyError):
    def __init__(self, query):
        super().__init__(query)
        self.query = query

    def __str__(self):
        return f"unknown query {self.query!r}"


class NonFiniteGradient(BicalError, FloatingPointError):
    def __init__(self, name, step=None):
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite gradient in {name!r}{where}")
        self.name = name
        self.step = step


class DegenerateLabels(BicalError, ValueError):
    pass


class ParseError(BicalError, ValueError):
    """Malformed artifact file; ``line`` / ``offset`` locate the problem."""

    def __init__(self, message, *, path=None, line=None, offset=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if offset is not None:
            loc.append(f"offset {offset}")
        prefix = ": ".join([", ".join(loc)]) + ": " if loc else ""
        super().__init__(prefix + message)
        self.path = path
        self.line = line
        self.offset = offset


class ConfigError(BicalError, ValueError):
    """Bad configuration; ``key`` names the offending setting when there is one."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class NumericalFloorWarning(RuntimeWarning):
    """A probability was clamped to the log floor when computing a loss."""
