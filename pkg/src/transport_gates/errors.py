"""Exception types raised across the toolkit."""


class TransportGateError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgument(TransportGateError, ValueError):
    pass


class OutOfRange(TransportGateError, ValueError):
    pass


class BasisParseError(TransportGateError):
    """Malformed basis file. Carries the offending row/column when known."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class SynthesisError(TransportGateError):
    def __init__(self, message, timestep=None):
        if timestep is not None:
            message = f"{message} (timestep {timestep})"
        super().__init__(message)
        self.timestep = timestep


class TrackingError(TransportGateError):
    def __init__(self, message, timestep=None):
        if timestep is not None:
            message = f"{message} (timestep {timestep})"
        super().__init__(message)
        self.timestep = timestep


class EscapeError(TransportGateError):
    def __init__(self, message, time=None):
        if time is not None:
            message = f"{message} (t = {time:.6g} s)"
        super().__init__(message)
        self.time = time


class SequencingError(TransportGateError):
    def __init__(self, message, element=None):
        if element is not None:
            message = f"element {element}: {message}"
        super().__init__(message)
        self.element = element


class RankDeficiencyError(TransportGateError):
    def __init__(self, message, parameters=()):
        if parameters:
            message = f"{message}: {', '.join(parameters)}"
        super().__init__(message)
        self.parameters = tuple(parameters)


class BracketError(TransportGateError):
    pass


class ConfigError(TransportGateError):
    pass
