"""Exception hierarchy shared by every module."""


class CortexWaveError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""


class ParameterError(CortexWaveError, ValueError):
    pass


class InfeasibleSpacing(CortexWaveError):
    pass


class DimensionMismatch(CortexWaveError, ValueError):
    pass


class EmptyProfile(CortexWaveError, ValueError):
    pass


class InvalidRange(CortexWaveError, ValueError):
    pass


class IndexOutOfRange(CortexWaveError, IndexError):
    pass


class MemoryCapacityExceeded(CortexWaveError):
    def __init__(self, neuron: int, capacity: int):
        super().__init__(f"neuron {neuron} would exceed memory capacity {capacity}")
        self.neuron = neuron
        self.capacity = capacity


class NonCompactPattern(CortexWaveError, ValueError):
    pass


class GeometryMismatch(CortexWaveError, ValueError):
    pass


class WaveDamped(CortexWaveError):
    """Clamped source went silent for ``t_relax`` ticks or never left its neighbourhood."""


class NotConverged(CortexWaveError):
    """Training hit its emission budget without a repeated emission."""


class InsufficientData(CortexWaveError, ValueError):
    pass


class SnapshotFormatError(CortexWaveError, ValueError):
    pass


class ConfigError(CortexWaveError, ValueError):
    """Bad config text; the message names the offending line."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class UnknownKey(ConfigError):
    pass


class DuplicateKey(ConfigError):
    pass


class ConfigTypeError(ConfigError, TypeError):
    pass


class RangeError(ConfigError):
    pass
