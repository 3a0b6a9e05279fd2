"""Exception hierarchy and CLI exit codes."""


class AdaptiveDsseError(Exception):
    """Base class for all package errors."""


class ConfigError(AdaptiveDsseError):
    """Bad configuration: missing files, schema violations, invalid values."""


class NetworkValidationError(ConfigError):
    """Network file violates a structural invariant (cycle, disconnection, ...)."""


class PowerFlowError(AdaptiveDsseError):
    """Power flow failed to converge."""

    def __init__(self, message, t_us=None):
        super().__init__(message)
        self.t_us = t_us


class CodecError(AdaptiveDsseError):
    """Base class for frame encode/decode failures."""


class BadSyncError(CodecError):
    """First byte is not 0xAA."""


class CrcMismatchError(CodecError):
    """Frame checksum does not match its contents."""


class FrameTruncatedError(CodecError):
    """Fewer bytes than FRAMESIZE announces."""


class FrameSizeMismatchError(CodecError):
    """FRAMESIZE disagrees with the actual frame layout."""


class UnknownFrameTypeError(CodecError):
    """SYNC second byte carries an unsupported frame type."""


class FieldRangeError(CodecError):
    """A field value cannot be represented on the wire."""


class TransportError(AdaptiveDsseError):
    """Socket / HTTP transport failure."""


class StreamDesyncError(TransportError):
    """Persistent garbage on a frame stream exceeded the resync limit."""


class MonotonicityError(AdaptiveDsseError):
    """Out-of-order or duplicate sample timestamp fed to a rate controller."""


class EstimationError(AdaptiveDsseError):
    """State estimation failure."""


class ObservabilityError(EstimationError):
    """Measurement model is rank deficient."""

    def __init__(self, message, unconstrained=None):
        super().__init__(message)
        self.unconstrained = list(unconstrained or [])


class DegenerateVoltageError(EstimationError):
    """Reference voltage is too low to linearize a power pseudo-measurement."""


# CLI exit codes (0 = success).
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_TRANSPORT = 4
EXIT_ESTIMATION = 5
