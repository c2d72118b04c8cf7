"""Exception hierarchy shared across the package."""
from __future__ import annotations


class PhaseBridgeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PhaseBridgeError):
    """Invalid configuration, unknown phase id, or unusable file contents."""


class ActionError(PhaseBridgeError):
    """A control action is malformed (missing fields, fraction out of range, ...)."""


class ConflictError(PhaseBridgeError):
    """A requested phase combination is not admissible under the ring/barrier rules."""


class SequenceError(PhaseBridgeError):
    """A phase pair does not appear in the configured service sequence."""


class EncodeError(PhaseBridgeError):
    """A wire message cannot be serialized (payload too long, field out of range)."""


class StateError(PhaseBridgeError):
    """An operation was attempted in a manager mode that does not permit it."""


class TransportSendError(PhaseBridgeError):
    """The local socket refused to transmit; the link itself is down."""
