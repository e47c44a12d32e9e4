"""
Exception hierarchy for plugnet.

Protocol rejections are values on the wire (ErrorResponse) and become
exceptions only at the driver-level operation that waited for the answer.
"""

from typing import Optional


class PlugNetError(Exception):
    """Base class for all plugnet errors."""


class InvalidKey(PlugNetError, ValueError):
    """Key material is empty or longer than 64 bytes."""


class WrongKeyRole(PlugNetError):
    """A key was used for an operation reserved to another key role."""


class InvalidMac(PlugNetError, ValueError):
    """A MAC address is not exactly six octets."""


class EmptyInput(PlugNetError, ValueError):
    """An analysis routine received no bytes."""


class ParseError(PlugNetError):
    """Malformed wire bytes or trace line."""

    def __init__(self, message: str, offset: Optional[int] = None, line: Optional[int] = None):
        location = []
        if line is not None:
            location.append(f"line {line}")
        if offset is not None:
            location.append(f"offset {offset}")
        suffix = f" ({', '.join(location)})" if location else ""
        super().__init__(f"{message}{suffix}")
        self.offset = offset
        self.line = line


class AddressError(PlugNetError):
    """Unknown node, or an address operation that does not apply to the node."""


class LifecycleError(PlugNetError):
    """Operation not allowed in the current state of the network or actor."""


class ChannelError(PlugNetError):
    """Message sent over a channel the two endpoints cannot use."""


class ConfigError(PlugNetError):
    """Invalid scenario configuration."""


class ProtocolRejection(PlugNetError):
    """A peer refused a request. ``reason`` is the wire-level reason string."""

    def __init__(self, reason: str, subject: str = ""):
        super().__init__(f"{type(self).__name__}: {reason}" + (f" [{subject}]" if subject else ""))
        self.reason = reason
        self.subject = subject


class BindRejected(ProtocolRejection):
    pass


class AuthRejected(ProtocolRejection):
    pass


class NotBound(ProtocolRejection):
    pass


class Unavailable(ProtocolRejection):
    pass


class AllocationDenied(ProtocolRejection):
    pass
