"""Exception hierarchy shared across the package."""

from __future__ import annotations


class BestEffortError(Exception):
    """Base class for every error raised by this package."""


class ChannelClosed(BestEffortError):
    """Raised when an endpoint is used after its channel was closed."""


class ChannelTimeout(BestEffortError, TimeoutError):
    """A blocking put/step gave up after its timeout elapsed."""


class WouldDeadlock(BestEffortError):
    """A blocking call on a same-thread duct could never be satisfied."""


class RemoteEndpoint(BestEffortError):
    """The requested side of a channel lives in another process."""


class ConfigurationError(BestEffortError, ValueError):
    """Invalid construction parameters or an unusable backend choice."""


class SetupError(ConfigurationError):
    """Channel instantiation failed, e.g. because a peer rank is unreachable."""


class FrameError(BestEffortError, ValueError):
    """Malformed wire data.

    Attributes:
        offset: byte offset at which decoding failed.
    """

    def __init__(self, message: str, offset: int = 0) -> None:
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class RoutingError(BestEffortError):
    """A consolidated frame did not match its receiver's membership."""


class TransportError(BestEffortError):
    """Transport-level failure such as an unreachable or vanished peer."""


class BarrierError(BestEffortError):
    """A collective operation timed out or a participant disconnected."""


class LoadError(BestEffortError, ValueError):
    """A text input file could not be parsed.

    Attributes:
        line: 1-based line number of the offending line, or ``None``.
    """

    def __init__(self, message: str, line: int | None = None) -> None:
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.line = line


class UsageError(BestEffortError, ValueError):
    """Invalid command-line arguments."""
