"""Exception hierarchy shared by every layer of the engine."""


class MinimrError(Exception):
    """Base class for engine errors."""


class ConfigError(MinimrError, ValueError):
    """Invalid construction parameters or CLI configuration."""


class DecodeError(MinimrError, ValueError):
    """A serialized entry batch is truncated or malformed."""


class TransportError(MinimrError):
    """A collective exchange failed.

    ``peer`` names the node whose connection or frame was at fault when
    that is known.
    """

    def __init__(self, message: str, peer: int | None = None) -> None:
        super().__init__(message if peer is None else f"node {peer}: {message}")
        self.peer = peer


class NodeFailure(MinimrError):
    """A node of a simulated cluster raised; the original error is ``__cause__``."""

    def __init__(self, node_id: int, error: BaseException) -> None:
        super().__init__(f"node {node_id} failed: {error!r}")
        self.node_id = node_id
        self.error = error
