from typing import Optional


class MeshError(Exception):
    """Base class for every error raised by udp_mesh"""


# Wire


class WireError(MeshError):
    pass


class OversizeTopic(WireError):
    pass


class OversizePayload(WireError):
    pass


class DecodeError(WireError):
    """
    Raised for datagrams that fail validation.

    The node never lets these escape: the datagram is dropped silently and
    the error is counted by class name.
    """


class BadMagic(DecodeError):
    pass


class BadVersion(DecodeError):
    pass


class UnknownKind(DecodeError):
    pass


class Truncated(DecodeError):
    pass


class InconsistentLength(DecodeError):
    pass


class BadHeartbeat(DecodeError):
    pass


class FragmentedBroadcast(DecodeError):
    """BcastData always travels as one datagram"""


# Peers


class NotFound(MeshError):
    pass


class AckFromUnknownPeer(MeshError):
    pass


# Reliable transport


class UnknownPeer(MeshError):
    pass


class PeerOffline(MeshError):
    pass


class UnknownTransfer(MeshError):
    pass


# Topics


class UnknownTopic(MeshError):
    pass


class DuplicateTopicName(MeshError):
    pass


# Simulation and configuration


class NoLink(MeshError):
    pass


class InvalidScenario(MeshError):
    def __init__(self, message: str, location: Optional[str] = None, line: Optional[int] = None):
        self.location = location
        self.line = line
        where = []
        if location:
            where.append(f"location={location}")
        if line is not None:
            where.append(f"line={line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class ConfigError(MeshError):
    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(f"field={field}")
        if line is not None:
            where.append(f"line={line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class BindFailure(MeshError):
    pass


# Daemon


class BusError(MeshError):
    """Malformed local bus frame, or an error result returned by the daemon"""
