import time
from abc import ABC, abstractmethod
from typing import Tuple

Address = Tuple[str, int]


class Medium(ABC):
    """Abstract base class for datagram media the protocol core can send on"""

    #: datagrams the medium could not hand off; sends never raise
    send_failures: int = 0

    @abstractmethod
    def send(self, datagram: bytes, address: Address) -> None:
        """
        Send one datagram to one peer.

        Args:
            datagram: Encoded envelope, at most one MTU
            address: Transport address of the receiver
        """
        pass

    @abstractmethod
    def broadcast(self, datagram: bytes) -> None:
        """
        Send one datagram to every node in the broadcast domain.

        Args:
            datagram: Encoded envelope, at most one MTU
        """
        pass

    @property
    @abstractmethod
    def local_address(self) -> Address:
        pass

    def close(self) -> None:
        pass


class Clock(ABC):
    """Time source. The protocol core never reads it directly; callers pass `now`."""

    @abstractmethod
    def now(self) -> float:
        pass


class MonotonicClock(Clock):
    def now(self) -> float:
        return time.monotonic()
