import logging
import select
import socket
from typing import Iterable, List, Optional, Tuple

from ..errors import BindFailure
from .base import Address, Medium

log = logging.getLogger(__name__)

RECV_BUFFER = 2048


class UdpMedium(Medium):
    """
    Real UDP sockets. Broadcast goes to the directed-broadcast address and to
    every configured static peer, so networks that block broadcast still see
    heartbeats.
    """

    def __init__(
        self,
        bind_host: str = "0.0.0.0",
        port: int = 4950,
        broadcast_address: Optional[str] = "255.255.255.255",
        broadcast_port: Optional[int] = None,
        static_peers: Iterable[Address] = (),
    ):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_BROADCAST, 1)
        try:
            self.sock.bind((bind_host, port))
        except OSError as exc:
            self.sock.close()
            raise BindFailure(f"cannot bind {bind_host}:{port}: {exc.strerror}") from None

        self._address: Address = self.sock.getsockname()
        self.broadcast_address = broadcast_address
        self.broadcast_port = broadcast_port or self._address[1]
        self.static_peers: List[Address] = list(static_peers)
        self.send_failures = 0

    @property
    def local_address(self) -> Address:
        return self._address

    def add_static_peer(self, address: Address) -> None:
        if address not in self.static_peers:
            self.static_peers.append(address)

    def send(self, datagram: bytes, address: Address) -> None:
        try:
            self.sock.sendto(datagram, address)
        except OSError as exc:
            # counted, never raised
            self.send_failures += 1
            log.debug("send failed address=%s:%s error=%s", address[0], address[1], exc.strerror)

    def broadcast(self, datagram: bytes) -> None:
        if self.broadcast_address:
            self.send(datagram, (self.broadcast_address, self.broadcast_port))
        for peer in self.static_peers:
            self.send(datagram, peer)

    def receive(self, timeout: float) -> Optional[Tuple[bytes, Address]]:
        """Block up to `timeout` seconds for one datagram."""
        try:
            readable, _, _ = select.select([self.sock], [], [], timeout)
            if not readable:
                return None
            data, address = self.sock.recvfrom(RECV_BUFFER)
        except (ConnectionRefusedError, ConnectionResetError):
            # ICMP unreachable from an earlier send to a closed port
            return None
        except (OSError, ValueError):
            if self.sock.fileno() == -1:
                return None
            raise
        return data, address

    def close(self) -> None:
        self.sock.close()
