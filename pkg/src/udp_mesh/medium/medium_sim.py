from ..errors import NoLink
from ..simnet.network import SimNetwork, address_of
from .base import Address, Medium


class SimMedium(Medium):
    """Medium backed by the simulated network; addresses are (node name, 0)."""

    def __init__(self, network: SimNetwork, name: str):
        self.network = network
        self.name = name
        self.send_failures = 0

    @property
    def local_address(self) -> Address:
        return address_of(self.name)

    def send(self, datagram: bytes, address: Address) -> None:
        try:
            self.network.deliver(datagram, self.name, address[0], self.network.clock.now())
        except NoLink:
            # unlinked destinations drop silently
            self.send_failures += 1

    def broadcast(self, datagram: bytes) -> None:
        self.network.broadcast_deliver(datagram, self.name, self.network.clock.now())
