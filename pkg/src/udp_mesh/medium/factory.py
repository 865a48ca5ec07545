from .base import Medium
from .medium_sim import SimMedium
from .medium_udp import UdpMedium


class MediumFactory:
    """Factory to create datagram media based on configuration"""

    @staticmethod
    def create_medium(medium_type: str = "udp", **kwargs) -> Medium:
        """
        Create a medium.

        Args:
            medium_type: Either "udp" or "sim"
            **kwargs: Additional arguments for the medium

        Returns:
            A medium instance
        """
        if medium_type == "udp":
            return UdpMedium(
                bind_host=kwargs.pop("bind_host", "0.0.0.0"),
                port=kwargs.pop("port", 4950),
                broadcast_address=kwargs.pop("broadcast_address", "255.255.255.255"),
                broadcast_port=kwargs.pop("broadcast_port", None),
                static_peers=kwargs.pop("static_peers", ()),
            )
        elif medium_type == "sim":
            return SimMedium(network=kwargs.pop("network"), name=kwargs.pop("name"))
        else:
            raise ValueError(f"Unknown medium type: {medium_type}")
