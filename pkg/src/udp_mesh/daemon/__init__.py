import logging
import os

import uvicorn

from ..config import NodeConfig
from .control import create_app
from .local_bus import BusClient, LocalBusServer
from .runtime import DaemonRuntime

__all__ = ["BusClient", "DaemonRuntime", "LocalBusServer", "create_app", "serve"]

log = logging.getLogger(__name__)


def serve(config: NodeConfig) -> int:
    """
    Run the node until SIGINT or SIGTERM.

    uvicorn owns the main thread and its signal handlers; once it returns,
    in-flight transfers are aborted and both local sockets removed.
    """
    logging.basicConfig(
        level=config.log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    runtime = DaemonRuntime(config)
    bus = LocalBusServer(config.bus_socket, runtime)
    runtime.start()
    bus.start()
    if os.path.exists(config.control_socket):
        os.unlink(config.control_socket)
    try:
        uvicorn.run(
            create_app(runtime),
            uds=config.control_socket,
            log_level=config.log_level.lower(),
        )
    finally:
        bus.stop()
        runtime.stop()
        if os.path.exists(config.control_socket):
            os.unlink(config.control_socket)
    return 0
