from .config import NodeConfig, TopicConfig, load_node_config
from .errors import MeshError
from .node import MeshNode

__all__ = ["MeshError", "MeshNode", "NodeConfig", "TopicConfig", "load_node_config"]
